#include <gtest/gtest.h>

#include "lesyn/data/toy.hpp"
#include "lesyn/var/pipeline.hpp"
#include "test_util.hpp"

using namespace lesyn;
using lesyn::test::TempDir;

namespace {

var::VarConfig tiny_config(int num_classes = 3) {
    var::VarConfig cfg;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.width = 16;
    cfg.vocab = 5;
    cfg.code_dim = 3;
    cfg.scales = {{1, 1}, {2, 2}};
    cfg.num_classes = num_classes;
    cfg.cond_tokens = 2;
    cfg.conditioning = var::MeasurementConditioning::extracted;
    cfg.seed = 11;
    return cfg;
}

template <typename T>
var::VarModel<T> tiny_model(const var::VarConfig& cfg, uint64_t cb_seed = 21) {
    Rng rng(cb_seed);
    Tensor<T> cb = Tensor<T>::randn({cfg.vocab, cfg.code_dim}, rng);
    std::vector<std::string> names;
    for (int c = 0; c < cfg.num_classes; ++c) names.push_back("cls" + std::to_string(c));
    return var::VarModel<T>(cfg, cb, names);
}

tok::TokenPyramid random_pyramid(const tok::ScaleList& scales, int64_t vocab, Rng& rng) {
    tok::TokenPyramid p;
    p.scales = scales;
    for (const auto& [h, w] : scales) {
        std::vector<int32_t> g(static_cast<size_t>(h * w));
        for (auto& v : g) v = static_cast<int32_t>(rng.uniform_int(static_cast<uint64_t>(vocab)));
        p.grids.push_back(g);
    }
    return p;
}

measure::MeasurementVector rand_meas(Rng& rng) {
    measure::MeasurementVector v;
    for (size_t i = 0; i < measure::kNumMeasurements; ++i) v[i] = rng.normal();
    return v;
}

}  // namespace

TEST(ScaleSequence, FlattenAndCoordinates) {
    tok::TokenPyramid p;
    p.scales = {{1, 1}, {2, 2}};
    p.grids = {{3}, {0, 1, 2, 4}};
    const auto s = var::flatten_pyramid(p, 2);
    EXPECT_EQ(s.tokens.size(), 7u);  // 2 + 1 + 4
    EXPECT_EQ(s.tokens[0], -1);
    EXPECT_EQ(s.tokens[2], 3);
    // position 3 is the first token of the second scale
    EXPECT_EQ(s.coords[3].scale, 1);
    EXPECT_EQ(s.coords[3].row, 0);
    EXPECT_EQ(s.coords[3].col, 0);
    EXPECT_EQ(s.coords[6].row, 1);
    EXPECT_EQ(s.coords[6].col, 1);
    const auto back = var::unflatten_sequence(s);
    EXPECT_TRUE(back == p);
}

TEST(NextScaleLoss, UniformOneHotAndHandCase) {
    tok::TokenPyramid p;
    p.scales = {{1, 1}, {2, 2}};
    p.grids = {{2}, {0, 1, 3, 2}};
    // uniform logits -> ln V
    auto uniform = ag::constant(Tensor<double>({5, 4}, 0.3));
    EXPECT_NEAR(var::next_scale_loss(uniform, p)->value[0], std::log(4.0), 1e-12);
    // near-one-hot logits at the targets -> ~0
    Tensor<double> sharp({5, 4}, 0.0);
    const std::vector<int64_t> flat = {2, 0, 1, 3, 2};
    for (int64_t i = 0; i < 5; ++i) sharp.at2(i, flat[static_cast<size_t>(i)]) = 60.0;
    EXPECT_NEAR(var::next_scale_loss(ag::constant(sharp), p)->value[0], 0.0, 1e-12);
    // hand-computed 3-token softmax cross-entropy
    tok::TokenPyramid q;
    q.scales = {{1, 3}};
    q.grids = {{0, 2, 1}};
    Tensor<double> logits({3, 3});
    const double vals[3][3] = {{1.0, 2.0, 3.0}, {0.5, -1.0, 0.25}, {-2.0, 0.0, 2.0}};
    double expect = 0;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) logits.at2(i, j) = vals[i][j];
        const int t = q.grids[0][static_cast<size_t>(i)];
        double denom = 0;
        for (int j = 0; j < 3; ++j) denom += std::exp(vals[i][j]);
        expect += std::log(denom) - vals[i][t];
    }
    expect /= 3.0;
    EXPECT_NEAR(var::next_scale_loss(ag::constant(logits), q)->value[0], expect, 1e-6);
    // bad target
    tok::TokenPyramid bad = q;
    bad.grids[0][1] = 3;
    EXPECT_THROW(var::next_scale_loss(ag::constant(logits), bad), std::out_of_range);
}

TEST(VarModel, ForwardShapesAndDeterminism) {
    const auto cfg = tiny_config();
    auto model = tiny_model<double>(cfg);
    Rng rng(1);
    const auto pyr = random_pyramid(cfg.scales, cfg.vocab, rng);
    const auto v = rand_meas(rng);
    auto cond = model.condition_rows(1, &v);
    auto logits = model.forward_train(cond, pyr);
    EXPECT_EQ(logits->value.dim(0), 5);  // 1 + 4 token positions
    EXPECT_EQ(logits->value.dim(1), cfg.vocab);
    auto logits2 = model.forward_train(model.condition_rows(1, &v), pyr);
    for (int64_t i = 0; i < logits->value.numel(); ++i) ASSERT_EQ(logits->value[i], logits2->value[i]);

    tok::TokenPyramid wrong = pyr;
    wrong.scales = {{1, 1}, {3, 3}};
    EXPECT_THROW(model.forward_train(cond, wrong), std::invalid_argument);
}

TEST(VarModel, BlockCausalGradients) {
    // gradient of scale-k logits w.r.t. scale-j token grids: zero for j >= k,
    // nonzero for some j < k
    const auto cfg = tiny_config();
    auto model = tiny_model<double>(cfg);
    Rng rng(2);
    std::vector<ag::NodeRef<double>> grids;
    for (const auto& [h, w] : cfg.scales)
        grids.push_back(ag::param(Tensor<double>::randn({1, cfg.code_dim, h, w}, rng)));
    const auto v = rand_meas(rng);

    for (int k = 0; k < 2; ++k) {
        for (auto& g : grids) {
            g->zero_grad();
            g->ensure_grad();
        }
        auto cond = model.condition_rows(0, &v);
        auto logits = model.forward_scales(cond, grids, 2);
        const int64_t row0 = k == 0 ? 0 : 1;
        const int64_t nrows = k == 0 ? 1 : 4;
        auto target = ag::sum_all(ag::slice_rows(logits, row0, nrows));
        ag::backward(target);
        for (int j = 0; j < 2; ++j) {
            double norm = 0;
            for (int64_t i = 0; i < grids[static_cast<size_t>(j)]->grad.numel(); ++i)
                norm += std::abs(grids[static_cast<size_t>(j)]->grad[i]);
            if (j >= k) {
                EXPECT_EQ(norm, 0.0) << "scale " << k << " logits must not depend on scale " << j;
            } else {
                EXPECT_GT(norm, 0.0) << "scale " << k << " logits should depend on scale " << j;
            }
        }
    }
}

TEST(VarModel, PerturbationProbesAgreeWithCausality) {
    const auto cfg = tiny_config();
    auto model = tiny_model<double>(cfg);
    Rng rng(3);
    const auto pyr = random_pyramid(cfg.scales, cfg.vocab, rng);
    const auto v = rand_meas(rng);
    auto base = model.forward_train(model.condition_rows(2, &v), pyr);

    // perturbing a scale-1 (second scale) token changes nothing: it is never an input
    tok::TokenPyramid p2 = pyr;
    p2.grids[1][0] = (p2.grids[1][0] + 1) % cfg.vocab;
    auto l2 = model.forward_train(model.condition_rows(2, &v), p2);
    for (int64_t i = 0; i < base->value.numel(); ++i) ASSERT_EQ(base->value[i], l2->value[i]);

    // perturbing the scale-0 token leaves scale-0 logits unchanged but changes scale-1 logits
    tok::TokenPyramid p3 = pyr;
    p3.grids[0][0] = (p3.grids[0][0] + 1) % cfg.vocab;
    auto l3 = model.forward_train(model.condition_rows(2, &v), p3);
    for (int64_t j = 0; j < cfg.vocab; ++j) ASSERT_EQ(base->value.at2(0, j), l3->value.at2(0, j));
    double delta = 0;
    for (int64_t i = 1; i < 5; ++i)
        for (int64_t j = 0; j < cfg.vocab; ++j) delta += std::abs(base->value.at2(i, j) - l3->value.at2(i, j));
    EXPECT_GT(delta, 0.0);
}

TEST(VarModel, ConditionSensitivity) {
    const auto cfg = tiny_config();
    auto model = tiny_model<double>(cfg);
    Rng rng(4);
    const auto pyr = random_pyramid(cfg.scales, cfg.vocab, rng);
    const auto v = rand_meas(rng);
    auto base = model.forward_train(model.condition_rows(0, &v), pyr);
    // different class -> scale-0 logits change
    auto other_cls = model.forward_train(model.condition_rows(1, &v), pyr);
    double d1 = 0;
    for (int64_t j = 0; j < cfg.vocab; ++j) d1 += std::abs(base->value.at2(0, j) - other_cls->value.at2(0, j));
    EXPECT_GT(d1, 0.0);
    // different measurements -> scale-0 logits change
    auto v2 = rand_meas(rng);
    auto other_meas = model.forward_train(model.condition_rows(0, &v2), pyr);
    double d2 = 0;
    for (int64_t j = 0; j < cfg.vocab; ++j) d2 += std::abs(base->value.at2(0, j) - other_meas->value.at2(0, j));
    EXPECT_GT(d2, 0.0);
}

TEST(VarModel, GenerateDeterministicAndShaped) {
    const auto cfg = tiny_config();
    auto model = tiny_model<double>(cfg);
    Rng rng(5);
    const auto v = rand_meas(rng);
    const auto cond = var::condition_values(model, 1, &v);
    var::SamplerConfig sc;
    sc.temperature = 1.0;
    sc.seed = 99;
    const auto p1 = model.generate(cond, sc);
    const auto p2 = model.generate(cond, sc);
    EXPECT_TRUE(p1 == p2);
    EXPECT_EQ(p1.scales, cfg.scales);
    for (size_t k = 0; k < p1.scales.size(); ++k)
        EXPECT_EQ(p1.grids[k].size(), static_cast<size_t>(p1.scales[k].first * p1.scales[k].second));
    var::SamplerConfig sc2 = sc;
    sc2.seed = 100;
    int diffs = 0;
    for (int rep = 0; rep < 5; ++rep) {
        sc2.seed = 100 + static_cast<uint64_t>(rep);
        diffs += !(model.generate(cond, sc2) == p1);
    }
    EXPECT_GT(diffs, 0);  // different seeds explore different pyramids
}

TEST(VarModel, LowTemperatureEqualsGreedyOracle) {
    const auto cfg = tiny_config();
    auto model = tiny_model<double>(cfg);
    Rng rng(6);
    const auto v = rand_meas(rng);
    const auto cond_vals = var::condition_values(model, 2, &v);

    // independent greedy decode: argmax at every position, smaller index on ties
    tok::TokenPyramid greedy;
    greedy.scales = cfg.scales;
    {
        ag::NoGradGuard ng;
        std::vector<ag::NodeRef<double>> grids;
        auto cond = ag::constant(cond_vals);
        for (size_t k = 0; k < cfg.scales.size(); ++k) {
            const auto [sh, sw] = cfg.scales[k];
            auto logits = model.forward_scales(cond, grids, static_cast<int>(k) + 1);
            const int64_t n = logits->value.dim(0);
            std::vector<int32_t> idx(static_cast<size_t>(sh * sw));
            for (int64_t i = 0; i < sh * sw; ++i) {
                const double* row = logits->value.data() + (n - sh * sw + i) * cfg.vocab;
                int32_t best = 0;
                for (int64_t j = 1; j < cfg.vocab; ++j)
                    if (row[j] > row[best]) best = static_cast<int32_t>(j);
                idx[static_cast<size_t>(i)] = best;
            }
            greedy.grids.push_back(idx);
            if (k + 1 < cfg.scales.size()) grids.push_back(model.grid_from_indices(idx, k));
        }
    }

    var::SamplerConfig cold;
    cold.temperature = 1e-6;
    cold.seed = 7;
    EXPECT_TRUE(model.generate(cond_vals, cold) == greedy);

    // top_k = 1 is greedy for every seed
    var::SamplerConfig topk;
    topk.top_k = 1;
    for (uint64_t s = 0; s < 5; ++s) {
        topk.seed = s;
        EXPECT_TRUE(model.generate(cond_vals, topk) == greedy);
    }
}

TEST(VarModel, SamplerFiltersAndValidation) {
    // top-p keeps the smallest prefix reaching the mass
    var::SamplerConfig sc;
    sc.top_p = 0.6;
    sc.temperature = 1.0;
    Rng rng(8);
    double logits[4] = {std::log(0.5), std::log(0.3), std::log(0.15), std::log(0.05)};
    std::vector<int> counts(4, 0);
    for (int i = 0; i < 200; ++i)
        ++counts[static_cast<size_t>(var::VarModel<double>::sample_logits(logits, 4, sc, rng))];
    EXPECT_GT(counts[0], 0);
    EXPECT_GT(counts[1], 0);
    EXPECT_EQ(counts[2], 0);  // cut by top-p (0.5 + 0.3 >= 0.6)
    EXPECT_EQ(counts[3], 0);
    var::SamplerConfig bad;
    bad.temperature = 0.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad.temperature = 1.0;
    bad.top_p = 0.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(VarModel, TrainingLearnsConstantPyramid) {
    // one class, one constant target pyramid: a tiny model must drive CE down
    var::VarConfig cfg = tiny_config(1);
    cfg.conditioning = var::MeasurementConditioning::fixed;
    cfg.epochs = 60;
    cfg.batch_size = 2;
    cfg.lr = 3e-3;
    auto model = tiny_model<float>(cfg);
    std::vector<var::VarTrainItem<float>> items;
    for (int i = 0; i < 2; ++i) {
        var::VarTrainItem<float> it;
        it.pyramid.scales = cfg.scales;
        it.pyramid.grids = {{2}, {1, 3, 1, 3}};
        it.label = 0;
        it.sample_id = "s" + std::to_string(i);
        items.push_back(it);
    }
    measure::MeasurementNormalizer norm;
    norm.std.fill(1.0);
    const auto report = var::train_var(model, items, norm, nullptr);
    ASSERT_EQ(report.epoch_loss.size(), static_cast<size_t>(cfg.epochs));
    EXPECT_LT(report.epoch_loss.back(), 0.25 * report.epoch_loss.front());
    // greedy generation reproduces the memorized pyramid
    var::SamplerConfig greedy;
    greedy.top_k = 1;
    greedy.seed = 1;
    const auto cond = var::condition_values(model, 0, &items[0].raw);
    auto v = var::fixed_measurement_vector();
    const auto cond_fixed = var::condition_values(model, 0, &v);
    const auto gen = model.generate(cond_fixed, greedy);
    EXPECT_EQ(gen.grids[0][0], 2);
    EXPECT_EQ(gen.grids[1], (std::vector<int32_t>{1, 3, 1, 3}));
    (void)cond;
}

TEST(Pipeline, SynthesizeIntraAndInterContracts) {
    // tiny tokenizer (32x32 -> 8x8 latent) + tiny VAR sharing its scales
    tok::VqVaeConfig tc;
    tc.height = tc.width = 32;
    tc.scales = {{1, 1}, {2, 2}, {4, 4}, {8, 8}};
    tc.vocab = 24;
    tc.code_dim = 4;
    tc.base_channels = 6;
    tc.epochs = 1;
    tc.batch_size = 4;
    tc.gan_warmup_epochs = 5;
    tc.seed = 3;
    tok::VqVae<float> tokenizer(tc);
    data::ToyDatasetSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 3;
    spec.height = spec.width = 32;
    std::vector<data::ImageSample> samples;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 3; ++i) samples.push_back(data::make_toy_sample(spec, c, i));
    tok::train_vqvae(tokenizer, samples);

    var::VarConfig vc;
    vc.depth = 1;
    vc.heads = 2;
    vc.width = 16;
    vc.vocab = tc.vocab;
    vc.code_dim = tc.code_dim;
    vc.scales = tc.scales;
    vc.num_classes = 2;
    vc.seed = 4;
    var::VarModel<float> model(vc, tokenizer.codebook().vectors, {"a", "b"});

    measure::MeasurementNormalizer norm;
    norm.std.fill(1.0);
    var::SamplerConfig sc;
    sc.seed = 17;

    const auto img1 = var::synthesize_intra(tokenizer, model, norm, samples[0].image, samples[0].mask, 0, sc);
    EXPECT_EQ(img1.shape(), (std::vector<int64_t>{3, 32, 32}));  // manifest resolution
    const auto img1b = var::synthesize_intra(tokenizer, model, norm, samples[0].image, samples[0].mask, 0, sc);
    for (int64_t i = 0; i < img1.numel(); ++i) ASSERT_EQ(img1[i], img1b[i]);  // fixed seed + input

    // same class, different measurements -> different F_q tokens
    const auto r1 = measure::extract_measurements(samples[0].image, samples[0].mask);
    const auto r2 = measure::extract_measurements(samples[1].image, samples[1].mask);
    const auto v1 = measure::normalize(r1, norm);
    const auto v2 = measure::normalize(r2, norm);
    const auto c1 = var::condition_values(model, 0, &v1);
    const auto c2 = var::condition_values(model, 0, &v2);
    double fq_delta = 0;
    for (int64_t i = 0; i < 16; ++i) {
        ASSERT_EQ(c1.at2(0, i), c2.at2(0, i));  // same class token
        fq_delta += std::abs(c1.at2(1, i) - c2.at2(1, i));
    }
    EXPECT_GT(fq_delta, 0.0);

    // inter-class path via the codebook
    cond::MeasurementCodebook cb({"a", "b"});
    for (const auto& s : samples) cb.update(s.label, measure::extract_measurements(s.image, s.mask));
    const auto img2 = var::synthesize_inter(tokenizer, model, norm, cb, 1, 0, sc);
    EXPECT_EQ(img2.shape(), (std::vector<int64_t>{3, 32, 32}));
    const auto img2b = var::synthesize_inter(tokenizer, model, norm, cb, 1, 0, sc);
    for (int64_t i = 0; i < img2.numel(); ++i) ASSERT_EQ(img2[i], img2b[i]);
    cond::MeasurementCodebook empty({"a", "b"});
    EXPECT_THROW(var::synthesize_inter(tokenizer, model, norm, empty, 1, 0, sc), std::runtime_error);
}

TEST(VarModel, SaveLoadRoundTrip) {
    TempDir td("var_ckpt");
    const auto cfg = tiny_config();
    auto model = tiny_model<double>(cfg);
    Rng rng(9);
    const auto pyr = random_pyramid(cfg.scales, cfg.vocab, rng);
    const auto v = rand_meas(rng);
    model.save(td.path() / "var");
    const auto loaded = var::VarModel<double>::load(td.path() / "var");
    auto l1 = model.forward_train(model.condition_rows(0, &v), pyr);
    auto l2 = loaded.forward_train(loaded.condition_rows(0, &v), pyr);
    for (int64_t i = 0; i < l1->value.numel(); ++i) ASSERT_EQ(l1->value[i], l2->value[i]);
}

TEST(VarModel, ConfigValidation) {
    var::VarConfig cfg = tiny_config();
    cfg.width = 15;  // not divisible by heads
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.cond_tokens = 1;  // class-only baseline must use conditioning=none
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg.conditioning = var::MeasurementConditioning::none;
    EXPECT_NO_THROW(cfg.validate());
}
