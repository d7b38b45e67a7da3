#include <gtest/gtest.h>

#include "lesyn/data/toy.hpp"
#include "lesyn/tokenizer/vqvae.hpp"
#include "test_util.hpp"

using namespace lesyn;
using lesyn::test::TempDir;
using lesyn::test::max_grad_rel_error;

namespace {

// ---- independent brute-force residual-cascade oracle ----
// Plain nested loops, no shared code with the implementation: area averaging by
// exact interval overlap, bilinear upsampling by the half-pixel formula, and
// nearest assignment by direct squared distances.

struct OracleResult {
    std::vector<std::vector<int32_t>> grids;
    Tensor<double> f_hat;
};

double overlap(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

Tensor<double> oracle_area_down(const Tensor<double>& x, int64_t h2, int64_t w2) {
    const int64_t d = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<double> out({d, h2, w2});
    const double sy = static_cast<double>(h) / h2, sx = static_cast<double>(w) / w2;
    for (int64_t c = 0; c < d; ++c)
        for (int64_t i = 0; i < h2; ++i)
            for (int64_t j = 0; j < w2; ++j) {
                double acc = 0;
                for (int64_t y = 0; y < h; ++y) {
                    const double oy = overlap(y, y + 1, i * sy, (i + 1) * sy);
                    if (oy <= 0) continue;
                    for (int64_t xx = 0; xx < w; ++xx) {
                        const double ox = overlap(xx, xx + 1, j * sx, (j + 1) * sx);
                        if (ox <= 0) continue;
                        acc += x.at3(c, y, xx) * oy * ox;
                    }
                }
                out.at3(c, i, j) = acc / (sy * sx);
            }
    return out;
}

Tensor<double> oracle_bilinear_up(const Tensor<double>& x, int64_t h2, int64_t w2) {
    const int64_t d = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<double> out({d, h2, w2});
    for (int64_t c = 0; c < d; ++c)
        for (int64_t i = 0; i < h2; ++i)
            for (int64_t j = 0; j < w2; ++j) {
                double sy = (i + 0.5) * static_cast<double>(h) / h2 - 0.5;
                double sx = (j + 0.5) * static_cast<double>(w) / w2 - 0.5;
                sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
                sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
                const int64_t y0 = static_cast<int64_t>(std::floor(sy));
                const int64_t x0 = static_cast<int64_t>(std::floor(sx));
                const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
                const double ty = sy - y0, tx = sx - x0;
                out.at3(c, i, j) = (1 - ty) * ((1 - tx) * x.at3(c, y0, x0) + tx * x.at3(c, y0, x1)) +
                                   ty * ((1 - tx) * x.at3(c, y1, x0) + tx * x.at3(c, y1, x1));
            }
    return out;
}

OracleResult oracle_cascade(const Tensor<double>& f, const Tensor<double>& codebook, const tok::ScaleList& scales) {
    const int64_t d = f.dim(0), h = f.dim(1), w = f.dim(2);
    const int64_t vocab = codebook.dim(0);
    OracleResult res;
    res.f_hat = Tensor<double>({d, h, w});
    Tensor<double> residual = f;
    for (const auto& [sh, sw] : scales) {
        const Tensor<double> rk = oracle_area_down(residual, sh, sw);
        std::vector<int32_t> grid(static_cast<size_t>(sh * sw));
        Tensor<double> qk({d, sh, sw});
        for (int64_t i = 0; i < sh; ++i)
            for (int64_t j = 0; j < sw; ++j) {
                double best = 1e300;
                int32_t best_v = 0;
                for (int64_t v = 0; v < vocab; ++v) {
                    double dist = 0;
                    for (int64_t c = 0; c < d; ++c) {
                        const double delta = rk.at3(c, i, j) - codebook.at2(v, c);
                        dist += delta * delta;
                    }
                    if (dist < best) {
                        best = dist;
                        best_v = static_cast<int32_t>(v);
                    }
                }
                grid[static_cast<size_t>(i * sw + j)] = best_v;
                for (int64_t c = 0; c < d; ++c) qk.at3(c, i, j) = codebook.at2(best_v, c);
            }
        const Tensor<double> uk = oracle_bilinear_up(qk, h, w);
        for (int64_t i = 0; i < residual.numel(); ++i) {
            residual[i] -= uk[i];
            res.f_hat[i] += uk[i];
        }
        res.grids.push_back(std::move(grid));
    }
    return res;
}

tok::MaskPyramid oracle_mask_pyramid(const Tensor<uint8_t>& mask, const tok::ScaleList& scales) {
    tok::MaskPyramid mp;
    mp.scales = scales;
    const int64_t h = mask.dim(0), w = mask.dim(1);
    for (const auto& [sh, sw] : scales) {
        std::vector<uint8_t> grid(static_cast<size_t>(sh * sw), 0);
        for (int64_t i = 0; i < sh; ++i)
            for (int64_t j = 0; j < sw; ++j) {
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x)
                        if (mask.at2(y, x) && y * sh / h == i && x * sw / w == j)
                            grid[static_cast<size_t>(i * sw + j)] = 1;
            }
        mp.grids.push_back(std::move(grid));
    }
    return mp;
}

std::vector<data::ImageSample> tiny_toy_samples(int classes, int per_class, int64_t res, uint64_t seed) {
    data::ToyDatasetSpec spec;
    spec.num_classes = classes;
    spec.samples_per_class = per_class;
    spec.height = spec.width = res;
    spec.seed = seed;
    std::vector<data::ImageSample> out;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) out.push_back(data::make_toy_sample(spec, c, i));
    return out;
}

tok::VqVaeConfig tiny_vqvae_config() {
    tok::VqVaeConfig cfg;
    cfg.height = cfg.width = 32;
    cfg.scales = {{1, 1}, {2, 2}, {4, 4}, {8, 8}};
    cfg.vocab = 64;
    cfg.code_dim = 8;
    cfg.base_channels = 8;
    cfg.epochs = 4;
    cfg.batch_size = 6;
    cfg.gan_warmup_epochs = 2;
    cfg.lambda_g = 0.05;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST(Quantizer, MatchesBruteForceOracle) {
    Rng rng(1);
    const tok::ScaleList scales = {{1, 1}, {2, 2}, {4, 4}};
    for (int trial = 0; trial < 120; ++trial) {
        const int64_t vocab = 2 + static_cast<int64_t>(rng.uniform_int(3));  // 2..4 rows
        Tensor<double> f = Tensor<double>::randn({2, 4, 4}, rng);
        tok::Codebook<double> cb{Tensor<double>::randn({vocab, 2}, rng)};
        const auto impl = tok::quantize_multiscale(f, cb, scales);
        const auto oracle = oracle_cascade(f, cb.vectors, scales);
        for (size_t k = 0; k < scales.size(); ++k)
            ASSERT_EQ(impl.pyramid.grids[k], oracle.grids[k]) << "trial " << trial << " scale " << k;
        for (int64_t i = 0; i < f.numel(); ++i) ASSERT_NEAR(impl.f_hat[i], oracle.f_hat[i], 1e-10);
    }
}

TEST(Quantizer, PerfectCodebookSingleScale) {
    Rng rng(2);
    Tensor<double> f = Tensor<double>::randn({3, 2, 2}, rng);
    // codebook contains every cell of f exactly
    Tensor<double> cb({4, 3});
    for (int64_t cell = 0; cell < 4; ++cell)
        for (int64_t c = 0; c < 3; ++c) cb.at2(cell, c) = f.at3(c, cell / 2, cell % 2);
    const auto res = tok::quantize_multiscale<double>(f, {cb}, {{2, 2}});
    for (int64_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(res.f_hat[i], f[i], 1e-12);
}

TEST(Quantizer, ZeroCodeUpperBound) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<double> f = Tensor<double>::randn({2, 3, 3}, rng);
        Tensor<double> cb({2, 2});
        cb.at2(1, 0) = rng.normal();
        cb.at2(1, 1) = rng.normal();  // row 0 stays the zero vector
        const auto res = tok::quantize_multiscale<double>(f, {cb}, {{3, 3}});
        double err = 0, norm = 0;
        for (int64_t i = 0; i < f.numel(); ++i) {
            err += (f[i] - res.f_hat[i]) * (f[i] - res.f_hat[i]);
            norm += f[i] * f[i];
        }
        ASSERT_LE(err, norm + 1e-12);
    }
}

TEST(Quantizer, DequantizeRoundTripBitExact) {
    Rng rng(4);
    const tok::ScaleList scales = {{1, 1}, {2, 2}, {3, 3}, {6, 6}};
    Tensor<double> f = Tensor<double>::randn({4, 6, 6}, rng);
    tok::Codebook<double> cb{Tensor<double>::randn({16, 4}, rng)};
    const auto res = tok::quantize_multiscale(f, cb, scales);
    const auto back = tok::dequantize(res.pyramid, cb, 6, 6);
    for (int64_t i = 0; i < f.numel(); ++i) EXPECT_EQ(back[i], res.f_hat[i]);  // identical replay
}

TEST(Quantizer, HandBuiltTwoScaleDequantize) {
    // 2-row codebook in 1-D code space; scales (1,1) then (2,2)
    Tensor<double> cbv({2, 1});
    cbv.at2(0, 0) = 1.0;
    cbv.at2(1, 0) = -2.0;
    tok::TokenPyramid p;
    p.scales = {{1, 1}, {2, 2}};
    p.grids = {{0}, {1, 0, 0, 1}};
    const auto latent = tok::dequantize<double>(p, {cbv}, 2, 2);
    // scale 1 upsamples the constant 1.0; scale 2 is exact at (2,2)
    EXPECT_DOUBLE_EQ(latent.at3(0, 0, 0), 1.0 + -2.0);
    EXPECT_DOUBLE_EQ(latent.at3(0, 0, 1), 1.0 + 1.0);
    EXPECT_DOUBLE_EQ(latent.at3(0, 1, 0), 1.0 + 1.0);
    EXPECT_DOUBLE_EQ(latent.at3(0, 1, 1), 1.0 + -2.0);
}

TEST(Quantizer, ErrorPaths) {
    Rng rng(5);
    Tensor<double> f = Tensor<double>::randn({2, 4, 4}, rng);
    tok::Codebook<double> empty{Tensor<double>({0, 2})};
    EXPECT_THROW(tok::quantize_multiscale(f, empty, {{4, 4}}), std::invalid_argument);
    tok::Codebook<double> cb{Tensor<double>::randn({3, 2}, rng)};
    EXPECT_THROW(tok::quantize_multiscale(f, cb, {{4, 4}, {2, 2}}), std::invalid_argument);  // not ascending
    EXPECT_THROW(tok::quantize_multiscale(f, cb, {{2, 2}}), std::invalid_argument);  // last != latent size
    tok::TokenPyramid p;
    p.scales = {{4, 4}};
    p.grids = {std::vector<int32_t>(16, 3)};  // index 3 out of range for 3-row codebook
    EXPECT_THROW(tok::dequantize(p, cb, 4, 4), std::out_of_range);
    Tensor<double> bad = f;
    bad[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(tok::quantize_multiscale(bad, cb, {{4, 4}}), std::invalid_argument);
}

TEST(MaskPyramid, TrivialAndTracedCases) {
    const tok::ScaleList scales = {{1, 1}, {2, 2}, {3, 3}, {8, 8}};
    Tensor<uint8_t> ones({64, 64}, 1);
    auto mp = tok::build_mask_pyramid(ones, scales);
    for (const auto& g : mp.grids)
        for (uint8_t v : g) EXPECT_EQ(v, 1);
    Tensor<uint8_t> zeros({64, 64});
    mp = tok::build_mask_pyramid(zeros, scales);
    for (const auto& g : mp.grids)
        for (uint8_t v : g) EXPECT_EQ(v, 0);

    Tensor<uint8_t> single({64, 64});
    single.at2(0, 0) = 1;
    mp = tok::build_mask_pyramid(single, scales);
    for (size_t k = 0; k < scales.size(); ++k) {
        int64_t sum = 0;
        for (uint8_t v : mp.grids[k]) sum += v;
        EXPECT_EQ(sum, 1) << "scale " << k;
        EXPECT_EQ(mp.grids[k][0], 1) << "scale " << k;  // cell (0,0)
    }
    Tensor<uint8_t> nonbinary({4, 4});
    nonbinary.at2(1, 1) = 2;
    EXPECT_THROW(tok::build_mask_pyramid(nonbinary, {{4, 4}}), std::invalid_argument);
}

TEST(MaskPyramid, MatchesOracleAndMonotone) {
    Rng rng(6);
    const tok::ScaleList scales = {{1, 1}, {2, 2}, {3, 3}, {5, 5}};
    for (int trial = 0; trial < 30; ++trial) {
        Tensor<uint8_t> a({20, 20}), b({20, 20});
        for (int64_t i = 0; i < a.numel(); ++i) {
            a[i] = rng.uniform() < 0.2 ? 1 : 0;
            b[i] = a[i] | (rng.uniform() < 0.2 ? 1 : 0);  // b is a superset of a
        }
        const auto impl_a = tok::build_mask_pyramid(a, scales);
        const auto oracle_a = oracle_mask_pyramid(a, scales);
        for (size_t k = 0; k < scales.size(); ++k) ASSERT_EQ(impl_a.grids[k], oracle_a.grids[k]);
        const auto impl_b = tok::build_mask_pyramid(b, scales);
        for (size_t k = 0; k < scales.size(); ++k)
            for (size_t i = 0; i < impl_a.grids[k].size(); ++i)
                ASSERT_LE(impl_a.grids[k][i], impl_b.grids[k][i]);  // monotonicity
    }
}

namespace {

// shared fixture pieces for loss tests
struct LossFixture {
    std::vector<ag::NodeRef<double>> real, recon;
    std::vector<tok::MaskPyramid> masks;
    ag::NodeRef<double> image, reconim, f, f_hat;
    tok::ScaleList scales = {{1, 1}, {2, 2}};

    explicit LossFixture(Rng& rng, uint8_t mask_fill) {
        image = ag::param(Tensor<double>::randn({1, 3, 8, 8}, rng));
        reconim = ag::param(Tensor<double>::randn({1, 3, 8, 8}, rng));
        f = ag::param(Tensor<double>::randn({1, 4, 2, 2}, rng));
        f_hat = ag::param(Tensor<double>::randn({1, 4, 2, 2}, rng));
        for (const auto& [sh, sw] : scales) {
            real.push_back(ag::param(Tensor<double>::randn({1, 4, sh, sw}, rng)));
            recon.push_back(ag::param(Tensor<double>::randn({1, 4, sh, sw}, rng)));
        }
        tok::MaskPyramid mp;
        mp.scales = scales;
        mp.grids = {std::vector<uint8_t>(1, mask_fill), std::vector<uint8_t>(4, mask_fill)};
        masks.push_back(mp);
    }
};

}  // namespace

TEST(VqVaeLoss, MaskAnnihilatesAndIdentity) {
    Rng rng(7);
    LossFixture fx(rng, 1);  // all-lesion masks
    auto bd = tok::vqvae_loss<double>(fx.image, fx.reconim, fx.real, fx.recon, fx.f, fx.f_hat, fx.masks, nullptr,
                                      nullptr, 1.0, 0.1, true);
    EXPECT_DOUBLE_EQ(bd.lesion_focus, 0.0);  // (1 - M) zeroes the term

    // identity case: recon == input everywhere
    auto bd2 = tok::vqvae_loss<double>(fx.image, fx.image, fx.real, fx.real, fx.f, fx.f, fx.masks, nullptr, nullptr,
                                       1.0, 0.1, true);
    EXPECT_DOUBLE_EQ(bd2.pixel, 0.0);
    EXPECT_DOUBLE_EQ(bd2.lesion_focus, 0.0);
    EXPECT_DOUBLE_EQ(bd2.feature, 0.0);
    EXPECT_DOUBLE_EQ(bd2.total, 0.0);
}

TEST(VqVaeLoss, AllBackgroundEqualsFullTokenMse) {
    Rng rng(8);
    LossFixture fx(rng, 0);  // all-background masks
    auto bd = tok::vqvae_loss<double>(fx.image, fx.reconim, fx.real, fx.recon, fx.f, fx.f_hat, fx.masks, nullptr,
                                      nullptr, 1.0, 0.1, true);
    double expect = 0;
    for (size_t k = 0; k < fx.real.size(); ++k) {
        double s = 0;
        for (int64_t i = 0; i < fx.real[k]->value.numel(); ++i) {
            const double d = fx.real[k]->value[i] - fx.recon[k]->value[i];
            s += d * d;
        }
        expect += s / static_cast<double>(fx.real[k]->value.numel());
    }
    EXPECT_NEAR(bd.lesion_focus, expect, 1e-12);
}

TEST(VqVaeLoss, HandComputedUnitDifference) {
    Rng rng(9);
    LossFixture fx(rng, 0);
    // recon grids equal real grids except one cell per scale differs by a unit vector
    for (size_t k = 0; k < fx.real.size(); ++k) {
        fx.recon[k]->value = fx.real[k]->value;
        fx.recon[k]->value[0] += 1.0;  // unit bump in channel 0 of cell (0,0)
    }
    auto bd = tok::vqvae_loss<double>(fx.image, fx.reconim, fx.real, fx.recon, fx.f, fx.f_hat, fx.masks, nullptr,
                                      nullptr, 1.0, 0.1, true);
    const double expect = 1.0 / 4.0 + 1.0 / 16.0;  // 1/numel per scale: (1*4*1*1), (1*4*2*2)
    EXPECT_NEAR(bd.lesion_focus, expect, 1e-12);
}

TEST(VqVaeLoss, DecompositionInvariantAndNanNaming) {
    Rng rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        LossFixture fx(rng, trial % 2);
        auto perc = ag::param(Tensor<double>({1}, std::abs(rng.normal())));
        auto adv = ag::param(Tensor<double>({1}, rng.normal()));
        const double lp = 0.7, lg = 0.3;
        auto bd = tok::vqvae_loss<double>(fx.image, fx.reconim, fx.real, fx.recon, fx.f, fx.f_hat, fx.masks, perc,
                                          adv, lp, lg, true);
        const double lhs = bd.total;
        const double rhs = bd.pixel + bd.lesion_focus + bd.feature + lp * bd.perceptual + lg * bd.adversarial;
        ASSERT_NEAR(lhs, rhs, 1e-8);
        ASSERT_NEAR(bd.total_node->value[0], lhs, 1e-8);
        ASSERT_GE(bd.pixel, 0.0);
        ASSERT_GE(bd.lesion_focus, 0.0);
        ASSERT_GE(bd.feature, 0.0);
        ASSERT_GE(bd.perceptual, 0.0);
    }
    LossFixture fx(rng, 0);
    fx.reconim->value[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        tok::vqvae_loss<double>(fx.image, fx.reconim, fx.real, fx.recon, fx.f, fx.f_hat, fx.masks, nullptr, nullptr,
                                1.0, 0.1, true);
        FAIL() << "expected NaN error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("pixel"), std::string::npos);
    }
}

TEST(VqVaeLoss, GradientsMatchFiniteDifferences) {
    Rng rng(11);
    LossFixture fx(rng, 0);
    auto loss = [&] {
        auto bd = tok::vqvae_loss<double>(fx.image, fx.reconim, fx.real, fx.recon, fx.f, fx.f_hat, fx.masks,
                                          nullptr, nullptr, 1.0, 0.1, true);
        return bd.total_node;
    };
    std::vector<ag::NodeRef<double>> leaves = {fx.image, fx.reconim, fx.f, fx.f_hat};
    for (auto& g : fx.real) leaves.push_back(g);
    for (auto& g : fx.recon) leaves.push_back(g);
    EXPECT_LT(max_grad_rel_error(loss, leaves), 1e-4);
}

TEST(VqVae, EncodeDecodeContracts) {
    tok::VqVaeConfig cfg = tiny_vqvae_config();
    cfg.height = cfg.width = 64;
    cfg.scales = {{1, 1}, {2, 2}, {4, 4}, {16, 16}};
    tok::VqVae<float> model(cfg);
    Tensor<float> img({3, 64, 64}, 0.0f);
    const auto latent = model.encode(img);
    EXPECT_EQ(latent.shape(), (std::vector<int64_t>{cfg.code_dim, 16, 16}));  // stride-4 encoder
    EXPECT_TRUE(latent.all_finite());  // all-zeros input stays finite
    const auto latent2 = model.encode(img);
    for (int64_t i = 0; i < latent.numel(); ++i) ASSERT_EQ(latent[i], latent2[i]);  // deterministic

    Rng rng(12);
    Tensor<float> z = Tensor<float>::randn({cfg.code_dim, 16, 16}, rng, 2.0f);
    const auto out = model.decode(z);
    EXPECT_EQ(out.shape(), (std::vector<int64_t>{3, 64, 64}));
    for (int64_t i = 0; i < out.numel(); ++i) {
        ASSERT_GE(out[i], 0.0f);
        ASSERT_LE(out[i], 1.0f);
    }
    const auto out2 = model.decode(z);
    for (int64_t i = 0; i < out.numel(); ++i) ASSERT_EQ(out[i], out2[i]);

    Tensor<float> wrong({3, 32, 32});
    EXPECT_THROW(model.encode(wrong), std::invalid_argument);
    Tensor<float> wrongz({cfg.code_dim, 8, 8});
    EXPECT_THROW(model.decode(wrongz), std::invalid_argument);
}

TEST(VqVae, TrainingImprovesAndIsDeterministic) {
    const auto samples = tiny_toy_samples(2, 6, 32, 3);
    tok::VqVaeConfig cfg = tiny_vqvae_config();
    tok::VqVae<float> a(cfg);
    const auto ra = tok::train_vqvae(a, samples);
    ASSERT_EQ(ra.epochs.size(), static_cast<size_t>(cfg.epochs));
    EXPECT_LT(ra.epochs.back().total, ra.epochs.front().total);  // directional check

    tok::VqVae<float> b(cfg);
    const auto rb = tok::train_vqvae(b, samples);
    for (size_t e = 0; e < ra.epochs.size(); ++e) {
        ASSERT_EQ(ra.epochs[e].total, rb.epochs[e].total);  // same seed, identical series
        ASSERT_EQ(ra.epochs[e].pixel, rb.epochs[e].pixel);
    }
}

TEST(VqVae, ZeroEpochsKeepsInitialization) {
    const auto samples = tiny_toy_samples(2, 3, 32, 4);
    tok::VqVaeConfig cfg = tiny_vqvae_config();
    cfg.epochs = 0;
    tok::VqVae<float> model(cfg);
    const auto before = model.gen_params().snapshot();
    const auto report = tok::train_vqvae(model, samples);
    EXPECT_TRUE(report.epochs.empty());
    const auto after = model.gen_params().snapshot();
    for (size_t i = 0; i < before.size(); ++i)
        for (int64_t j = 0; j < before[i].numel(); ++j) ASSERT_EQ(before[i][j], after[i][j]);
}

TEST(VqVae, NanAbortsAndRestoresLastGoodCheckpoint) {
    const auto samples = tiny_toy_samples(2, 4, 32, 6);
    tok::VqVaeConfig cfg = tiny_vqvae_config();
    cfg.epochs = 3;
    tok::VqVae<float> model(cfg);
    // poison one encoder weight: the first forward pass produces a non-finite loss
    model.gen_params().params()[0]->value[0] = std::numeric_limits<float>::quiet_NaN();
    const auto report = tok::train_vqvae(model, samples);
    EXPECT_TRUE(report.aborted);
    EXPECT_TRUE(report.epochs.empty());
    EXPECT_NE(report.abort_reason.find("epoch 0"), std::string::npos);
}

TEST(VqVae, CheckpointRoundTrip) {
    TempDir td("vqvae_ckpt");
    const auto samples = tiny_toy_samples(2, 4, 32, 5);
    tok::VqVaeConfig cfg = tiny_vqvae_config();
    cfg.epochs = 2;
    tok::VqVae<float> model(cfg);
    tok::train_vqvae(model, samples);
    model.save(td.path() / "ck");
    const auto loaded = tok::VqVae<float>::load(td.path() / "ck");
    Tensor<float> img({3, 32, 32});
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = samples[0].image[i];
    const auto l1 = model.encode(img);
    const auto l2 = loaded.encode(img);
    for (int64_t i = 0; i < l1.numel(); ++i) ASSERT_EQ(l1[i], l2[i]);
    const auto cb1 = model.codebook().vectors;
    const auto cb2 = loaded.codebook().vectors;
    for (int64_t i = 0; i < cb1.numel(); ++i) ASSERT_EQ(cb1[i], cb2[i]);
}

TEST(VqVae, PyramidTextRoundTrip) {
    Rng rng(13);
    tok::TokenPyramid p;
    p.scales = {{1, 1}, {2, 2}, {3, 3}};
    for (const auto& [h, w] : p.scales) {
        std::vector<int32_t> g(static_cast<size_t>(h * w));
        for (auto& v : g) v = static_cast<int32_t>(rng.uniform_int(1000));
        p.grids.push_back(g);
    }
    const auto text = tok::pyramid_to_text(p);
    const auto back = tok::pyramid_from_text(text);
    EXPECT_TRUE(p == back);
}
