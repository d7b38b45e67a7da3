#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lesyn/cond/conditioning.hpp"
#include "lesyn/core/serialize.hpp"
#include "lesyn/nn/modules.hpp"
#include "lesyn/tokenizer/quantizer.hpp"

// Decoder-only transformer over the token pyramid with next-scale prediction.
// All tokens of scale k are predicted in parallel from the condition tokens and
// the scales below k; the input slots for scale k carry a projection of the
// partial latent reconstruction accumulated from scales < k. Attention is
// block-causal over (condition block, scale 1 block, ..., scale K block).

namespace lesyn::var {

using nlohmann::json;
using tok::ScaleList;
using tok::TokenPyramid;

enum class MeasurementConditioning { none, fixed, extracted, codebook };

inline std::string to_string(MeasurementConditioning m) {
    switch (m) {
        case MeasurementConditioning::none: return "none";
        case MeasurementConditioning::fixed: return "fixed";
        case MeasurementConditioning::extracted: return "extracted";
        case MeasurementConditioning::codebook: return "codebook";
    }
    return "?";
}

inline MeasurementConditioning measurement_conditioning_from_string(const std::string& s) {
    if (s == "none") return MeasurementConditioning::none;
    if (s == "fixed") return MeasurementConditioning::fixed;
    if (s == "extracted") return MeasurementConditioning::extracted;
    if (s == "codebook") return MeasurementConditioning::codebook;
    throw std::invalid_argument("unknown measurement conditioning mode: " + s);
}

struct SamplerConfig {
    double temperature = 1.0;
    int64_t top_k = 0;   // 0 = off
    double top_p = 1.0;  // 1 = off
    uint64_t seed = 0;

    void validate() const {
        if (!(temperature > 0)) throw std::invalid_argument("sampler: temperature must be > 0");
        if (top_k < 0) throw std::invalid_argument("sampler: top_k must be >= 0");
        if (!(top_p > 0 && top_p <= 1.0)) throw std::invalid_argument("sampler: top_p must be in (0,1]");
    }

    json to_json() const {
        return {{"temperature", temperature}, {"top_k", top_k}, {"top_p", top_p}, {"seed", seed}};
    }
    static SamplerConfig from_json(const json& j) {
        SamplerConfig s;
        s.temperature = j.value("temperature", 1.0);
        s.top_k = j.value("top_k", int64_t(0));
        s.top_p = j.value("top_p", 1.0);
        s.seed = j.value("seed", uint64_t(0));
        return s;
    }
};

struct VarConfig {
    int depth = 6;
    int heads = 4;
    int64_t width = 256;
    int64_t vocab = 1024;
    int64_t code_dim = 32;
    ScaleList scales;
    int num_classes = 0;
    int cond_tokens = 2;  // 2 = [S, F_q]; 1 = class token only (ablation baseline)
    MeasurementConditioning conditioning = MeasurementConditioning::extracted;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.05;
    int epochs = 12;
    int batch_size = 16;
    uint64_t seed = 1;
    SamplerConfig sampler;

    void validate() const {
        if (width % heads != 0) throw std::invalid_argument("var: width must be divisible by heads");
        if (scales.empty()) throw std::invalid_argument("var: scales empty");
        if (num_classes < 1) throw std::invalid_argument("var: num_classes must be >= 1");
        if (cond_tokens != 1 && cond_tokens != 2) throw std::invalid_argument("var: cond_tokens must be 1 or 2");
        if (cond_tokens == 1 && conditioning != MeasurementConditioning::none)
            throw std::invalid_argument("var: cond_tokens=1 requires conditioning=none");
        if (cond_tokens == 2 && conditioning == MeasurementConditioning::none)
            throw std::invalid_argument("var: cond_tokens=2 requires a measurement conditioning mode");
        sampler.validate();
    }

    int64_t total_tokens() const {
        int64_t n = 0;
        for (const auto& [h, w] : scales) n += h * w;
        return n;
    }

    json to_json() const {
        json scales_j = json::array();
        for (const auto& [h, w] : scales) scales_j.push_back({h, w});
        return {{"depth", depth},
                {"heads", heads},
                {"width", width},
                {"vocab", vocab},
                {"code_dim", code_dim},
                {"scales", scales_j},
                {"num_classes", num_classes},
                {"cond_tokens", cond_tokens},
                {"conditioning", to_string(conditioning)},
                {"lr", lr},
                {"beta1", beta1},
                {"beta2", beta2},
                {"weight_decay", weight_decay},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"seed", seed},
                {"sampler", sampler.to_json()}};
    }

    static VarConfig from_json(const json& j) {
        VarConfig c;
        c.depth = j.at("depth");
        c.heads = j.at("heads");
        c.width = j.at("width");
        c.vocab = j.at("vocab");
        c.code_dim = j.at("code_dim");
        c.scales.clear();
        for (const auto& s : j.at("scales")) c.scales.emplace_back(s.at(0).get<int64_t>(), s.at(1).get<int64_t>());
        c.num_classes = j.at("num_classes");
        c.cond_tokens = j.at("cond_tokens");
        c.conditioning = measurement_conditioning_from_string(j.at("conditioning"));
        c.lr = j.at("lr");
        c.beta1 = j.at("beta1");
        c.beta2 = j.at("beta2");
        c.weight_decay = j.at("weight_decay");
        c.epochs = j.at("epochs");
        c.batch_size = j.at("batch_size");
        c.seed = j.at("seed");
        c.sampler = SamplerConfig::from_json(j.at("sampler"));
        return c;
    }
};

// ---- flattened sequence view ----

struct TokenCoord {
    int scale = -1;  // 0-based scale index; -1 for condition slots
    int row = 0;
    int col = 0;
};

struct ScaleSequence {
    int prefix = 2;                // number of condition slots reserved at the front
    std::vector<int32_t> tokens;   // -1 in the condition slots
    std::vector<TokenCoord> coords;
    ScaleList scales;
};

inline ScaleSequence flatten_pyramid(const TokenPyramid& p, int prefix = 2) {
    ScaleSequence s;
    s.prefix = prefix;
    s.scales = p.scales;
    s.tokens.assign(static_cast<size_t>(prefix), -1);
    s.coords.assign(static_cast<size_t>(prefix), TokenCoord{});
    for (size_t k = 0; k < p.scales.size(); ++k) {
        const auto [sh, sw] = p.scales[k];
        if (static_cast<int64_t>(p.grids[k].size()) != sh * sw)
            throw std::invalid_argument("flatten: grid size does not match scale list");
        for (int64_t r = 0; r < sh; ++r)
            for (int64_t c = 0; c < sw; ++c) {
                s.tokens.push_back(p.grids[k][static_cast<size_t>(r * sw + c)]);
                s.coords.push_back(TokenCoord{static_cast<int>(k), static_cast<int>(r), static_cast<int>(c)});
            }
    }
    return s;
}

inline TokenPyramid unflatten_sequence(const ScaleSequence& s) {
    TokenPyramid p;
    p.scales = s.scales;
    size_t pos = static_cast<size_t>(s.prefix);
    for (const auto& [sh, sw] : s.scales) {
        std::vector<int32_t> grid(static_cast<size_t>(sh * sw));
        for (auto& t : grid) t = s.tokens.at(pos++);
        p.grids.push_back(std::move(grid));
    }
    return p;
}

// Mean cross-entropy of next-scale logits against a target pyramid.
template <typename T>
ag::NodeRef<T> next_scale_loss(const ag::NodeRef<T>& logits, const TokenPyramid& target) {
    std::vector<int64_t> targets;
    targets.reserve(static_cast<size_t>(target.total_tokens()));
    for (const auto& g : target.grids)
        for (int32_t t : g) targets.push_back(t);
    if (logits->value.dim(0) != static_cast<int64_t>(targets.size()))
        throw std::invalid_argument("next_scale_loss: logit row count does not match target token count");
    return ag::cross_entropy_mean(logits, std::move(targets));
}

template <typename T>
class VarModel {
public:
    VarModel(VarConfig cfg, Tensor<T> frozen_codebook, std::vector<std::string> class_names)
        : cfg_(std::move(cfg)), class_names_(std::move(class_names)) {
        cfg_.validate();
        if (frozen_codebook.dim(0) != cfg_.vocab || frozen_codebook.dim(1) != cfg_.code_dim)
            throw std::invalid_argument("var: frozen codebook shape does not match config");
        if (static_cast<int>(class_names_.size()) != cfg_.num_classes)
            throw std::invalid_argument("var: class name count mismatch");
        frozen_codebook_ = ag::constant(std::move(frozen_codebook));

        Rng rng(cfg_.seed);
        const int64_t w = cfg_.width;
        proj_ = nn::Linear<T>(reg_, "proj", cfg_.code_dim, w, rng);
        start_ = reg_.add("start", Tensor<T>::randn({1, w}, rng, T(0.02)));
        scale_emb_ = reg_.add("scale_emb", Tensor<T>::randn({static_cast<int64_t>(cfg_.scales.size()), w}, rng,
                                                            T(0.02)));
        for (size_t k = 0; k < cfg_.scales.size(); ++k) {
            const auto [sh, sw] = cfg_.scales[k];
            pos_emb_.push_back(reg_.add("pos_emb." + std::to_string(k),
                                        Tensor<T>::randn({sh * sw, w}, rng, T(0.02))));
        }
        cond_pos_ = reg_.add("cond_pos", Tensor<T>::randn({cfg_.cond_tokens, w}, rng, T(0.02)));
        class_emb_ = cond::ClassEmbedding<T>(reg_, "class_emb", cfg_.num_classes, w, rng);
        meas_enc_ = cond::MeasurementEncoder<T>(reg_, "meas", w, rng);

        blocks_.resize(static_cast<size_t>(cfg_.depth));
        for (int i = 0; i < cfg_.depth; ++i) {
            auto& b = blocks_[static_cast<size_t>(i)];
            const std::string p = "blocks." + std::to_string(i);
            b.ln1 = nn::LayerNorm<T>(reg_, p + ".ln1", w);
            b.qkv = nn::Linear<T>(reg_, p + ".qkv", w, 3 * w, rng);
            b.out = nn::Linear<T>(reg_, p + ".out", w, w, rng);
            b.ln2 = nn::LayerNorm<T>(reg_, p + ".ln2", w);
            b.fc1 = nn::Linear<T>(reg_, p + ".fc1", w, 4 * w, rng);
            b.fc2 = nn::Linear<T>(reg_, p + ".fc2", 4 * w, w, rng);
        }
        ln_f_ = nn::LayerNorm<T>(reg_, "ln_f", w);
        head_ = nn::Linear<T>(reg_, "head", w, cfg_.vocab, rng);
    }

    const VarConfig& config() const { return cfg_; }
    const std::vector<std::string>& class_names() const { return class_names_; }
    nn::ParamRegistry<T>& params() { return reg_; }
    const cond::ClassEmbedding<T>& class_embedding() const { return class_emb_; }
    const cond::MeasurementEncoder<T>& measurement_encoder() const { return meas_enc_; }
    const ag::NodeRef<T>& frozen_codebook() const { return frozen_codebook_; }

    // Condition rows for a sample: [S_c] or [S_c, F_q].
    ag::NodeRef<T> condition_rows(int cls, const measure::MeasurementVector* v_normalized) const {
        if (cfg_.cond_tokens == 1) return class_emb_.row(cls);
        if (!v_normalized) throw std::invalid_argument("var: measurement vector required for cond_tokens=2");
        auto f_q = meas_enc_.encode_vector(*v_normalized);
        return cond::build_condition_tokens(class_emb_, cls, f_q);
    }

    // Embedding grid (1,d,sh,sw) for a token grid, looked up in the frozen codebook.
    ag::NodeRef<T> grid_from_indices(const std::vector<int32_t>& idx, size_t scale_index) const {
        const auto [sh, sw] = cfg_.scales.at(scale_index);
        if (static_cast<int64_t>(idx.size()) != sh * sw)
            throw std::invalid_argument("var: token grid size mismatch at scale " + std::to_string(scale_index));
        std::vector<int64_t> ids(idx.begin(), idx.end());
        auto rows = ag::embedding(frozen_codebook_, std::move(ids));
        return ag::rows_to_nchw(rows, 1, sh, sw);
    }

    // Teacher-forced logits for every token of every scale, (sum_k h_k*w_k, V).
    ag::NodeRef<T> forward_train(const ag::NodeRef<T>& cond_rows, const TokenPyramid& pyramid) const {
        if (pyramid.scales != cfg_.scales)
            throw std::invalid_argument("var: pyramid scales do not match model scales");
        std::vector<ag::NodeRef<T>> grids;
        for (size_t k = 0; k + 1 < cfg_.scales.size(); ++k) grids.push_back(grid_from_indices(pyramid.grids[k], k));
        return forward_scales(cond_rows, grids, static_cast<int>(cfg_.scales.size()));
    }

    // Logits for scales 1..num_scales given embedding grids for scales < num_scales.
    // grids[k] is (1, d, h_k, w_k); extra grids beyond num_scales-1 are ignored.
    ag::NodeRef<T> forward_scales(const ag::NodeRef<T>& cond_rows, const std::vector<ag::NodeRef<T>>& grids,
                                  int num_scales) const {
        if (num_scales < 1 || num_scales > static_cast<int>(cfg_.scales.size()))
            throw std::invalid_argument("var: num_scales out of range");
        if (static_cast<int>(grids.size()) < num_scales - 1)
            throw std::invalid_argument("var: not enough scale grids for the requested prediction depth");
        if (cond_rows->value.dim(0) != cfg_.cond_tokens || cond_rows->value.dim(1) != cfg_.width)
            throw std::invalid_argument("var: condition rows must be (" + std::to_string(cfg_.cond_tokens) + "," +
                                        std::to_string(cfg_.width) + ")");
        const auto [lh, lw] = cfg_.scales.back();

        std::vector<ag::NodeRef<T>> rows;
        rows.push_back(ag::add(cond_rows, cond_pos_));
        ag::NodeRef<T> partial;  // (1,d,lh,lw) accumulated reconstruction of scales < k
        for (int k = 0; k < num_scales; ++k) {
            const auto [sh, sw] = cfg_.scales[static_cast<size_t>(k)];
            ag::NodeRef<T> slot;
            if (k == 0) {
                slot = ag::broadcast_row(start_, sh * sw);
            } else {
                auto down = ag::resize2d(partial, area_mat(lh, sh), area_mat(lw, sw));
                slot = proj_.forward(ag::nchw_to_rows(down));
            }
            slot = ag::add_rowvec(slot, ag::embedding(scale_emb_, std::vector<int64_t>{k}));
            slot = ag::add(slot, pos_emb_[static_cast<size_t>(k)]);
            rows.push_back(slot);
            if (k + 1 < num_scales) {
                auto up = ag::resize2d(grids[static_cast<size_t>(k)], bilinear_mat(sh, lh), bilinear_mat(sw, lw));
                partial = partial ? ag::add(partial, up) : up;
            }
        }
        auto x = ag::concat_rows(rows);
        const Tensor<T>& mask = attn_mask(num_scales);
        for (const auto& b : blocks_) {
            auto h = b.ln1.forward(x);
            auto qkv = b.qkv.forward(h);
            const int64_t dh = cfg_.width / cfg_.heads;
            std::vector<ag::NodeRef<T>> head_outs;
            for (int hi = 0; hi < cfg_.heads; ++hi) {
                auto q = ag::slice_cols(qkv, hi * dh, dh);
                auto k = ag::slice_cols(qkv, cfg_.width + hi * dh, dh);
                auto v = ag::slice_cols(qkv, 2 * cfg_.width + hi * dh, dh);
                auto scores = ag::scale(ag::matmul_nt(q, k), static_cast<T>(1.0 / std::sqrt(double(dh))));
                auto probs = ag::softmax_rows(scores, &mask);
                head_outs.push_back(ag::matmul(probs, v));
            }
            x = ag::add(x, b.out.forward(ag::concat_cols(head_outs)));
            auto m = b.ln2.forward(x);
            x = ag::add(x, b.fc2.forward(ag::silu(b.fc1.forward(m))));
        }
        auto hfinal = ln_f_.forward(x);
        int64_t pred_rows = 0;
        for (int k = 0; k < num_scales; ++k)
            pred_rows += cfg_.scales[static_cast<size_t>(k)].first * cfg_.scales[static_cast<size_t>(k)].second;
        auto pred = ag::slice_rows(hfinal, cfg_.cond_tokens, pred_rows);
        return head_.forward(pred);
    }

    // Scale-by-scale sampling; deterministic for a fixed sampler seed.
    TokenPyramid generate(const Tensor<T>& cond_rows, const SamplerConfig& sampler) const {
        sampler.validate();
        ag::NoGradGuard ng;
        Rng rng(sampler.seed ^ 0x5eedul);
        TokenPyramid p;
        p.scales = cfg_.scales;
        std::vector<ag::NodeRef<T>> grids;
        auto cond = ag::constant(cond_rows);
        for (size_t k = 0; k < cfg_.scales.size(); ++k) {
            const auto [sh, sw] = cfg_.scales[k];
            auto logits = forward_scales(cond, grids, static_cast<int>(k) + 1);
            const int64_t n = logits->value.dim(0);
            std::vector<int32_t> idx(static_cast<size_t>(sh * sw));
            for (int64_t i = 0; i < sh * sw; ++i) {
                const T* row = logits->value.data() + (n - sh * sw + i) * cfg_.vocab;
                idx[static_cast<size_t>(i)] = sample_logits(row, cfg_.vocab, sampler, rng);
            }
            p.grids.push_back(idx);
            if (k + 1 < cfg_.scales.size()) grids.push_back(grid_from_indices(idx, k));
        }
        return p;
    }

    static int32_t sample_logits(const T* logits, int64_t vocab, const SamplerConfig& sc, Rng& rng) {
        const double temp = std::max(sc.temperature, 1e-8);
        std::vector<std::pair<double, int64_t>> cand(static_cast<size_t>(vocab));
        for (int64_t j = 0; j < vocab; ++j)
            cand[static_cast<size_t>(j)] = {static_cast<double>(logits[j]) / temp, j};
        std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;  // stable tie-break: smaller index wins
        });
        size_t keep = cand.size();
        if (sc.top_k > 0) keep = std::min<size_t>(keep, static_cast<size_t>(sc.top_k));
        // softmax over the kept candidates (sorted, max first)
        std::vector<double> p(keep);
        double denom = 0;
        for (size_t j = 0; j < keep; ++j) {
            p[j] = std::exp(cand[j].first - cand[0].first);
            denom += p[j];
        }
        for (auto& x : p) x /= denom;
        if (sc.top_p < 1.0) {
            double cum = 0;
            size_t cut = keep;
            for (size_t j = 0; j < keep; ++j) {
                cum += p[j];
                if (cum >= sc.top_p) {
                    cut = j + 1;
                    break;
                }
            }
            keep = cut;
            double z = 0;
            for (size_t j = 0; j < keep; ++j) z += p[j];
            for (size_t j = 0; j < keep; ++j) p[j] /= z;
        }
        const double u = rng.uniform();
        double cum = 0;
        for (size_t j = 0; j < keep; ++j) {
            cum += p[j];
            if (u < cum) return static_cast<int32_t>(cand[j].second);
        }
        return static_cast<int32_t>(cand[keep - 1].second);
    }

    void save(const std::filesystem::path& prefix, const json& sidecar_extra = json::object()) const {
        auto named = reg_.named_values();
        named["frozen_codebook"] = &frozen_codebook_->value;
        io::save_tensors(prefix.string() + ".bin", named);
        json side = {{"kind", "var"}, {"config", cfg_.to_json()}, {"class_names", class_names_}};
        for (auto it = sidecar_extra.begin(); it != sidecar_extra.end(); ++it) side[it.key()] = it.value();
        std::ofstream os(prefix.string() + ".json");
        if (!os) throw std::runtime_error("var: cannot write sidecar");
        os << side.dump(2) << "\n";
    }

    static VarModel<T> load(const std::filesystem::path& prefix) {
        std::ifstream is(prefix.string() + ".json");
        if (!is) throw std::runtime_error("var: cannot open sidecar: " + prefix.string() + ".json");
        json side = json::parse(is);
        if (side.at("kind") != "var") throw std::runtime_error("var: checkpoint kind mismatch");
        auto tensors = io::load_tensors<T>(prefix.string() + ".bin");
        auto cb_it = tensors.find("frozen_codebook");
        if (cb_it == tensors.end()) throw std::runtime_error("var: checkpoint missing frozen codebook");
        VarModel<T> model(VarConfig::from_json(side.at("config")), cb_it->second,
                          side.at("class_names").get<std::vector<std::string>>());
        tensors.erase("frozen_codebook");
        model.reg_.load_values(tensors);
        return model;
    }

private:
    struct Block {
        nn::LayerNorm<T> ln1, ln2;
        nn::Linear<T> qkv, out, fc1, fc2;
    };

    const Tensor<T>& area_mat(int64_t from, int64_t to) const { return cached_mat(from, to, 0); }
    const Tensor<T>& bilinear_mat(int64_t from, int64_t to) const { return cached_mat(from, to, 1); }

    const Tensor<T>& cached_mat(int64_t from, int64_t to, int kind) const {
        const int64_t key = (static_cast<int64_t>(kind) << 40) | (from << 20) | to;
        auto it = mat_cache_.find(key);
        if (it != mat_cache_.end()) return it->second;
        Tensor<T> m = kind == 0 ? ag::area_resize_matrix<T>(from, to) : ag::bilinear_resize_matrix<T>(from, to);
        return mat_cache_.emplace(key, std::move(m)).first->second;
    }

    // Additive block-causal mask for the sequence covering scales 1..num_scales.
    const Tensor<T>& attn_mask(int num_scales) const {
        auto it = mask_cache_.find(num_scales);
        if (it != mask_cache_.end()) return it->second;
        std::vector<int> group;
        for (int i = 0; i < cfg_.cond_tokens; ++i) group.push_back(0);
        for (int k = 0; k < num_scales; ++k) {
            const auto [sh, sw] = cfg_.scales[static_cast<size_t>(k)];
            for (int64_t i = 0; i < sh * sw; ++i) group.push_back(k + 1);
        }
        const int64_t n = static_cast<int64_t>(group.size());
        Tensor<T> mask({n, n});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j)
                mask.at2(i, j) = group[static_cast<size_t>(j)] <= group[static_cast<size_t>(i)] ? T(0) : T(-1e30);
        return mask_cache_.emplace(num_scales, std::move(mask)).first->second;
    }

    VarConfig cfg_;
    std::vector<std::string> class_names_;
    nn::ParamRegistry<T> reg_;
    ag::NodeRef<T> frozen_codebook_;
    nn::Linear<T> proj_;
    ag::NodeRef<T> start_;
    ag::NodeRef<T> scale_emb_;
    std::vector<ag::NodeRef<T>> pos_emb_;
    ag::NodeRef<T> cond_pos_;
    cond::ClassEmbedding<T> class_emb_;
    cond::MeasurementEncoder<T> meas_enc_;
    std::vector<Block> blocks_;
    nn::LayerNorm<T> ln_f_;
    nn::Linear<T> head_;
    mutable std::map<int64_t, Tensor<T>> mat_cache_;
    mutable std::map<int, Tensor<T>> mask_cache_;
};

}  // namespace lesyn::var
