#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lesyn/core/serialize.hpp"
#include "lesyn/data/manifest.hpp"
#include "lesyn/nn/modules.hpp"
#include "lesyn/nn/optim.hpp"
#include "lesyn/tokenizer/quantizer.hpp"

// Multi-scale lesion-focused VQ-VAE: stride-4 conv encoder, residual multi-scale
// quantizer, conv decoder, patch discriminator with hinge loss and a frozen
// seeded perceptual stack. Training optimizes
//   pixel + lesion_focus + feature + lambda_P * perceptual + lambda_G * adversarial
// plus the usual straight-through codebook/commitment pair.

namespace lesyn::tok {

using nlohmann::json;

struct VqVaeConfig {
    int64_t height = 64;
    int64_t width = 64;
    ScaleList scales = {{1, 1}, {2, 2}, {3, 3}, {4, 4}, {6, 6}, {8, 8}, {16, 16}};
    int64_t vocab = 1024;
    int64_t code_dim = 32;
    int64_t base_channels = 32;
    double lambda_p = 1.0;
    double lambda_g = 0.1;
    double commitment_beta = 0.25;
    bool lesion_focus = true;
    int gan_warmup_epochs = 12;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.05;
    int epochs = 20;
    int batch_size = 16;
    uint64_t seed = 1;

    int64_t latent_h() const { return height / 4; }
    int64_t latent_w() const { return width / 4; }

    void validate() const {
        if (height % 4 || width % 4) throw std::invalid_argument("vqvae: resolution must be divisible by 4");
        validate_scales(scales, latent_h(), latent_w());
        if (vocab < 1 || code_dim < 1) throw std::invalid_argument("vqvae: vocab and code_dim must be positive");
        if (lambda_p < 0 || lambda_g < 0 || commitment_beta < 0)
            throw std::invalid_argument("vqvae: loss weights must be non-negative");
    }

    json to_json() const {
        json scales_j = json::array();
        for (const auto& [h, w] : scales) scales_j.push_back({h, w});
        return {{"height", height},       {"width", width},
                {"scales", scales_j},     {"vocab", vocab},
                {"code_dim", code_dim},   {"base_channels", base_channels},
                {"lambda_p", lambda_p},   {"lambda_g", lambda_g},
                {"commitment_beta", commitment_beta},
                {"lesion_focus", lesion_focus},
                {"gan_warmup_epochs", gan_warmup_epochs},
                {"lr", lr},               {"beta1", beta1},
                {"beta2", beta2},         {"weight_decay", weight_decay},
                {"epochs", epochs},       {"batch_size", batch_size},
                {"seed", seed}};
    }

    static VqVaeConfig from_json(const json& j) {
        VqVaeConfig c;
        c.height = j.at("height");
        c.width = j.at("width");
        c.scales.clear();
        for (const auto& s : j.at("scales")) c.scales.emplace_back(s.at(0).get<int64_t>(), s.at(1).get<int64_t>());
        c.vocab = j.at("vocab");
        c.code_dim = j.at("code_dim");
        c.base_channels = j.at("base_channels");
        c.lambda_p = j.at("lambda_p");
        c.lambda_g = j.at("lambda_g");
        c.commitment_beta = j.at("commitment_beta");
        c.lesion_focus = j.at("lesion_focus");
        c.gan_warmup_epochs = j.at("gan_warmup_epochs");
        c.lr = j.at("lr");
        c.beta1 = j.at("beta1");
        c.beta2 = j.at("beta2");
        c.weight_decay = j.at("weight_decay");
        c.epochs = j.at("epochs");
        c.batch_size = j.at("batch_size");
        c.seed = j.at("seed");
        return c;
    }
};

template <typename T>
struct LossBreakdown {
    double pixel = 0;
    double lesion_focus = 0;
    double feature = 0;
    double perceptual = 0;
    double adversarial = 0;
    double total = 0;
    ag::NodeRef<T> total_node;
};

// Eq-style five-term loss. `real_grids` / `recon_grids` are the code-embedding
// grids per scale, shaped (B, d, h_k, w_k); the lesion-focus term compares them
// only outside the lesion masks. Perceptual / adversarial enter as precomputed
// scalar heads (null means 0). All norms are per-element mean squared errors.
template <typename T>
LossBreakdown<T> vqvae_loss(const ag::NodeRef<T>& image, const ag::NodeRef<T>& recon,
                            const std::vector<ag::NodeRef<T>>& real_grids,
                            const std::vector<ag::NodeRef<T>>& recon_grids, const ag::NodeRef<T>& f,
                            const ag::NodeRef<T>& f_hat, const std::vector<MaskPyramid>& mask_pyrs,
                            const ag::NodeRef<T>& perceptual, const ag::NodeRef<T>& adversarial, double lambda_p,
                            double lambda_g, bool lesion_focus_enabled) {
    LossBreakdown<T> out;
    auto check = [](double v, const char* term) {
        if (!std::isfinite(v)) throw std::runtime_error(std::string("vqvae loss: non-finite ") + term + " term");
        return v;
    };

    ag::NodeRef<T> pixel = ag::mse(image, recon);
    out.pixel = check(static_cast<double>(pixel->value[0]), "pixel");
    ag::NodeRef<T> total = pixel;

    if (lesion_focus_enabled) {
        if (real_grids.size() != recon_grids.size()) throw std::invalid_argument("vqvae loss: grid count mismatch");
        ag::NodeRef<T> lf;
        for (size_t k = 0; k < real_grids.size(); ++k) {
            const auto& a = real_grids[k];
            const auto& b = recon_grids[k];
            const int64_t bsz = a->value.dim(0), d = a->value.dim(1), sh = a->value.dim(2), sw = a->value.dim(3);
            if (mask_pyrs.size() != static_cast<size_t>(bsz))
                throw std::invalid_argument("vqvae loss: mask pyramid batch mismatch");
            Tensor<T> weight({bsz, d, sh, sw});
            for (int64_t bi = 0; bi < bsz; ++bi) {
                const auto& mk = mask_pyrs[static_cast<size_t>(bi)].grids.at(k);
                for (int64_t c = 0; c < d; ++c)
                    for (int64_t i = 0; i < sh * sw; ++i)
                        weight[((bi * d + c) * sh * sw) + i] = mk[static_cast<size_t>(i)] ? T(0) : T(1);
            }
            auto term = ag::weighted_mse(a, b, weight);
            lf = lf ? ag::add(lf, term) : term;
        }
        if (lf) {
            out.lesion_focus = check(static_cast<double>(lf->value[0]), "lesion_focus");
            total = ag::add(total, lf);
        }
    }

    ag::NodeRef<T> feature = ag::mse(f, f_hat);
    out.feature = check(static_cast<double>(feature->value[0]), "feature");
    total = ag::add(total, feature);

    if (perceptual) {
        out.perceptual = check(static_cast<double>(perceptual->value[0]), "perceptual");
        total = ag::add(total, ag::scale(perceptual, static_cast<T>(lambda_p)));
    }
    if (adversarial) {
        out.adversarial = check(static_cast<double>(adversarial->value[0]), "adversarial");
        total = ag::add(total, ag::scale(adversarial, static_cast<T>(lambda_g)));
    }
    out.total = out.pixel + out.lesion_focus + out.feature + lambda_p * out.perceptual + lambda_g * out.adversarial;
    check(out.total, "total");
    out.total_node = total;
    return out;
}

template <typename T>
class VqVae {
public:
    explicit VqVae(VqVaeConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        const int64_t c = cfg_.base_channels, d = cfg_.code_dim;
        enc1_ = nn::Conv2d<T>(gen_, "enc1", 3, c, 3, 2, 1, rng);
        enc2_ = nn::Conv2d<T>(gen_, "enc2", c, 2 * c, 3, 2, 1, rng);
        enc3_ = nn::Conv2d<T>(gen_, "enc3", 2 * c, 2 * c, 3, 1, 1, rng);
        enc4_ = nn::Conv2d<T>(gen_, "enc4", 2 * c, d, 3, 1, 1, rng);
        dec1_ = nn::Conv2d<T>(gen_, "dec1", d, 2 * c, 3, 1, 1, rng);
        dec2_ = nn::Conv2d<T>(gen_, "dec2", 2 * c, c, 3, 1, 1, rng);
        dec3_ = nn::Conv2d<T>(gen_, "dec3", c, c, 3, 1, 1, rng);
        dec4_ = nn::Conv2d<T>(gen_, "dec4", c, 3, 3, 1, 1, rng);
        codebook_ = gen_.add("codebook", Tensor<T>::randn({cfg_.vocab, d}, rng, T(1) / static_cast<T>(std::sqrt(d))));

        disc1_ = nn::Conv2d<T>(disc_, "disc1", 3, c, 3, 2, 1, rng);
        disc2_ = nn::Conv2d<T>(disc_, "disc2", c, 2 * c, 3, 2, 1, rng);
        disc3_ = nn::Conv2d<T>(disc_, "disc3", 2 * c, 1, 3, 1, 1, rng);

        Rng prng = rng.fork(0x9e77);
        auto frozen_conv = [&](int64_t in, int64_t out) {
            const T std = static_cast<T>(std::sqrt(2.0 / static_cast<double>(in * 9)));
            return std::pair{ag::constant(Tensor<T>::randn({out, in, 3, 3}, prng, std)),
                             ag::constant(Tensor<T>({out}))};
        };
        perc_[0] = frozen_conv(3, 16);
        perc_[1] = frozen_conv(16, 32);
        perc_[2] = frozen_conv(32, 64);
    }

    const VqVaeConfig& config() const { return cfg_; }
    nn::ParamRegistry<T>& gen_params() { return gen_; }
    nn::ParamRegistry<T>& disc_params() { return disc_; }
    const ag::NodeRef<T>& codebook_param() const { return codebook_; }

    Codebook<T> codebook() const { return Codebook<T>{codebook_->value}; }

    ag::NodeRef<T> encode_node(const ag::NodeRef<T>& x) const {
        auto h = ag::silu(enc1_.forward(x));
        h = ag::silu(enc2_.forward(h));
        h = ag::silu(enc3_.forward(h));
        return enc4_.forward(h);
    }

    ag::NodeRef<T> decode_node(const ag::NodeRef<T>& f_hat) const {
        auto h = ag::silu(dec1_.forward(f_hat));
        h = upsample2x(h);
        h = ag::silu(dec2_.forward(h));
        h = upsample2x(h);
        h = ag::silu(dec3_.forward(h));
        return ag::sigmoid(dec4_.forward(h));
    }

    ag::NodeRef<T> discriminate_node(const ag::NodeRef<T>& x) const {
        auto h = ag::leaky_relu(disc1_.forward(x), T(0.2));
        h = ag::leaky_relu(disc2_.forward(h), T(0.2));
        return disc3_.forward(h);
    }

    // Frozen seeded feature stack; mean MSE across its three stages.
    ag::NodeRef<T> perceptual_loss(const ag::NodeRef<T>& a, const ag::NodeRef<T>& b) const {
        ag::NodeRef<T> ha = a, hb = b, loss;
        for (const auto& [w, bias] : perc_) {
            ha = ag::silu(ag::conv2d(ha, w, bias, 2, 1));
            hb = ag::silu(ag::conv2d(hb, w, bias, 2, 1));
            auto term = ag::mse(ha, hb);
            loss = loss ? ag::add(loss, term) : term;
        }
        return ag::scale(loss, T(1) / T(3));
    }

    // Pure single-image helpers (inference mode).
    Tensor<T> encode(const Tensor<T>& image) const {
        if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg_.height || image.dim(2) != cfg_.width)
            throw std::invalid_argument("encode: image must be (3," + std::to_string(cfg_.height) + "," +
                                        std::to_string(cfg_.width) + "), got " + image.shape_str());
        ag::NoGradGuard ng;
        auto x = ag::constant(image.reshaped({1, 3, cfg_.height, cfg_.width}));
        auto f = encode_node(x);
        return f->value.reshaped({cfg_.code_dim, cfg_.latent_h(), cfg_.latent_w()});
    }

    Tensor<T> decode(const Tensor<T>& latent) const {
        if (latent.rank() != 3 || latent.dim(0) != cfg_.code_dim || latent.dim(1) != cfg_.latent_h() ||
            latent.dim(2) != cfg_.latent_w())
            throw std::invalid_argument("decode: latent shape mismatch, got " + latent.shape_str());
        ag::NoGradGuard ng;
        auto z = ag::constant(latent.reshaped({1, cfg_.code_dim, cfg_.latent_h(), cfg_.latent_w()}));
        auto img = decode_node(z);
        return img->value.reshaped({3, cfg_.height, cfg_.width});
    }

    struct QuantGraph {
        std::vector<TokenPyramid> pyramids;  // per sample in the batch
        ag::NodeRef<T> f_hat;                // (B,d,h,w)
        std::vector<ag::NodeRef<T>> q;       // per scale, live codebook embedding
        std::vector<ag::NodeRef<T>> q_st;    // per scale, straight-through r_k -> q_k
        ag::NodeRef<T> aux;                  // codebook + commitment pair
    };

    // Graph-mode residual cascade over a batch latent node (B,d,h,w).
    QuantGraph quantize_graph(const ag::NodeRef<T>& f) const {
        const int64_t bsz = f->value.dim(0), h = f->value.dim(2), w = f->value.dim(3);
        QuantGraph qg;
        qg.pyramids.assign(static_cast<size_t>(bsz), TokenPyramid{cfg_.scales, {}});
        ag::NodeRef<T> residual = f;
        for (const auto& [sh, sw] : cfg_.scales) {
            auto rk = ag::resize2d(residual, resize_mat(h, sh, Kind::area), resize_mat(w, sw, Kind::area));
            auto rows = ag::nchw_to_rows(rk);
            std::vector<int32_t> idx32 = nearest_codebook_rows(rows->value, codebook_->value);
            std::vector<int64_t> idx(idx32.begin(), idx32.end());
            for (int64_t bi = 0; bi < bsz; ++bi) {
                qg.pyramids[static_cast<size_t>(bi)].grids.emplace_back(idx32.begin() + bi * sh * sw,
                                                                        idx32.begin() + (bi + 1) * sh * sw);
            }
            auto qrows = ag::embedding(codebook_, idx);
            auto qk = ag::rows_to_nchw(qrows, bsz, sh, sw);
            auto uk = ag::resize2d(qk, resize_mat(sh, h, Kind::bilinear), resize_mat(sw, w, Kind::bilinear));
            qg.f_hat = qg.f_hat ? ag::add(qg.f_hat, uk) : uk;
            auto codebook_pull = ag::mse(qk, ag::stopgrad(rk));
            auto commit = ag::mse(rk, ag::stopgrad(qk));
            auto aux_k = ag::add(codebook_pull, ag::scale(commit, static_cast<T>(cfg_.commitment_beta)));
            qg.aux = qg.aux ? ag::add(qg.aux, aux_k) : aux_k;
            qg.q.push_back(qk);
            qg.q_st.push_back(ag::straight_through(rk, qk));
            residual = ag::sub(residual, uk);
        }
        return qg;
    }

    void save(const std::filesystem::path& prefix, const json& sidecar_extra = json::object()) const {
        auto named = gen_.named_values();
        auto disc_named = disc_.named_values();
        for (auto& [k, v] : disc_named) named["disc/" + k] = v;
        io::save_tensors(prefix.string() + ".bin", named);
        json side = {{"kind", "vqvae"}, {"config", cfg_.to_json()}};
        for (auto it = sidecar_extra.begin(); it != sidecar_extra.end(); ++it) side[it.key()] = it.value();
        std::ofstream os(prefix.string() + ".json");
        if (!os) throw std::runtime_error("vqvae: cannot write sidecar");
        os << side.dump(2) << "\n";
    }

    static VqVae<T> load(const std::filesystem::path& prefix) {
        std::ifstream is(prefix.string() + ".json");
        if (!is) throw std::runtime_error("vqvae: cannot open sidecar: " + prefix.string() + ".json");
        json side = json::parse(is);
        if (side.at("kind") != "vqvae") throw std::runtime_error("vqvae: checkpoint kind mismatch");
        VqVae<T> model(VqVaeConfig::from_json(side.at("config")));
        auto tensors = io::load_tensors<T>(prefix.string() + ".bin");
        std::map<std::string, Tensor<T>> gen_vals, disc_vals;
        for (auto& [k, v] : tensors) {
            if (k.rfind("disc/", 0) == 0)
                disc_vals.emplace(k.substr(5), std::move(v));
            else
                gen_vals.emplace(k, std::move(v));
        }
        model.gen_.load_values(gen_vals);
        model.disc_.load_values(disc_vals);
        return model;
    }

private:
    enum class Kind { area, bilinear, nearest };

    ag::NodeRef<T> upsample2x(const ag::NodeRef<T>& x) const {
        const int64_t h = x->value.dim(2), w = x->value.dim(3);
        return ag::resize2d(x, resize_mat(h, 2 * h, Kind::nearest), resize_mat(w, 2 * w, Kind::nearest));
    }

    const Tensor<T>& resize_mat(int64_t from, int64_t to, Kind kind) const {
        const int64_t key = (static_cast<int64_t>(kind) << 40) | (from << 20) | to;
        auto it = resize_cache_.find(key);
        if (it != resize_cache_.end()) return it->second;
        Tensor<T> m;
        switch (kind) {
            case Kind::area: m = ag::area_resize_matrix<T>(from, to); break;
            case Kind::bilinear: m = ag::bilinear_resize_matrix<T>(from, to); break;
            case Kind::nearest: m = ag::nearest_resize_matrix<T>(from, to); break;
        }
        return resize_cache_.emplace(key, std::move(m)).first->second;
    }

    VqVaeConfig cfg_;
    nn::ParamRegistry<T> gen_;
    nn::ParamRegistry<T> disc_;
    nn::Conv2d<T> enc1_, enc2_, enc3_, enc4_;
    nn::Conv2d<T> dec1_, dec2_, dec3_, dec4_;
    nn::Conv2d<T> disc1_, disc2_, disc3_;
    ag::NodeRef<T> codebook_;
    std::array<std::pair<ag::NodeRef<T>, ag::NodeRef<T>>, 3> perc_;
    mutable std::map<int64_t, Tensor<T>> resize_cache_;
};

struct EpochStats {
    double pixel = 0, lesion_focus = 0, feature = 0, perceptual = 0, adversarial = 0, vq_aux = 0, disc = 0,
           total = 0;

    json to_json() const {
        return {{"pixel", pixel},           {"lesion_focus", lesion_focus}, {"feature", feature},
                {"perceptual", perceptual}, {"adversarial", adversarial},   {"vq_aux", vq_aux},
                {"disc", disc},             {"total", total}};
    }
};

struct VqVaeTrainReport {
    std::vector<EpochStats> epochs;
    bool aborted = false;
    std::string abort_reason;

    json to_json() const {
        json e = json::array();
        for (const auto& s : epochs) e.push_back(s.to_json());
        return {{"epochs", e}, {"aborted", aborted}, {"abort_reason", abort_reason}};
    }
};

// Deterministic training loop over in-memory samples. On a NaN total the last
// end-of-epoch snapshot is restored and training stops.
template <typename T>
VqVaeTrainReport train_vqvae(VqVae<T>& model, const std::vector<data::ImageSample>& samples,
                             std::ostream* log = nullptr) {
    const VqVaeConfig& cfg = model.config();
    if (samples.empty()) throw std::invalid_argument("train_vqvae: empty training set");
    VqVaeTrainReport report;
    if (cfg.epochs <= 0) return report;

    const int64_t hN = cfg.height, wN = cfg.width;
    std::vector<MaskPyramid> mask_pyrs;
    mask_pyrs.reserve(samples.size());
    for (const auto& s : samples) mask_pyrs.push_back(build_mask_pyramid(s.mask, cfg.scales));

    Rng rng(cfg.seed ^ 0x7aa1u);

    // Data-dependent codebook init: sample latent cells from the first batch.
    {
        ag::NoGradGuard ng;
        const int64_t n0 = std::min<int64_t>(static_cast<int64_t>(samples.size()), cfg.batch_size);
        Tensor<T> batch({n0, 3, hN, wN});
        for (int64_t i = 0; i < n0; ++i)
            for (int64_t j = 0; j < 3 * hN * wN; ++j)
                batch[i * 3 * hN * wN + j] = static_cast<T>(samples[static_cast<size_t>(i)].image[j]);
        auto f = model.encode_node(ag::constant(batch));
        const int64_t cells = n0 * cfg.latent_h() * cfg.latent_w();
        const int64_t d = cfg.code_dim;
        Tensor<T>& cb = model.codebook_param()->value;
        Rng crng = rng.fork(11);
        for (int64_t vi = 0; vi < cfg.vocab; ++vi) {
            const int64_t cell = static_cast<int64_t>(crng.uniform_int(static_cast<uint64_t>(cells)));
            const int64_t b = cell / (cfg.latent_h() * cfg.latent_w());
            const int64_t sp = cell % (cfg.latent_h() * cfg.latent_w());
            for (int64_t k = 0; k < d; ++k) {
                const T val = f->value[(b * d + k) * cfg.latent_h() * cfg.latent_w() + sp];
                cb[vi * d + k] = val + static_cast<T>(crng.normal(0.0, 1e-3));
            }
        }
    }

    nn::AdamWConfig oc{cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay};
    nn::AdamW<T> opt_gen(model.gen_params().params(), oc);
    nn::AdamW<T> opt_disc(model.disc_params().params(), oc);

    auto snapshot = model.gen_params().snapshot();
    auto disc_snapshot = model.disc_params().snapshot();

    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = rng.fork(static_cast<uint64_t>(epoch) + 100);
        erng.shuffle(order);
        const bool gan_on = epoch >= cfg.gan_warmup_epochs && cfg.lambda_g > 0;

        EpochStats stats;
        int64_t seen = 0;
        bool nan_hit = false;
        for (size_t start = 0; start < order.size() && !nan_hit; start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            const int64_t bsz = static_cast<int64_t>(end - start);
            Tensor<T> batch({bsz, 3, hN, wN});
            std::vector<MaskPyramid> batch_masks;
            for (size_t i = start; i < end; ++i) {
                const auto& s = samples[order[i]];
                for (int64_t j = 0; j < 3 * hN * wN; ++j)
                    batch[static_cast<int64_t>(i - start) * 3 * hN * wN + j] = static_cast<T>(s.image[j]);
                batch_masks.push_back(mask_pyrs[order[i]]);
            }
            auto x = ag::constant(batch);

            auto f = model.encode_node(x);
            auto qg = model.quantize_graph(f);
            auto f_hat_st = ag::straight_through(f, qg.f_hat);
            auto recon = model.decode_node(f_hat_st);

            // lesion-focus branch: re-encode the reconstruction, straight-through assignment
            std::vector<ag::NodeRef<T>> real_grids, recon_grids;
            if (cfg.lesion_focus) {
                auto f2 = model.encode_node(recon);
                auto qg2 = model.quantize_graph(f2);
                for (size_t k = 0; k < qg.q.size(); ++k) {
                    real_grids.push_back(ag::stopgrad(qg.q[k]));
                    recon_grids.push_back(qg2.q_st[k]);
                }
            }

            auto perceptual = cfg.lambda_p > 0 ? model.perceptual_loss(x, recon) : ag::NodeRef<T>();
            ag::NodeRef<T> adversarial;
            if (gan_on) adversarial = ag::scale(ag::mean_all(model.discriminate_node(recon)), T(-1));

            auto breakdown = [&]() {
                try {
                    return vqvae_loss(x, recon, real_grids, recon_grids, f, qg.f_hat, batch_masks, perceptual,
                                      adversarial, cfg.lambda_p, cfg.lambda_g, cfg.lesion_focus);
                } catch (const std::runtime_error&) {
                    return LossBreakdown<T>{};  // NaN: handled below
                }
            }();
            const double aux_val = static_cast<double>(qg.aux->value[0]);
            if (!breakdown.total_node || !std::isfinite(breakdown.total + aux_val)) {
                nan_hit = true;
                break;
            }

            auto objective = ag::add(breakdown.total_node, qg.aux);
            opt_gen.zero_grad();
            ag::backward(objective);
            opt_gen.step();

            double disc_loss = 0;
            if (gan_on) {
                auto d_real = model.discriminate_node(x);
                auto d_fake = model.discriminate_node(ag::constant(recon->value));
                auto ones_r = ag::add_scalar(ag::scale(d_real, T(-1)), T(1));
                auto ones_f = ag::add_scalar(d_fake, T(1));
                auto dl = ag::add(ag::mean_all(ag::relu(ones_r)), ag::mean_all(ag::relu(ones_f)));
                disc_loss = static_cast<double>(dl->value[0]);
                if (!std::isfinite(disc_loss)) {
                    nan_hit = true;
                    break;
                }
                opt_disc.zero_grad();
                ag::backward(dl);
                opt_disc.step();
            }

            const double wgt = static_cast<double>(bsz);
            stats.pixel += breakdown.pixel * wgt;
            stats.lesion_focus += breakdown.lesion_focus * wgt;
            stats.feature += breakdown.feature * wgt;
            stats.perceptual += breakdown.perceptual * wgt;
            stats.adversarial += breakdown.adversarial * wgt;
            stats.vq_aux += aux_val * wgt;
            stats.disc += disc_loss * wgt;
            stats.total += breakdown.total * wgt;
            seen += bsz;
        }

        if (nan_hit) {
            model.gen_params().restore(snapshot);
            model.disc_params().restore(disc_snapshot);
            report.aborted = true;
            report.abort_reason = "non-finite loss at epoch " + std::to_string(epoch) + "; restored last checkpoint";
            if (log) (*log) << "[vqvae] " << report.abort_reason << "\n";
            break;
        }

        const double inv = 1.0 / static_cast<double>(seen);
        stats.pixel *= inv;
        stats.lesion_focus *= inv;
        stats.feature *= inv;
        stats.perceptual *= inv;
        stats.adversarial *= inv;
        stats.vq_aux *= inv;
        stats.disc *= inv;
        stats.total *= inv;
        report.epochs.push_back(stats);
        snapshot = model.gen_params().snapshot();
        disc_snapshot = model.disc_params().snapshot();
        if (log) {
            (*log) << "[vqvae] epoch " << epoch + 1 << "/" << cfg.epochs << " pixel=" << stats.pixel
                   << " lf=" << stats.lesion_focus << " feat=" << stats.feature << " perc=" << stats.perceptual
                   << " adv=" << stats.adversarial << " vq=" << stats.vq_aux << " disc=" << stats.disc << "\n";
        }
    }
    return report;
}

}  // namespace lesyn::tok
