#pragma once

#include <optional>
#include <ostream>

#include "lesyn/nn/optim.hpp"
#include "lesyn/tokenizer/vqvae.hpp"
#include "lesyn/var/model.hpp"

// Stage-2 wiring: tokenize a dataset, train the conditioned next-scale
// transformer, and run the intra-/inter-class synthesis paths
// (measurements -> condition tokens -> generate -> dequantize -> decode).

namespace lesyn::var {

template <typename T>
struct VarTrainItem {
    TokenPyramid pyramid;
    int label = 0;
    measure::MeasurementVector raw;  // unnormalized extraction from the source image
    std::string sample_id;
};

// Deterministic preprocessing: encode + quantize every sample and extract its
// measurement vector.
template <typename T>
std::vector<VarTrainItem<T>> prepare_var_items(const tok::VqVae<T>& tokenizer,
                                               const std::vector<data::ImageSample>& samples) {
    std::vector<VarTrainItem<T>> items;
    items.reserve(samples.size());
    const auto cb = tokenizer.codebook();
    for (const auto& s : samples) {
        VarTrainItem<T> it;
        Tensor<T> img({3, s.image.dim(1), s.image.dim(2)});
        for (int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<T>(s.image[i]);
        const Tensor<T> f = tokenizer.encode(img);
        it.pyramid = tok::quantize_multiscale(f, cb, tokenizer.config().scales).pyramid;
        it.label = s.label;
        it.raw = measure::extract_measurements(s.image, s.mask);
        it.sample_id = s.sample_id;
        items.push_back(std::move(it));
    }
    return items;
}

// The FM ablation conditions on this constant vector (the normalized-space
// origin, i.e. the dataset-mean measurement) for every sample.
inline measure::MeasurementVector fixed_measurement_vector() { return measure::MeasurementVector{}; }

// Normalized measurement vector a model conditions on for one sample, according
// to its conditioning mode. `source_cls` overrides the codebook class (inter-class).
template <typename T>
std::optional<measure::MeasurementVector> conditioning_vector(const VarModel<T>& model,
                                                              const measure::MeasurementNormalizer& norm,
                                                              const measure::MeasurementVector* raw,
                                                              const cond::MeasurementCodebook* codebook, int cls,
                                                              int source_cls = -1) {
    switch (model.config().conditioning) {
        case MeasurementConditioning::none:
            return std::nullopt;
        case MeasurementConditioning::fixed:
            return fixed_measurement_vector();
        case MeasurementConditioning::extracted:
            if (!raw) throw std::invalid_argument("conditioning: extracted mode needs a measurement vector");
            return measure::normalize(*raw, norm);
        case MeasurementConditioning::codebook: {
            if (!codebook) throw std::invalid_argument("conditioning: codebook mode needs a measurement codebook");
            const int query_cls = source_cls >= 0 ? source_cls : cls;
            return measure::normalize(codebook->query(query_cls), norm);
        }
    }
    return std::nullopt;
}

struct VarTrainReport {
    std::vector<double> epoch_loss;
    bool aborted = false;
    std::string abort_reason;

    nlohmann::json to_json() const {
        return {{"epoch_loss", epoch_loss}, {"aborted", aborted}, {"abort_reason", abort_reason}};
    }
};

// Teacher-forced training. In codebook (AM) mode each visited sample first
// updates the class running mean, then conditions on the current mean.
template <typename T>
VarTrainReport train_var(VarModel<T>& model, const std::vector<VarTrainItem<T>>& items,
                         const measure::MeasurementNormalizer& norm, cond::MeasurementCodebook* codebook,
                         std::ostream* log = nullptr) {
    const VarConfig& cfg = model.config();
    if (items.empty()) throw std::invalid_argument("train_var: no training items");
    if (cfg.conditioning == MeasurementConditioning::codebook && !codebook)
        throw std::invalid_argument("train_var: codebook conditioning requires a measurement codebook");

    VarTrainReport report;
    if (cfg.epochs <= 0) return report;

    nn::AdamWConfig oc{cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay};
    nn::AdamW<T> opt(model.params().params(), oc);
    auto snapshot = model.params().snapshot();

    Rng rng(cfg.seed ^ 0x7a57ul);
    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = rng.fork(static_cast<uint64_t>(epoch) + 7);
        erng.shuffle(order);
        double epoch_loss = 0;
        int64_t seen = 0;
        bool nan_hit = false;
        for (size_t start = 0; start < order.size() && !nan_hit; start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            const int64_t bsz = static_cast<int64_t>(end - start);
            ag::NodeRef<T> batch_loss;
            for (size_t i = start; i < end; ++i) {
                const auto& it = items[order[i]];
                std::optional<measure::MeasurementVector> v;
                if (cfg.conditioning == MeasurementConditioning::codebook) {
                    codebook->update(it.label, it.raw);
                    v = conditioning_vector(model, norm, &it.raw, codebook, it.label);
                } else {
                    v = conditioning_vector(model, norm, &it.raw, codebook, it.label);
                }
                auto cond_rows = model.condition_rows(it.label, v ? &*v : nullptr);
                auto logits = model.forward_train(cond_rows, it.pyramid);
                auto loss = next_scale_loss(logits, it.pyramid);
                batch_loss = batch_loss ? ag::add(batch_loss, loss) : loss;
            }
            batch_loss = ag::scale(batch_loss, T(1) / static_cast<T>(bsz));
            const double lv = static_cast<double>(batch_loss->value[0]);
            if (!std::isfinite(lv)) {
                nan_hit = true;
                break;
            }
            opt.zero_grad();
            ag::backward(batch_loss);
            opt.step();
            epoch_loss += lv * static_cast<double>(bsz);
            seen += bsz;
        }
        if (nan_hit) {
            model.params().restore(snapshot);
            report.aborted = true;
            report.abort_reason = "non-finite loss at epoch " + std::to_string(epoch) + "; restored last checkpoint";
            if (log) (*log) << "[var] " << report.abort_reason << "\n";
            break;
        }
        epoch_loss /= static_cast<double>(seen);
        report.epoch_loss.push_back(epoch_loss);
        snapshot = model.params().snapshot();
        if (log) (*log) << "[var] epoch " << epoch + 1 << "/" << cfg.epochs << " ce=" << epoch_loss << "\n";
    }
    return report;
}

// generate -> dequantize -> decode for a prepared condition.
template <typename T>
Tensor<T> synthesize_from_condition(const tok::VqVae<T>& tokenizer, const VarModel<T>& model,
                                    const Tensor<T>& cond_rows, const SamplerConfig& sampler) {
    const TokenPyramid p = model.generate(cond_rows, sampler);
    const auto& tc = tokenizer.config();
    const Tensor<T> f_hat = tok::dequantize(p, tokenizer.codebook(), tc.latent_h(), tc.latent_w());
    return tokenizer.decode(f_hat);
}

// Condition rows as plain values (inference mode).
template <typename T>
Tensor<T> condition_values(const VarModel<T>& model, int cls, const measure::MeasurementVector* v_normalized) {
    ag::NoGradGuard ng;
    return model.condition_rows(cls, v_normalized)->value;
}

// Intra-class synthesis: condition on the source image's own measurements.
template <typename T>
Tensor<T> synthesize_intra(const tok::VqVae<T>& tokenizer, const VarModel<T>& model,
                           const measure::MeasurementNormalizer& norm, const Tensor<float>& image,
                           const Tensor<uint8_t>& mask, int cls, const SamplerConfig& sampler) {
    const measure::MeasurementVector raw = measure::extract_measurements(image, mask);
    const auto v = conditioning_vector(model, norm, &raw, nullptr, cls);
    const Tensor<T> cond = condition_values(model, cls, v ? &*v : nullptr);
    return synthesize_from_condition(tokenizer, model, cond, sampler);
}

// Inter-class synthesis: target class label, source class average measurements.
template <typename T>
Tensor<T> synthesize_inter(const tok::VqVae<T>& tokenizer, const VarModel<T>& model,
                           const measure::MeasurementNormalizer& norm, const cond::MeasurementCodebook& codebook,
                           int target_cls, int source_cls, const SamplerConfig& sampler) {
    std::optional<measure::MeasurementVector> v;
    switch (model.config().conditioning) {
        case MeasurementConditioning::none: v = std::nullopt; break;
        case MeasurementConditioning::fixed: v = fixed_measurement_vector(); break;
        default: v = measure::normalize(codebook.query(source_cls), norm); break;
    }
    const Tensor<T> cond = condition_values(model, target_cls, v ? &*v : nullptr);
    return synthesize_from_condition(tokenizer, model, cond, sampler);
}

}  // namespace lesyn::var
