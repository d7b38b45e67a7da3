#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lesyn/core/ops.hpp"
#include "lesyn/core/ops_conv.hpp"

namespace lesyn::nn {

using ag::NodeRef;

// Flat named-parameter registry; modules register their leaves here so that
// optimizers and checkpoints see one list.
template <typename T>
class ParamRegistry {
public:
    NodeRef<T> add(const std::string& name, Tensor<T> init) {
        auto p = ag::param(std::move(init));
        names_.push_back(name);
        params_.push_back(p);
        return p;
    }

    const std::vector<NodeRef<T>>& params() const { return params_; }
    const std::vector<std::string>& names() const { return names_; }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    NodeRef<T> find(const std::string& name) const {
        for (size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return params_[i];
        return nullptr;
    }

    std::map<std::string, const Tensor<T>*> named_values() const {
        std::map<std::string, const Tensor<T>*> out;
        for (size_t i = 0; i < names_.size(); ++i) out[names_[i]] = &params_[i]->value;
        return out;
    }

    void load_values(const std::map<std::string, Tensor<T>>& values) {
        for (size_t i = 0; i < names_.size(); ++i) {
            auto it = values.find(names_[i]);
            if (it == values.end()) throw std::runtime_error("checkpoint missing parameter: " + names_[i]);
            if (!(it->second.shape() == params_[i]->value.shape()))
                throw std::runtime_error("checkpoint shape mismatch for parameter: " + names_[i]);
            params_[i]->value = it->second;
        }
    }

    // Deep copy / restore of the raw values (used for last-good snapshots).
    std::vector<Tensor<T>> snapshot() const {
        std::vector<Tensor<T>> s;
        s.reserve(params_.size());
        for (const auto& p : params_) s.push_back(p->value);
        return s;
    }
    void restore(const std::vector<Tensor<T>>& s) {
        for (size_t i = 0; i < params_.size(); ++i) params_[i]->value = s[i];
    }

private:
    std::vector<std::string> names_;
    std::vector<NodeRef<T>> params_;
};

template <typename T>
struct Linear {
    NodeRef<T> weight;  // (out, in)
    NodeRef<T> bias;    // (out)

    Linear() = default;
    Linear(ParamRegistry<T>& reg, const std::string& name, int64_t in, int64_t out, Rng& rng) {
        const T std = static_cast<T>(std::sqrt(2.0 / static_cast<double>(in + out)));
        weight = reg.add(name + ".weight", Tensor<T>::randn({out, in}, rng, std));
        bias = reg.add(name + ".bias", Tensor<T>({out}));
    }

    NodeRef<T> forward(const NodeRef<T>& x) const { return ag::add_rowvec(ag::matmul_nt(x, weight), bias); }
};

template <typename T>
struct Conv2d {
    NodeRef<T> weight;  // (out, in, k, k)
    NodeRef<T> bias;    // (out)
    int64_t stride = 1;
    int64_t pad = 0;

    Conv2d() = default;
    Conv2d(ParamRegistry<T>& reg, const std::string& name, int64_t in, int64_t out, int64_t k, int64_t stride_,
           int64_t pad_, Rng& rng) : stride(stride_), pad(pad_) {
        const T std = static_cast<T>(std::sqrt(2.0 / static_cast<double>(in * k * k)));
        weight = reg.add(name + ".weight", Tensor<T>::randn({out, in, k, k}, rng, std));
        bias = reg.add(name + ".bias", Tensor<T>({out}));
    }

    NodeRef<T> forward(const NodeRef<T>& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
};

template <typename T>
struct LayerNorm {
    NodeRef<T> gamma;
    NodeRef<T> beta;

    LayerNorm() = default;
    LayerNorm(ParamRegistry<T>& reg, const std::string& name, int64_t d) {
        gamma = reg.add(name + ".gamma", Tensor<T>({d}, T(1)));
        beta = reg.add(name + ".beta", Tensor<T>({d}));
    }

    NodeRef<T> forward(const NodeRef<T>& x) const { return ag::layernorm_rows(x, gamma, beta); }
};

}  // namespace lesyn::nn
