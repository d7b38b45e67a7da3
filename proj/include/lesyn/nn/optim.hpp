#pragma once

#include <cmath>
#include <vector>

#include "lesyn/core/autograd.hpp"

namespace lesyn::nn {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Decoupled weight decay Adam over a fixed parameter list.
template <typename T>
class AdamW {
public:
    AdamW(std::vector<ag::NodeRef<T>> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p->grad_ready) continue;
            T* w = p->value.data();
            const T* g = p->grad.data();
            T* m = m_[i].data();
            T* v = v_[i].data();
            const int64_t n = p->value.numel();
            for (int64_t j = 0; j < n; ++j) {
                const double gj = static_cast<double>(g[j]);
                const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
                const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                double wj = static_cast<double>(w[j]);
                wj -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * wj);
                w[j] = static_cast<T>(wj);
            }
        }
    }

    int64_t steps() const { return t_; }

private:
    std::vector<ag::NodeRef<T>> params_;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
};

}  // namespace lesyn::nn
