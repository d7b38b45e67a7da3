#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lesyn/core/autograd.hpp"

// Differentiable tensor ops (elementwise, matrix, sequence, losses).
// Convolution / resize / pooling live in ops_conv.hpp.

namespace lesyn::ag {

namespace detail {

template <typename T>
void check_same_shape(const NodeRef<T>& a, const NodeRef<T>& b, const char* what) {
    if (!a->value.same_shape(b->value)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a->value.shape_str() + " vs " +
                                    b->value.shape_str());
    }
}

}  // namespace detail

template <typename T>
NodeRef<T> add(const NodeRef<T>& a, const NodeRef<T>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<T> out = a->value;
    const T* bd = b->value.data();
    T* od = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) od[i] += bd[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        accumulate(a, n.grad);
        accumulate(b, n.grad);
    });
}

template <typename T>
NodeRef<T> sub(const NodeRef<T>& a, const NodeRef<T>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<T> out = a->value;
    const T* bd = b->value.data();
    T* od = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) od[i] -= bd[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        accumulate(a, n.grad);
        if (b->requires_grad) {
            Tensor<T> gb = n.grad;
            for (auto& x : gb.vec()) x = -x;
            accumulate(b, gb);
        }
    });
}

template <typename T>
NodeRef<T> mul(const NodeRef<T>& a, const NodeRef<T>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<T> out = a->value;
    const T* bd = b->value.data();
    T* od = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) od[i] *= bd[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) {
            Tensor<T> ga = n.grad;
            const T* bv = b->value.data();
            for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= bv[i];
            accumulate(a, ga);
        }
        if (b->requires_grad) {
            Tensor<T> gb = n.grad;
            const T* av = a->value.data();
            for (int64_t i = 0; i < gb.numel(); ++i) gb[i] *= av[i];
            accumulate(b, gb);
        }
    });
}

template <typename T>
NodeRef<T> scale(const NodeRef<T>& a, T s) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x *= s;
    return make_op<T>(std::move(out), {a}, [a, s](Node<T>& n) {
        Tensor<T> ga = n.grad;
        for (auto& x : ga.vec()) x *= s;
        accumulate(a, ga);
    });
}

template <typename T>
NodeRef<T> add_scalar(const NodeRef<T>& a, T s) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x += s;
    return make_op<T>(std::move(out), {a}, [a](Node<T>& n) { accumulate(a, n.grad); });
}

// X (n x d) + v broadcast over rows; v may be shaped (d) or (1 x d).
template <typename T>
NodeRef<T> add_rowvec(const NodeRef<T>& x, const NodeRef<T>& v) {
    const int64_t n = x->value.dim(0), d = x->value.dim(1);
    if (v->value.numel() != d) throw std::invalid_argument("add_rowvec: width mismatch");
    Tensor<T> out = x->value;
    const T* vd = v->value.data();
    for (int64_t i = 0; i < n; ++i) {
        T* row = out.data() + i * d;
        for (int64_t j = 0; j < d; ++j) row[j] += vd[j];
    }
    return make_op<T>(std::move(out), {x, v}, [x, v, n, d](Node<T>& nd) {
        accumulate(x, nd.grad);
        if (v->requires_grad) {
            Tensor<T> gv(v->value.shape());
            for (int64_t i = 0; i < n; ++i) {
                const T* row = nd.grad.data() + i * d;
                for (int64_t j = 0; j < d; ++j) gv[j] += row[j];
            }
            accumulate(v, gv);
        }
    });
}

// v (d) or (1 x d) replicated to (n x d).
template <typename T>
NodeRef<T> broadcast_row(const NodeRef<T>& v, int64_t n) {
    const int64_t d = v->value.numel();
    Tensor<T> out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        T* row = out.data() + i * d;
        for (int64_t j = 0; j < d; ++j) row[j] = v->value[j];
    }
    return make_op<T>(std::move(out), {v}, [v, n, d](Node<T>& nd) {
        if (!v->requires_grad) return;
        Tensor<T> gv(v->value.shape());
        for (int64_t i = 0; i < n; ++i) {
            const T* row = nd.grad.data() + i * d;
            for (int64_t j = 0; j < d; ++j) gv[j] += row[j];
        }
        accumulate(v, gv);
    });
}

template <typename T>
NodeRef<T> matmul(const NodeRef<T>& a, const NodeRef<T>& b) {
    const int64_t m = a->value.dim(0), k = a->value.dim(1);
    if (b->value.dim(0) != k) throw std::invalid_argument("matmul: inner dimension mismatch");
    const int64_t n = b->value.dim(1);
    Tensor<T> out({m, n});
    out.mat().noalias() = a->value.mat() * b->value.mat();
    return make_op<T>(std::move(out), {a, b}, [a, b, m, k, n](Node<T>& nd) {
        auto g = nd.grad.mat(m, n);
        if (a->requires_grad) {
            Tensor<T> ga({m, k});
            ga.mat().noalias() = g * b->value.mat().transpose();
            accumulate(a, ga);
        }
        if (b->requires_grad) {
            Tensor<T> gb({k, n});
            gb.mat().noalias() = a->value.mat().transpose() * g;
            accumulate(b, gb);
        }
    });
}

// A (m x k) * B^T where B is (n x k); the natural layout for Linear weights.
template <typename T>
NodeRef<T> matmul_nt(const NodeRef<T>& a, const NodeRef<T>& b) {
    const int64_t m = a->value.dim(0), k = a->value.dim(1);
    if (b->value.dim(1) != k) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
    const int64_t n = b->value.dim(0);
    Tensor<T> out({m, n});
    out.mat().noalias() = a->value.mat() * b->value.mat().transpose();
    return make_op<T>(std::move(out), {a, b}, [a, b, m, k, n](Node<T>& nd) {
        auto g = nd.grad.mat(m, n);
        if (a->requires_grad) {
            Tensor<T> ga({m, k});
            ga.mat().noalias() = g * b->value.mat();
            accumulate(a, ga);
        }
        if (b->requires_grad) {
            Tensor<T> gb({n, k});
            gb.mat().noalias() = g.transpose() * a->value.mat();
            accumulate(b, gb);
        }
    });
}

template <typename T>
NodeRef<T> transpose(const NodeRef<T>& a) {
    const int64_t m = a->value.dim(0), n = a->value.dim(1);
    Tensor<T> out({n, m});
    out.mat() = a->value.mat().transpose();
    return make_op<T>(std::move(out), {a}, [a, m, n](Node<T>& nd) {
        Tensor<T> ga({m, n});
        ga.mat() = nd.grad.mat(n, m).transpose();
        accumulate(a, ga);
    });
}

template <typename T>
NodeRef<T> reshape(const NodeRef<T>& a, std::vector<int64_t> shape) {
    Tensor<T> out = a->value.reshaped(std::move(shape));
    return make_op<T>(std::move(out), {a}, [a](Node<T>& nd) {
        accumulate(a, nd.grad.reshaped(a->value.shape()));
    });
}

template <typename T>
NodeRef<T> slice_rows(const NodeRef<T>& a, int64_t r0, int64_t nrows) {
    const int64_t n = a->value.dim(0), d = a->value.dim(1);
    if (r0 < 0 || r0 + nrows > n) throw std::out_of_range("slice_rows: range out of bounds");
    Tensor<T> out({nrows, d});
    std::copy(a->value.data() + r0 * d, a->value.data() + (r0 + nrows) * d, out.data());
    return make_op<T>(std::move(out), {a}, [a, r0, nrows, d](Node<T>& nd) {
        if (!a->requires_grad) return;
        Tensor<T> ga(a->value.shape());
        std::copy(nd.grad.data(), nd.grad.data() + nrows * d, ga.data() + r0 * d);
        accumulate(a, ga);
    });
}

template <typename T>
NodeRef<T> concat_rows(const std::vector<NodeRef<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const int64_t d = parts[0]->value.dim(1);
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p->value.dim(1) != d) throw std::invalid_argument("concat_rows: width mismatch");
        total += p->value.dim(0);
    }
    Tensor<T> out({total, d});
    int64_t r = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data(), p->value.data() + p->value.numel(), out.data() + r * d);
        r += p->value.dim(0);
    }
    return make_op<T>(std::move(out), parts, [parts, d](Node<T>& nd) {
        int64_t r = 0;
        for (const auto& p : parts) {
            const int64_t rows = p->value.dim(0);
            if (p->requires_grad) {
                Tensor<T> gp({rows, d});
                std::copy(nd.grad.data() + r * d, nd.grad.data() + (r + rows) * d, gp.data());
                accumulate(p, gp);
            }
            r += rows;
        }
    });
}

template <typename T>
NodeRef<T> slice_cols(const NodeRef<T>& a, int64_t c0, int64_t ncols) {
    const int64_t n = a->value.dim(0), d = a->value.dim(1);
    if (c0 < 0 || c0 + ncols > d) throw std::out_of_range("slice_cols: range out of bounds");
    Tensor<T> out({n, ncols});
    for (int64_t i = 0; i < n; ++i) {
        std::copy(a->value.data() + i * d + c0, a->value.data() + i * d + c0 + ncols, out.data() + i * ncols);
    }
    return make_op<T>(std::move(out), {a}, [a, c0, ncols, n, d](Node<T>& nd) {
        if (!a->requires_grad) return;
        Tensor<T> ga(a->value.shape());
        for (int64_t i = 0; i < n; ++i) {
            const T* g = nd.grad.data() + i * ncols;
            T* dst = ga.data() + i * d + c0;
            for (int64_t j = 0; j < ncols; ++j) dst[j] = g[j];
        }
        accumulate(a, ga);
    });
}

template <typename T>
NodeRef<T> concat_cols(const std::vector<NodeRef<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const int64_t n = parts[0]->value.dim(0);
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p->value.dim(0) != n) throw std::invalid_argument("concat_cols: row count mismatch");
        total += p->value.dim(1);
    }
    Tensor<T> out({n, total});
    int64_t c = 0;
    for (const auto& p : parts) {
        const int64_t pc = p->value.dim(1);
        for (int64_t i = 0; i < n; ++i) {
            std::copy(p->value.data() + i * pc, p->value.data() + (i + 1) * pc, out.data() + i * total + c);
        }
        c += pc;
    }
    return make_op<T>(std::move(out), parts, [parts, n, total](Node<T>& nd) {
        int64_t c = 0;
        for (const auto& p : parts) {
            const int64_t pc = p->value.dim(1);
            if (p->requires_grad) {
                Tensor<T> gp({n, pc});
                for (int64_t i = 0; i < n; ++i) {
                    const T* g = nd.grad.data() + i * total + c;
                    std::copy(g, g + pc, gp.data() + i * pc);
                }
                accumulate(p, gp);
            }
            c += pc;
        }
    });
}

// table (V x d), idx values in [0, V) -> (len(idx) x d).
template <typename T>
NodeRef<T> embedding(const NodeRef<T>& table, std::vector<int64_t> idx) {
    const int64_t v = table->value.dim(0), d = table->value.dim(1);
    Tensor<T> out({static_cast<int64_t>(idx.size()), d});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= v) throw std::out_of_range("embedding: index out of range");
        std::copy(table->value.data() + idx[i] * d, table->value.data() + (idx[i] + 1) * d,
                  out.data() + static_cast<int64_t>(i) * d);
    }
    return make_op<T>(std::move(out), {table}, [table, idx = std::move(idx), d](Node<T>& nd) {
        if (!table->requires_grad) return;
        Tensor<T> gt(table->value.shape());
        for (size_t i = 0; i < idx.size(); ++i) {
            const T* g = nd.grad.data() + static_cast<int64_t>(i) * d;
            T* dst = gt.data() + idx[i] * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
        }
        accumulate(table, gt);
    });
}

// ---- activations ----

template <typename T>
NodeRef<T> relu(const NodeRef<T>& a) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x = x > T(0) ? x : T(0);
    return make_op<T>(std::move(out), {a}, [a](Node<T>& nd) {
        Tensor<T> ga = nd.grad;
        const T* v = a->value.data();
        for (int64_t i = 0; i < ga.numel(); ++i)
            if (v[i] <= T(0)) ga[i] = T(0);
        accumulate(a, ga);
    });
}

template <typename T>
NodeRef<T> leaky_relu(const NodeRef<T>& a, T alpha) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x = x > T(0) ? x : alpha * x;
    return make_op<T>(std::move(out), {a, }, [a, alpha](Node<T>& nd) {
        Tensor<T> ga = nd.grad;
        const T* v = a->value.data();
        for (int64_t i = 0; i < ga.numel(); ++i)
            if (v[i] <= T(0)) ga[i] *= alpha;
        accumulate(a, ga);
    });
}

template <typename T>
NodeRef<T> sigmoid(const NodeRef<T>& a) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x = T(1) / (T(1) + std::exp(-x));
    auto node = make_op<T>(std::move(out), {a}, [a](Node<T>& nd) {
        Tensor<T> ga = nd.grad;
        const T* y = nd.value.data();
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= y[i] * (T(1) - y[i]);
        accumulate(a, ga);
    });
    return node;
}

template <typename T>
NodeRef<T> silu(const NodeRef<T>& a) {
    Tensor<T> out = a->value;
    for (auto& x : out.vec()) x = x / (T(1) + std::exp(-x));
    return make_op<T>(std::move(out), {a}, [a](Node<T>& nd) {
        Tensor<T> ga = nd.grad;
        const T* v = a->value.data();
        for (int64_t i = 0; i < ga.numel(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-v[i]));
            ga[i] *= s * (T(1) + v[i] * (T(1) - s));
        }
        accumulate(a, ga);
    });
}

// ---- normalization / attention ----

// Layer norm over the last dimension of a (n x d) matrix, learned affine.
template <typename T>
NodeRef<T> layernorm_rows(const NodeRef<T>& x, const NodeRef<T>& gamma, const NodeRef<T>& beta, T eps = T(1e-5)) {
    const int64_t n = x->value.dim(0), d = x->value.dim(1);
    if (gamma->value.numel() != d || beta->value.numel() != d)
        throw std::invalid_argument("layernorm: affine parameter width mismatch");
    Tensor<T> out({n, d});
    Tensor<T> xhat({n, d});
    Tensor<T> inv_sigma({n});
    for (int64_t i = 0; i < n; ++i) {
        const T* row = x->value.data() + i * d;
        T mean = T(0);
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (int64_t j = 0; j < d; ++j) {
            const T h = (row[j] - mean) * is;
            xhat.at2(i, j) = h;
            out.at2(i, j) = h * gamma->value[j] + beta->value[j];
        }
    }
    return make_op<T>(std::move(out), {x, gamma, beta},
                      [x, gamma, beta, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), n, d](Node<T>& nd) {
        Tensor<T> gx({n, d});
        Tensor<T> ggamma(gamma->value.shape());
        Tensor<T> gbeta(beta->value.shape());
        for (int64_t i = 0; i < n; ++i) {
            const T* gy = nd.grad.data() + i * d;
            const T* h = xhat.data() + i * d;
            T sum_gyg = T(0), sum_gygh = T(0);
            for (int64_t j = 0; j < d; ++j) {
                const T gg = gy[j] * gamma->value[j];
                sum_gyg += gg;
                sum_gygh += gg * h[j];
                ggamma[j] += gy[j] * h[j];
                gbeta[j] += gy[j];
            }
            const T inv_d = T(1) / static_cast<T>(d);
            for (int64_t j = 0; j < d; ++j) {
                const T gg = gy[j] * gamma->value[j];
                gx.at2(i, j) = inv_sigma[i] * (gg - inv_d * sum_gyg - h[j] * inv_d * sum_gygh);
            }
        }
        accumulate(x, gx);
        accumulate(gamma, ggamma);
        accumulate(beta, gbeta);
    });
}

// Row softmax; `add_mask` (optional, same shape) is added to the logits first.
template <typename T>
NodeRef<T> softmax_rows(const NodeRef<T>& x, const Tensor<T>* add_mask = nullptr) {
    const int64_t n = x->value.dim(0), d = x->value.dim(1);
    if (add_mask && !(add_mask->dim(0) == n && add_mask->dim(1) == d))
        throw std::invalid_argument("softmax_rows: mask shape mismatch");
    Tensor<T> out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        const T* row = x->value.data() + i * d;
        T mx = -std::numeric_limits<T>::infinity();
        for (int64_t j = 0; j < d; ++j) {
            const T v = row[j] + (add_mask ? add_mask->at2(i, j) : T(0));
            if (v > mx) mx = v;
        }
        T denom = T(0);
        for (int64_t j = 0; j < d; ++j) {
            const T v = row[j] + (add_mask ? add_mask->at2(i, j) : T(0));
            const T e = std::exp(v - mx);
            out.at2(i, j) = e;
            denom += e;
        }
        for (int64_t j = 0; j < d; ++j) out.at2(i, j) /= denom;
    }
    return make_op<T>(std::move(out), {x}, [x, n, d](Node<T>& nd) {
        Tensor<T> gx({n, d});
        for (int64_t i = 0; i < n; ++i) {
            const T* p = nd.value.data() + i * d;
            const T* gy = nd.grad.data() + i * d;
            T dot = T(0);
            for (int64_t j = 0; j < d; ++j) dot += gy[j] * p[j];
            for (int64_t j = 0; j < d; ++j) gx.at2(i, j) = p[j] * (gy[j] - dot);
        }
        accumulate(x, gx);
    });
}

// Mean cross-entropy over rows; targets are class indices.
template <typename T>
NodeRef<T> cross_entropy_mean(const NodeRef<T>& logits, std::vector<int64_t> targets) {
    const int64_t n = logits->value.dim(0), v = logits->value.dim(1);
    if (static_cast<int64_t>(targets.size()) != n)
        throw std::invalid_argument("cross_entropy: target count mismatch");
    for (int64_t t : targets) {
        if (t < 0 || t >= v) throw std::out_of_range("cross_entropy: target index out of vocabulary");
    }
    T loss = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T* row = logits->value.data() + i * v;
        T mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int64_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
        loss += std::log(denom) + mx - row[targets[static_cast<size_t>(i)]];
    }
    loss /= static_cast<T>(n);
    Tensor<T> out({1}, loss);
    return make_op<T>(std::move(out), {logits}, [logits, targets = std::move(targets), n, v](Node<T>& nd) {
        if (!logits->requires_grad) return;
        const T g = nd.grad[0] / static_cast<T>(n);
        Tensor<T> gl(logits->value.shape());
        for (int64_t i = 0; i < n; ++i) {
            const T* row = logits->value.data() + i * v;
            T mx = row[0];
            for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            T denom = T(0);
            for (int64_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
            T* grow = gl.data() + i * v;
            for (int64_t j = 0; j < v; ++j) grow[j] = g * std::exp(row[j] - mx) / denom;
            grow[targets[static_cast<size_t>(i)]] -= g;
        }
        accumulate(logits, gl);
    });
}

// ---- reductions / losses ----

template <typename T>
NodeRef<T> sum_all(const NodeRef<T>& a) {
    T s = T(0);
    for (const auto& x : a->value.vec()) s += x;
    Tensor<T> out({1}, s);
    return make_op<T>(std::move(out), {a}, [a](Node<T>& nd) {
        if (!a->requires_grad) return;
        Tensor<T> ga(a->value.shape(), nd.grad[0]);
        accumulate(a, ga);
    });
}

template <typename T>
NodeRef<T> mean_all(const NodeRef<T>& a) {
    const T inv = T(1) / static_cast<T>(a->value.numel());
    T s = T(0);
    for (const auto& x : a->value.vec()) s += x;
    Tensor<T> out({1}, s * inv);
    return make_op<T>(std::move(out), {a}, [a, inv](Node<T>& nd) {
        if (!a->requires_grad) return;
        Tensor<T> ga(a->value.shape(), nd.grad[0] * inv);
        accumulate(a, ga);
    });
}

// Per-element mean of (a - b)^2.
template <typename T>
NodeRef<T> mse(const NodeRef<T>& a, const NodeRef<T>& b) {
    detail::check_same_shape(a, b, "mse");
    const int64_t n = a->value.numel();
    const T inv = T(1) / static_cast<T>(n);
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T d = a->value[i] - b->value[i];
        s += d * d;
    }
    Tensor<T> out({1}, s * inv);
    return make_op<T>(std::move(out), {a, b}, [a, b, n, inv](Node<T>& nd) {
        const T g = nd.grad[0] * T(2) * inv;
        if (a->requires_grad) {
            Tensor<T> ga(a->value.shape());
            for (int64_t i = 0; i < n; ++i) ga[i] = g * (a->value[i] - b->value[i]);
            accumulate(a, ga);
        }
        if (b->requires_grad) {
            Tensor<T> gb(b->value.shape());
            for (int64_t i = 0; i < n; ++i) gb[i] = g * (b->value[i] - a->value[i]);
            accumulate(b, gb);
        }
    });
}

// Per-element mean of w * (a - b)^2 over ALL elements; w is a constant weight tensor.
template <typename T>
NodeRef<T> weighted_mse(const NodeRef<T>& a, const NodeRef<T>& b, const Tensor<T>& w) {
    detail::check_same_shape(a, b, "weighted_mse");
    if (w.numel() != a->value.numel()) throw std::invalid_argument("weighted_mse: weight size mismatch");
    const int64_t n = a->value.numel();
    const T inv = T(1) / static_cast<T>(n);
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T d = a->value[i] - b->value[i];
        s += w[i] * d * d;
    }
    Tensor<T> out({1}, s * inv);
    return make_op<T>(std::move(out), {a, b}, [a, b, w, n, inv](Node<T>& nd) {
        const T g = nd.grad[0] * T(2) * inv;
        if (a->requires_grad) {
            Tensor<T> ga(a->value.shape());
            for (int64_t i = 0; i < n; ++i) ga[i] = g * w[i] * (a->value[i] - b->value[i]);
            accumulate(a, ga);
        }
        if (b->requires_grad) {
            Tensor<T> gb(b->value.shape());
            for (int64_t i = 0; i < n; ++i) gb[i] = g * w[i] * (b->value[i] - a->value[i]);
            accumulate(b, gb);
        }
    });
}

// ---- graph surgery ----

template <typename T>
NodeRef<T> stopgrad(const NodeRef<T>& a) {
    return constant(a->value);
}

// Value of `target`, gradient routed unchanged to `x` (straight-through estimator).
template <typename T>
NodeRef<T> straight_through(const NodeRef<T>& x, const NodeRef<T>& target) {
    detail::check_same_shape(x, target, "straight_through");
    Tensor<T> out = target->value;
    return make_op<T>(std::move(out), {x}, [x](Node<T>& nd) { accumulate(x, nd.grad); });
}

}  // namespace lesyn::ag
