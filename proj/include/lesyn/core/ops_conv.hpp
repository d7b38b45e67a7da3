#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lesyn/core/autograd.hpp"

// Convolution, separable resampling, pooling, and NCHW layout shuffles.

namespace lesyn::ag {

namespace detail {

// im2col: x (N,Cin,H,W) -> cols (Cin*kh*kw, N*OH*OW), zero padded.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t oh, int64_t ow) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> cols({c * kh * kw, n * oh * ow});
    const int64_t ncols = n * oh * ow;
    for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                T* dst = cols.data() + ((ci * kh + ki) * kw + kj) * ncols;
                for (int64_t ni = 0; ni < n; ++ni) {
                    const T* src = x.data() + (ni * c + ci) * h * w;
                    for (int64_t oi = 0; oi < oh; ++oi) {
                        const int64_t ii = oi * stride - pad + ki;
                        T* drow = dst + (ni * oh + oi) * ow;
                        if (ii < 0 || ii >= h) {
                            for (int64_t oj = 0; oj < ow; ++oj) drow[oj] = T(0);
                            continue;
                        }
                        for (int64_t oj = 0; oj < ow; ++oj) {
                            const int64_t jj = oj * stride - pad + kj;
                            drow[oj] = (jj >= 0 && jj < w) ? src[ii * w + jj] : T(0);
                        }
                    }
                }
            }
        }
    }
    return cols;
}

// col2im scatter-add, the adjoint of im2col.
template <typename T>
void col2im_add(const Tensor<T>& cols, Tensor<T>& gx, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                int64_t oh, int64_t ow) {
    const int64_t n = gx.dim(0), c = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
    const int64_t ncols = n * oh * ow;
    for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                const T* src = cols.data() + ((ci * kh + ki) * kw + kj) * ncols;
                for (int64_t ni = 0; ni < n; ++ni) {
                    T* dst = gx.data() + (ni * c + ci) * h * w;
                    for (int64_t oi = 0; oi < oh; ++oi) {
                        const int64_t ii = oi * stride - pad + ki;
                        if (ii < 0 || ii >= h) continue;
                        const T* srow = src + (ni * oh + oi) * ow;
                        for (int64_t oj = 0; oj < ow; ++oj) {
                            const int64_t jj = oj * stride - pad + kj;
                            if (jj >= 0 && jj < w) dst[ii * w + jj] += srow[oj];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x (N,Cin,H,W), weight (Cout,Cin,kh,kw), bias (Cout). Zero padding, square stride.
// The im2col buffer is recomputed in backward instead of being kept alive.
template <typename T>
NodeRef<T> conv2d(const NodeRef<T>& x, const NodeRef<T>& weight, const NodeRef<T>& bias, int64_t stride,
                  int64_t pad) {
    const auto& xs = x->value.shape();
    const auto& ws = weight->value.shape();
    if (xs.size() != 4 || ws.size() != 4) throw std::invalid_argument("conv2d: expects 4-D input and weight");
    if (xs[1] != ws[1]) throw std::invalid_argument("conv2d: channel mismatch");
    const int64_t n = xs[0], h = xs[2], w = xs[3];
    const int64_t cout = ws[0], kh = ws[2], kw = ws[3];
    const int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const int64_t ow = (w + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: output would be empty");
    if (bias->value.numel() != cout) throw std::invalid_argument("conv2d: bias size mismatch");

    Tensor<T> cols = detail::im2col(x->value, kh, kw, stride, pad, oh, ow);
    const int64_t krows = ws[1] * kh * kw;
    const int64_t ncols = n * oh * ow;
    Tensor<T> prod({cout, ncols});
    prod.mat().noalias() = weight->value.mat(cout, krows) * cols.mat(krows, ncols);

    Tensor<T> out({n, cout, oh, ow});
    for (int64_t co = 0; co < cout; ++co) {
        const T b = bias->value[co];
        const T* src = prod.data() + co * ncols;
        for (int64_t ni = 0; ni < n; ++ni) {
            T* dst = out.data() + (ni * cout + co) * oh * ow;
            const T* s = src + ni * oh * ow;
            for (int64_t i = 0; i < oh * ow; ++i) dst[i] = s[i] + b;
        }
    }

    return make_op<T>(std::move(out), {x, weight, bias},
                      [x, weight, bias, stride, pad, n, cout, kh, kw, oh, ow, krows, ncols](Node<T>& nd) {
        // Gather the incoming gradient into (Cout, N*OH*OW) layout.
        Tensor<T> g({cout, ncols});
        for (int64_t co = 0; co < cout; ++co) {
            T* dst = g.data() + co * ncols;
            for (int64_t ni = 0; ni < n; ++ni) {
                const T* src = nd.grad.data() + (ni * cout + co) * oh * ow;
                std::copy(src, src + oh * ow, dst + ni * oh * ow);
            }
        }
        if (bias->requires_grad) {
            Tensor<T> gb(bias->value.shape());
            for (int64_t co = 0; co < cout; ++co) {
                const T* src = g.data() + co * ncols;
                T s = T(0);
                for (int64_t i = 0; i < ncols; ++i) s += src[i];
                gb[co] = s;
            }
            accumulate(bias, gb);
        }
        if (weight->requires_grad) {
            Tensor<T> cols = detail::im2col(x->value, kh, kw, stride, pad, oh, ow);
            Tensor<T> gw(weight->value.shape());
            gw.mat(cout, krows).noalias() = g.mat() * cols.mat(krows, ncols).transpose();
            accumulate(weight, gw);
        }
        if (x->requires_grad) {
            Tensor<T> gcols({krows, ncols});
            gcols.mat().noalias() = weight->value.mat(cout, krows).transpose() * g.mat();
            Tensor<T> gx(x->value.shape());
            detail::col2im_add(gcols, gx, kh, kw, stride, pad, oh, ow);
            accumulate(x, gx);
        }
    });
}

// ---- separable resampling ----
// A resize is expressed as out = R * img * C^T per channel, with constant row/col
// weight matrices. Area, bilinear and nearest resampling all reduce to this form,
// which makes the backward pass the plain transpose.

template <typename T>
Tensor<T> area_resize_matrix(int64_t in_size, int64_t out_size) {
    Tensor<T> m({out_size, in_size});
    const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
    for (int64_t i = 0; i < out_size; ++i) {
        const double lo = i * scale, hi = (i + 1) * scale;
        for (int64_t r = static_cast<int64_t>(std::floor(lo)); r < in_size && r < hi; ++r) {
            const double overlap = std::min(hi, static_cast<double>(r + 1)) - std::max(lo, static_cast<double>(r));
            if (overlap > 0) m.at2(i, r) = static_cast<T>(overlap / scale);
        }
    }
    return m;
}

template <typename T>
Tensor<T> bilinear_resize_matrix(int64_t in_size, int64_t out_size) {
    Tensor<T> m({out_size, in_size});
    const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
    for (int64_t i = 0; i < out_size; ++i) {
        double s = (i + 0.5) * scale - 0.5;
        if (s < 0) s = 0;
        if (s > in_size - 1) s = static_cast<double>(in_size - 1);
        const int64_t r0 = static_cast<int64_t>(std::floor(s));
        const int64_t r1 = std::min(r0 + 1, in_size - 1);
        const double t = s - static_cast<double>(r0);
        m.at2(i, r0) += static_cast<T>(1.0 - t);
        m.at2(i, r1) += static_cast<T>(t);
    }
    return m;
}

template <typename T>
Tensor<T> nearest_resize_matrix(int64_t in_size, int64_t out_size) {
    Tensor<T> m({out_size, in_size});
    const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
    for (int64_t i = 0; i < out_size; ++i) {
        int64_t r = static_cast<int64_t>(std::floor((i + 0.5) * scale));
        if (r >= in_size) r = in_size - 1;
        m.at2(i, r) = T(1);
    }
    return m;
}

// x (N,C,H,W) with row weights (H2 x H) and col weights (W2 x W) -> (N,C,H2,W2).
template <typename T>
NodeRef<T> resize2d(const NodeRef<T>& x, const Tensor<T>& rw, const Tensor<T>& cw) {
    const auto& xs = x->value.shape();
    if (xs.size() != 4) throw std::invalid_argument("resize2d: expects 4-D input");
    const int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    if (rw.dim(1) != h || cw.dim(1) != w) throw std::invalid_argument("resize2d: weight size mismatch");
    const int64_t h2 = rw.dim(0), w2 = cw.dim(0);
    Tensor<T> out({n, c, h2, w2});
    auto rmat = rw.mat();
    auto cmat = cw.mat();
    for (int64_t i = 0; i < n * c; ++i) {
        typename Tensor<T>::ConstMap src(x->value.data() + i * h * w, h, w);
        typename Tensor<T>::Map dst(out.data() + i * h2 * w2, h2, w2);
        dst.noalias() = rmat * src * cmat.transpose();
    }
    return make_op<T>(std::move(out), {x}, [x, rw, cw, n, c, h, w, h2, w2](Node<T>& nd) {
        if (!x->requires_grad) return;
        Tensor<T> gx(x->value.shape());
        auto rmat = rw.mat();
        auto cmat = cw.mat();
        for (int64_t i = 0; i < n * c; ++i) {
            typename Tensor<T>::ConstMap g(nd.grad.data() + i * h2 * w2, h2, w2);
            typename Tensor<T>::Map dst(gx.data() + i * h * w, h, w);
            dst.noalias() = rmat.transpose() * g * cmat;
        }
        accumulate(x, gx);
    });
}

// Spatial mean: (N,C,H,W) -> (N,C).
template <typename T>
NodeRef<T> pool_mean_hw(const NodeRef<T>& x) {
    const auto& xs = x->value.shape();
    if (xs.size() != 4) throw std::invalid_argument("pool_mean_hw: expects 4-D input");
    const int64_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
    Tensor<T> out({n, c});
    const T inv = T(1) / static_cast<T>(hw);
    for (int64_t i = 0; i < n * c; ++i) {
        const T* src = x->value.data() + i * hw;
        T s = T(0);
        for (int64_t j = 0; j < hw; ++j) s += src[j];
        out[i] = s * inv;
    }
    return make_op<T>(std::move(out), {x, }, [x, n, c, hw, inv](Node<T>& nd) {
        if (!x->requires_grad) return;
        Tensor<T> gx(x->value.shape());
        for (int64_t i = 0; i < n * c; ++i) {
            const T g = nd.grad[i] * inv;
            T* dst = gx.data() + i * hw;
            for (int64_t j = 0; j < hw; ++j) dst[j] = g;
        }
        accumulate(x, gx);
    });
}

// (N,C,H,W) -> (N*H*W, C); cell-major rows, the layout used by the quantizer.
template <typename T>
NodeRef<T> nchw_to_rows(const NodeRef<T>& x) {
    const auto& xs = x->value.shape();
    if (xs.size() != 4) throw std::invalid_argument("nchw_to_rows: expects 4-D input");
    const int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    Tensor<T> out({n * h * w, c});
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci) {
            const T* src = x->value.data() + (ni * c + ci) * h * w;
            T* base = out.data() + ni * h * w * c + ci;
            for (int64_t j = 0; j < h * w; ++j) base[j * c] = src[j];
        }
    return make_op<T>(std::move(out), {x}, [x, n, c, h, w](Node<T>& nd) {
        if (!x->requires_grad) return;
        Tensor<T> gx(x->value.shape());
        for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t ci = 0; ci < c; ++ci) {
                T* dst = gx.data() + (ni * c + ci) * h * w;
                const T* base = nd.grad.data() + ni * h * w * c + ci;
                for (int64_t j = 0; j < h * w; ++j) dst[j] = base[j * c];
            }
        accumulate(x, gx);
    });
}

// (N*H*W, C) -> (N,C,H,W), inverse of nchw_to_rows.
template <typename T>
NodeRef<T> rows_to_nchw(const NodeRef<T>& rows, int64_t n, int64_t h, int64_t w) {
    const int64_t c = rows->value.dim(1);
    if (rows->value.dim(0) != n * h * w) throw std::invalid_argument("rows_to_nchw: row count mismatch");
    Tensor<T> out({n, c, h, w});
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci) {
            T* dst = out.data() + (ni * c + ci) * h * w;
            const T* base = rows->value.data() + ni * h * w * c + ci;
            for (int64_t j = 0; j < h * w; ++j) dst[j] = base[j * c];
        }
    return make_op<T>(std::move(out), {rows}, [rows, n, c, h, w](Node<T>& nd) {
        if (!rows->requires_grad) return;
        Tensor<T> gr(rows->value.shape());
        for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t ci = 0; ci < c; ++ci) {
                const T* src = nd.grad.data() + (ni * c + ci) * h * w;
                T* base = gr.data() + ni * h * w * c + ci;
                for (int64_t j = 0; j < h * w; ++j) base[j * c] = src[j];
            }
        accumulate(rows, gr);
    });
}

}  // namespace lesyn::ag
