#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lesyn/core/ops.hpp"
#include "lesyn/core/ops_conv.hpp"

// Multi-scale residual quantization over a latent grid (d,h,w):
//   for each scale k (ascending area): downsample the running residual by area
//   averaging, snap each cell to its nearest codebook row, upsample the snapped
//   grid bilinearly back to (h,w), subtract it from the residual and add it to
//   the running reconstruction. The reconstruction f_hat is the sum of all
//   upsampled snapped grids, and dequantize replays exactly that sum.

namespace lesyn::tok {

using ScaleList = std::vector<std::pair<int64_t, int64_t>>;

struct TokenPyramid {
    ScaleList scales;
    std::vector<std::vector<int32_t>> grids;  // row-major, one per scale

    int64_t total_tokens() const {
        int64_t n = 0;
        for (const auto& [h, w] : scales) n += h * w;
        return n;
    }

    bool operator==(const TokenPyramid& o) const { return scales == o.scales && grids == o.grids; }
};

struct MaskPyramid {
    ScaleList scales;
    std::vector<std::vector<uint8_t>> grids;
};

template <typename T>
struct Codebook {
    Tensor<T> vectors;  // (V, d)

    int64_t size() const { return vectors.rank() == 2 ? vectors.dim(0) : 0; }
    int64_t dim() const { return vectors.rank() == 2 ? vectors.dim(1) : 0; }
};

inline void validate_scales(const ScaleList& scales, int64_t h, int64_t w) {
    if (scales.empty()) throw std::invalid_argument("scales: empty");
    int64_t prev_area = 0;
    for (const auto& [sh, sw] : scales) {
        if (sh < 1 || sw < 1 || sh > h || sw > w) throw std::invalid_argument("scales: out of range");
        const int64_t area = sh * sw;
        if (area <= prev_area) throw std::invalid_argument("scales: areas must be strictly increasing");
        prev_area = area;
    }
    if (scales.back().first != h || scales.back().second != w)
        throw std::invalid_argument("scales: last scale must equal the latent grid size");
}

// Nearest codebook row per row of `rows` (n x d); ties break to the smaller index.
template <typename T>
std::vector<int32_t> nearest_codebook_rows(const Tensor<T>& rows, const Tensor<T>& codebook) {
    const int64_t n = rows.dim(0), d = rows.dim(1);
    const int64_t v = codebook.dim(0);
    if (v == 0) throw std::invalid_argument("quantize: empty codebook");
    if (codebook.dim(1) != d) throw std::invalid_argument("quantize: codebook dimension mismatch");
    // argmin_v (|c_v|^2 - 2 x.c_v); the |x|^2 term is constant per row
    Tensor<T> scores({n, v});
    scores.mat().noalias() = rows.mat() * codebook.mat().transpose();
    std::vector<T> cnorm(static_cast<size_t>(v));
    for (int64_t j = 0; j < v; ++j) {
        const T* c = codebook.data() + j * d;
        T s = T(0);
        for (int64_t k = 0; k < d; ++k) s += c[k] * c[k];
        cnorm[static_cast<size_t>(j)] = s;
    }
    std::vector<int32_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const T* srow = scores.data() + i * v;
        T best = cnorm[0] - T(2) * srow[0];
        int32_t bj = 0;
        for (int64_t j = 1; j < v; ++j) {
            const T cand = cnorm[static_cast<size_t>(j)] - T(2) * srow[j];
            if (cand < best) {
                best = cand;
                bj = static_cast<int32_t>(j);
            }
        }
        idx[static_cast<size_t>(i)] = bj;
    }
    return idx;
}

namespace qdetail {

// (d, h, w) -> (h*w, d) cell-major rows (plain tensors, no graph).
template <typename T>
Tensor<T> chw_to_rows_plain(const Tensor<T>& x) {
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> out({h * w, c});
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t j = 0; j < h * w; ++j) out[j * c + ci] = x[ci * h * w + j];
    return out;
}

template <typename T>
Tensor<T> rows_to_chw_plain(const Tensor<T>& rows, int64_t h, int64_t w) {
    const int64_t c = rows.dim(1);
    Tensor<T> out({c, h, w});
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t j = 0; j < h * w; ++j) out[ci * h * w + j] = rows[j * c + ci];
    return out;
}

template <typename T>
Tensor<T> resize_chw_plain(const Tensor<T>& x, const Tensor<T>& rw, const Tensor<T>& cw) {
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int64_t h2 = rw.dim(0), w2 = cw.dim(0);
    Tensor<T> out({c, h2, w2});
    for (int64_t ci = 0; ci < c; ++ci) {
        typename Tensor<T>::ConstMap src(x.data() + ci * h * w, h, w);
        typename Tensor<T>::Map dst(out.data() + ci * h2 * w2, h2, w2);
        dst.noalias() = rw.mat() * src * cw.mat().transpose();
    }
    return out;
}

}  // namespace qdetail

template <typename T>
struct QuantizeResult {
    TokenPyramid pyramid;
    Tensor<T> f_hat;  // (d, h, w)
};

// Inference-mode quantization of one latent (d,h,w). Pure function.
template <typename T>
QuantizeResult<T> quantize_multiscale(const Tensor<T>& f, const Codebook<T>& cb, const ScaleList& scales) {
    if (f.rank() != 3) throw std::invalid_argument("quantize: latent must be (d,h,w)");
    if (!f.all_finite()) throw std::invalid_argument("quantize: latent contains non-finite values");
    const int64_t d = f.dim(0), h = f.dim(1), w = f.dim(2);
    validate_scales(scales, h, w);
    if (cb.size() == 0) throw std::invalid_argument("quantize: empty codebook");

    QuantizeResult<T> res;
    res.pyramid.scales = scales;
    res.f_hat = Tensor<T>({d, h, w});
    Tensor<T> residual = f;
    for (const auto& [sh, sw] : scales) {
        const Tensor<T> down_r = ag::area_resize_matrix<T>(h, sh);
        const Tensor<T> down_c = ag::area_resize_matrix<T>(w, sw);
        const Tensor<T> up_r = ag::bilinear_resize_matrix<T>(sh, h);
        const Tensor<T> up_c = ag::bilinear_resize_matrix<T>(sw, w);

        const Tensor<T> rk = qdetail::resize_chw_plain(residual, down_r, down_c);
        const Tensor<T> rows = qdetail::chw_to_rows_plain(rk);
        std::vector<int32_t> idx = nearest_codebook_rows(rows, cb.vectors);

        Tensor<T> qrows({sh * sw, d});
        for (int64_t i = 0; i < sh * sw; ++i)
            std::copy(cb.vectors.data() + idx[static_cast<size_t>(i)] * d,
                      cb.vectors.data() + (idx[static_cast<size_t>(i)] + 1) * d, qrows.data() + i * d);
        const Tensor<T> qk = qdetail::rows_to_chw_plain(qrows, sh, sw);
        const Tensor<T> uk = qdetail::resize_chw_plain(qk, up_r, up_c);
        for (int64_t i = 0; i < residual.numel(); ++i) {
            residual[i] -= uk[i];
            res.f_hat[i] += uk[i];
        }
        res.pyramid.grids.push_back(std::move(idx));
    }
    return res;
}

// Deterministic replay of the quantizer's reconstruction from token indices.
template <typename T>
Tensor<T> dequantize(const TokenPyramid& pyramid, const Codebook<T>& cb, int64_t h, int64_t w) {
    const int64_t d = cb.dim();
    validate_scales(pyramid.scales, h, w);
    Tensor<T> f_hat({d, h, w});
    for (size_t k = 0; k < pyramid.scales.size(); ++k) {
        const auto [sh, sw] = pyramid.scales[k];
        const auto& idx = pyramid.grids[k];
        if (static_cast<int64_t>(idx.size()) != sh * sw) throw std::invalid_argument("dequantize: grid size mismatch");
        Tensor<T> qrows({sh * sw, d});
        for (int64_t i = 0; i < sh * sw; ++i) {
            const int32_t id = idx[static_cast<size_t>(i)];
            if (id < 0 || id >= cb.size()) throw std::out_of_range("dequantize: token index out of codebook range");
            std::copy(cb.vectors.data() + id * d, cb.vectors.data() + (id + 1) * d, qrows.data() + i * d);
        }
        const Tensor<T> qk = qdetail::rows_to_chw_plain(qrows, sh, sw);
        const Tensor<T> up_r = ag::bilinear_resize_matrix<T>(sh, h);
        const Tensor<T> up_c = ag::bilinear_resize_matrix<T>(sw, w);
        const Tensor<T> uk = qdetail::resize_chw_plain(qk, up_r, up_c);
        for (int64_t i = 0; i < f_hat.numel(); ++i) f_hat[i] += uk[i];
    }
    return f_hat;
}

// Mask downsampling: cell (i,j) of scale k is 1 iff any full-resolution lesion
// pixel maps into it (pixel r belongs to cell floor(r*h_k/H)).
inline MaskPyramid build_mask_pyramid(const Tensor<uint8_t>& mask, const ScaleList& scales) {
    const int64_t mh = mask.dim(0), mw = mask.dim(1);
    for (int64_t i = 0; i < mask.numel(); ++i)
        if (mask[i] > 1) throw std::invalid_argument("mask pyramid: mask must be binary");
    MaskPyramid mp;
    mp.scales = scales;
    for (const auto& [sh, sw] : scales) {
        std::vector<uint8_t> grid(static_cast<size_t>(sh * sw), 0);
        for (int64_t y = 0; y < mh; ++y) {
            const int64_t cy = y * sh / mh;
            for (int64_t x = 0; x < mw; ++x) {
                if (!mask.at2(y, x)) continue;
                const int64_t cx = x * sw / mw;
                grid[static_cast<size_t>(cy * sw + cx)] = 1;
            }
        }
        mp.grids.push_back(std::move(grid));
    }
    return mp;
}

// Structured-text export of a token pyramid (scale list + row-major indices).
inline std::string pyramid_to_text(const TokenPyramid& p) {
    std::string out = "scales";
    for (const auto& [h, w] : p.scales) out += " " + std::to_string(h) + "x" + std::to_string(w);
    out += "\n";
    for (const auto& grid : p.grids) {
        for (size_t i = 0; i < grid.size(); ++i) {
            out += (i ? " " : "") + std::to_string(grid[i]);
        }
        out += "\n";
    }
    return out;
}

inline TokenPyramid pyramid_from_text(const std::string& text) {
    std::istringstream is(text);
    std::string tag;
    is >> tag;
    if (tag != "scales") throw std::runtime_error("pyramid: malformed text");
    TokenPyramid p;
    std::string line;
    std::getline(is, line);
    {
        std::istringstream ls(line);
        std::string dim;
        while (ls >> dim) {
            const auto x = dim.find('x');
            p.scales.emplace_back(std::stoll(dim.substr(0, x)), std::stoll(dim.substr(x + 1)));
        }
    }
    for (const auto& [h, w] : p.scales) {
        std::vector<int32_t> grid(static_cast<size_t>(h * w));
        for (auto& v : grid)
            if (!(is >> v)) throw std::runtime_error("pyramid: truncated text");
        p.grids.push_back(std::move(grid));
    }
    return p;
}

}  // namespace lesyn::tok
