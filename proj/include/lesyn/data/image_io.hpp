#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "lesyn/core/ops_conv.hpp"
#include "lesyn/core/tensor.hpp"

// Binary PNM image IO. Images are exchanged as 8-bit P6 (color) / P5 (gray);
// in memory they are CHW float tensors in [0,1]. Masks are single-channel
// {0,255} on disk, {0,1} uint8 (H,W) in memory.

namespace lesyn::data {

namespace detail {

inline void skip_pnm_ws(std::istream& is) {
    for (;;) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (c != EOF && std::isspace(c)) {
            is.get();
        } else {
            return;
        }
    }
}

inline int64_t read_pnm_int(std::istream& is) {
    skip_pnm_ws(is);
    int64_t v = 0;
    bool any = false;
    while (std::isdigit(is.peek())) {
        v = v * 10 + (is.get() - '0');
        any = true;
    }
    if (!any) throw std::runtime_error("pnm: malformed header");
    return v;
}

}  // namespace detail

// Loads P6 into (3,H,W) or P5 into (1,H,W), values scaled to [0,1].
inline Tensor<float> read_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("pnm: cannot open: " + path);
    char p = 0, kind = 0;
    is.get(p);
    is.get(kind);
    if (p != 'P' || (kind != '5' && kind != '6')) throw std::runtime_error("pnm: unsupported format: " + path);
    const int64_t w = detail::read_pnm_int(is);
    const int64_t h = detail::read_pnm_int(is);
    const int64_t maxval = detail::read_pnm_int(is);
    if (maxval <= 0 || maxval > 255) throw std::runtime_error("pnm: only 8-bit images supported: " + path);
    is.get();  // single whitespace byte after maxval
    const int64_t channels = kind == '6' ? 3 : 1;
    std::vector<unsigned char> raw(static_cast<size_t>(w * h * channels));
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw std::runtime_error("pnm: truncated pixel data: " + path);
    Tensor<float> img({channels, h, w});
    const float inv = 1.0f / static_cast<float>(maxval);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < channels; ++c)
                img.at3(c, y, x) = static_cast<float>(raw[static_cast<size_t>((y * w + x) * channels + c)]) * inv;
    return img;
}

// Writes (3,H,W) as P6 or (1,H,W) as P5; values clamped to [0,1].
inline void write_pnm(const std::string& path, const Tensor<float>& img) {
    if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
        throw std::invalid_argument("pnm: image must be (1|3,H,W)");
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("pnm: cannot open for write: " + path);
    os << (c == 3 ? "P6\n" : "P5\n") << w << " " << h << "\n255\n";
    std::vector<unsigned char> raw(static_cast<size_t>(w * h * c));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t ch = 0; ch < c; ++ch) {
                float v = img.at3(ch, y, x);
                v = std::min(1.0f, std::max(0.0f, v));
                raw[static_cast<size_t>((y * w + x) * c + ch)] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) throw std::runtime_error("pnm: write failed: " + path);
}

inline Tensor<uint8_t> read_mask(const std::string& path) {
    Tensor<float> img = read_pnm(path);
    const int64_t h = img.dim(1), w = img.dim(2);
    Tensor<uint8_t> mask({h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            float v = 0;
            for (int64_t c = 0; c < img.dim(0); ++c) v += img.at3(c, y, x);
            v /= static_cast<float>(img.dim(0));
            mask.at2(y, x) = v > 0.5f ? 1 : 0;
        }
    return mask;
}

inline void write_mask(const std::string& path, const Tensor<uint8_t>& mask) {
    Tensor<float> img({1, mask.dim(0), mask.dim(1)});
    for (int64_t i = 0; i < mask.numel(); ++i) img[i] = mask[i] ? 1.0f : 0.0f;
    write_pnm(path, img);
}

// Bilinear resample of a CHW image to (h2, w2).
inline Tensor<float> resample_bilinear(const Tensor<float>& img, int64_t h2, int64_t w2) {
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (h2 == h && w2 == w) return img;
    const Tensor<float> rw = ag::bilinear_resize_matrix<float>(h, h2);
    const Tensor<float> cw = ag::bilinear_resize_matrix<float>(w, w2);
    Tensor<float> out({c, h2, w2});
    for (int64_t ch = 0; ch < c; ++ch) {
        Tensor<float>::ConstMap src(img.data() + ch * h * w, h, w);
        Tensor<float>::Map dst(out.data() + ch * h2 * w2, h2, w2);
        dst.noalias() = rw.mat() * src * cw.mat().transpose();
    }
    return out;
}

// Nearest-neighbor resample of a binary mask; preserves {0,1}.
inline Tensor<uint8_t> resample_nearest(const Tensor<uint8_t>& mask, int64_t h2, int64_t w2) {
    const int64_t h = mask.dim(0), w = mask.dim(1);
    if (h2 == h && w2 == w) return mask;
    Tensor<uint8_t> out({h2, w2});
    for (int64_t y = 0; y < h2; ++y) {
        int64_t sy = static_cast<int64_t>(std::floor((y + 0.5) * static_cast<double>(h) / h2));
        sy = std::min(sy, h - 1);
        for (int64_t x = 0; x < w2; ++x) {
            int64_t sx = static_cast<int64_t>(std::floor((x + 0.5) * static_cast<double>(w) / w2));
            sx = std::min(sx, w - 1);
            out.at2(y, x) = mask.at2(sy, sx);
        }
    }
    return out;
}

// Grayscale as the channel mean, (H,W) double; measurement extraction works on this.
inline Tensor<double> to_gray(const Tensor<float>& img) {
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor<double> g({h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double s = 0;
            for (int64_t ch = 0; ch < c; ++ch) s += img.at3(ch, y, x);
            g.at2(y, x) = s / static_cast<double>(c);
        }
    return g;
}

}  // namespace lesyn::data
