#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>
#include <vector>

#include "lesyn/data/manifest.hpp"

// Quantified lesion measurements: 14 shape / histogram / texture scores computed
// from the masked region of the grayscale image. Every formula has an analytic
// golden case in the test suite; degenerate inputs (constant intensity, 1-pixel
// masks) follow fixed rules instead of producing NaN.

namespace lesyn::measure {

inline constexpr int kNumMeasurements = 14;
inline constexpr double kPi = 3.14159265358979323846;

struct MeasurementVector {
    std::array<double, kNumMeasurements> values{};

    static const std::array<std::string, kNumMeasurements>& names() {
        static const std::array<std::string, kNumMeasurements> n = {
            "area_fraction",      "perimeter_norm",    "circularity",
            "elongation",         "bbox_aspect",       "intensity_mean",
            "intensity_std",      "intensity_skewness", "intensity_kurtosis_excess",
            "intensity_entropy_bits", "glcm_contrast", "glcm_correlation",
            "glcm_energy",        "glcm_homogeneity"};
        return n;
    }

    double& operator[](size_t i) { return values[i]; }
    double operator[](size_t i) const { return values[i]; }

    double area_fraction() const { return values[0]; }
    double perimeter_norm() const { return values[1]; }
    double circularity() const { return values[2]; }
    double elongation() const { return values[3]; }
    double bbox_aspect() const { return values[4]; }
    double intensity_mean() const { return values[5]; }
    double intensity_std() const { return values[6]; }
    double intensity_skewness() const { return values[7]; }
    double intensity_kurtosis_excess() const { return values[8]; }
    double intensity_entropy_bits() const { return values[9]; }
    double glcm_contrast() const { return values[10]; }
    double glcm_correlation() const { return values[11]; }
    double glcm_energy() const { return values[12]; }
    double glcm_homogeneity() const { return values[13]; }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

struct Glcm {
    int num_levels = 0;
    std::vector<double> p;  // num_levels x num_levels, sums to 1
    bool degenerate = false;  // no valid pixel pair; p is the uniform diagonal

    double at(int i, int j) const { return p[static_cast<size_t>(i * num_levels + j)]; }
    double& at(int i, int j) { return p[static_cast<size_t>(i * num_levels + j)]; }
};

namespace detail {

// Uniform quantization of masked pixels over their min-max range; constant
// regions map everything to level 0.
inline std::vector<int> quantize_levels(const Tensor<double>& gray, const Tensor<uint8_t>& mask, int levels,
                                        double& gmin, double& gmax) {
    const int64_t n = gray.numel();
    gmin = std::numeric_limits<double>::infinity();
    gmax = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        gmin = std::min(gmin, gray[i]);
        gmax = std::max(gmax, gray[i]);
    }
    std::vector<int> q(static_cast<size_t>(n), -1);
    const double range = gmax - gmin;
    for (int64_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        if (range <= 0) {
            q[static_cast<size_t>(i)] = 0;
        } else {
            int lv = static_cast<int>(std::floor((gray[i] - gmin) / range * levels));
            q[static_cast<size_t>(i)] = std::min(lv, levels - 1);
        }
    }
    return q;
}

}  // namespace detail

// Symmetric normalized co-occurrence matrix. Multiple offsets contribute as the
// average of their per-offset normalized matrices; offsets without any valid
// pair are skipped. If no offset has a pair the uniform-diagonal matrix is
// returned with `degenerate` set.
inline Glcm glcm(const Tensor<double>& gray, const Tensor<uint8_t>& mask, int num_levels,
                 const std::vector<std::pair<int, int>>& offsets) {
    if (num_levels < 2) throw std::invalid_argument("glcm: num_levels must be >= 2");
    if (offsets.empty()) throw std::invalid_argument("glcm: offsets must be non-empty");
    const int64_t h = gray.dim(0), w = gray.dim(1);
    if (mask.dim(0) != h || mask.dim(1) != w) throw std::invalid_argument("glcm: mask shape mismatch");

    double gmin = 0, gmax = 0;
    const std::vector<int> q = detail::quantize_levels(gray, mask, num_levels, gmin, gmax);

    Glcm out;
    out.num_levels = num_levels;
    out.p.assign(static_cast<size_t>(num_levels) * num_levels, 0.0);

    int used_offsets = 0;
    std::vector<double> acc(out.p.size(), 0.0);
    for (const auto& [dy, dx] : offsets) {
        std::fill(acc.begin(), acc.end(), 0.0);
        double pairs = 0;
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                const int64_t y2 = y + dy, x2 = x + dx;
                if (y2 < 0 || y2 >= h || x2 < 0 || x2 >= w) continue;
                if (!mask.at2(y, x) || !mask.at2(y2, x2)) continue;
                const int a = q[static_cast<size_t>(y * w + x)];
                const int b = q[static_cast<size_t>(y2 * w + x2)];
                acc[static_cast<size_t>(a * num_levels + b)] += 1.0;
                acc[static_cast<size_t>(b * num_levels + a)] += 1.0;
                pairs += 2.0;
            }
        }
        if (pairs > 0) {
            for (size_t i = 0; i < acc.size(); ++i) out.p[i] += acc[i] / pairs;
            ++used_offsets;
        }
    }
    if (used_offsets == 0) {
        out.degenerate = true;
        for (int i = 0; i < num_levels; ++i) out.at(i, i) = 1.0 / num_levels;
        return out;
    }
    for (auto& v : out.p) v /= used_offsets;
    return out;
}

struct GlcmFeatures {
    double contrast = 0, correlation = 0, energy = 0, homogeneity = 0;
};

inline GlcmFeatures glcm_features(const Glcm& g) {
    GlcmFeatures f;
    const int L = g.num_levels;
    std::vector<double> marginal(static_cast<size_t>(L), 0.0);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j) marginal[static_cast<size_t>(i)] += g.at(i, j);
    double mu = 0;
    for (int i = 0; i < L; ++i) mu += i * marginal[static_cast<size_t>(i)];
    double var = 0;
    for (int i = 0; i < L; ++i) var += (i - mu) * (i - mu) * marginal[static_cast<size_t>(i)];
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) {
            const double p = g.at(i, j);
            if (p == 0) continue;
            f.contrast += p * (i - j) * (i - j);
            f.energy += p * p;
            f.homogeneity += p / (1.0 + std::abs(i - j));
            if (var > 0) f.correlation += p * (i - mu) * (j - mu) / var;
        }
    }
    if (var <= 0 || g.degenerate) f.correlation = 0.0;  // degenerate rule
    return f;
}

// The full 14-score extraction. The mask must contain at least one lesion pixel;
// grayscale is the channel mean of the input image.
inline MeasurementVector extract_measurements(const Tensor<float>& image, const Tensor<uint8_t>& mask) {
    const int64_t h = mask.dim(0), w = mask.dim(1);
    if (image.dim(1) != h || image.dim(2) != w)
        throw std::invalid_argument("measurements: image/mask shape mismatch");

    int64_t area = 0;
    for (int64_t i = 0; i < mask.numel(); ++i) area += mask[i];
    if (area == 0) throw std::invalid_argument("measurements: empty mask");

    const Tensor<double> gray = data::to_gray(image);
    MeasurementVector m;

    // --- shape ---
    m[0] = static_cast<double>(area) / static_cast<double>(h * w);

    // perimeter: 4-connected edges from a lesion pixel to background or off-image
    int64_t perimeter = 0;
    int64_t ymin = h, ymax = -1, xmin = w, xmax = -1;
    double cy = 0, cx = 0;
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            if (!mask.at2(y, x)) continue;
            if (y == 0 || !mask.at2(y - 1, x)) ++perimeter;
            if (y == h - 1 || !mask.at2(y + 1, x)) ++perimeter;
            if (x == 0 || !mask.at2(y, x - 1)) ++perimeter;
            if (x == w - 1 || !mask.at2(y, x + 1)) ++perimeter;
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            cy += static_cast<double>(y);
            cx += static_cast<double>(x);
        }
    }
    m[1] = static_cast<double>(perimeter) / (2.0 * static_cast<double>(h + w));
    m[2] = 4.0 * kPi * static_cast<double>(area) / (static_cast<double>(perimeter) * static_cast<double>(perimeter));

    // elongation from the second central moments of the mask support
    cy /= static_cast<double>(area);
    cx /= static_cast<double>(area);
    double myy = 0, mxx = 0, mxy = 0;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            if (!mask.at2(y, x)) continue;
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            myy += dy * dy;
            mxx += dx * dx;
            mxy += dx * dy;
        }
    myy /= static_cast<double>(area);
    mxx /= static_cast<double>(area);
    mxy /= static_cast<double>(area);
    // pixels contribute as unit squares (+1/12 each axis); keeps the minor
    // eigenvalue positive for collinear masks, so elongation stays in (0,1]
    myy += 1.0 / 12.0;
    mxx += 1.0 / 12.0;
    const double tr = mxx + myy;
    const double det = mxx * myy - mxy * mxy;
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    const double lam_major = tr / 2.0 + disc;
    const double lam_minor = std::max(0.0, tr / 2.0 - disc);
    m[3] = lam_major > 0 ? std::sqrt(lam_minor / lam_major) : 1.0;  // a point is round

    const double side_y = static_cast<double>(ymax - ymin + 1);
    const double side_x = static_cast<double>(xmax - xmin + 1);
    m[4] = std::min(side_y, side_x) / std::max(side_y, side_x);

    // --- histogram ---
    double mean = 0;
    for (int64_t i = 0; i < gray.numel(); ++i)
        if (mask[i]) mean += gray[i];
    mean /= static_cast<double>(area);
    double m2 = 0, m3 = 0, m4 = 0;
    for (int64_t i = 0; i < gray.numel(); ++i) {
        if (!mask[i]) continue;
        const double d = gray[i] - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= static_cast<double>(area);
    m3 /= static_cast<double>(area);
    m4 /= static_cast<double>(area);
    const double sigma = std::sqrt(m2);
    m[5] = mean;
    m[6] = sigma;
    m[7] = sigma > 0 ? m3 / (sigma * sigma * sigma) : 0.0;
    m[8] = sigma > 0 ? m4 / (m2 * m2) - 3.0 : 0.0;

    // entropy over a 32-bin histogram of masked pixels (min-max range)
    {
        constexpr int kBins = 32;
        double gmin = 0, gmax = 0;
        const std::vector<int> q = detail::quantize_levels(gray, mask, kBins, gmin, gmax);
        std::array<double, kBins> hist{};
        for (int64_t i = 0; i < gray.numel(); ++i)
            if (mask[i]) hist[static_cast<size_t>(q[static_cast<size_t>(i)])] += 1.0;
        double ent = 0;
        for (double c : hist) {
            if (c <= 0) continue;
            const double p = c / static_cast<double>(area);
            ent -= p * std::log2(p);
        }
        m[9] = ent;
    }

    // --- texture ---
    const Glcm g = glcm(gray, mask, 16, {{0, 1}, {1, 0}});
    const GlcmFeatures gf = glcm_features(g);
    m[10] = gf.contrast;
    m[11] = gf.correlation;
    m[12] = gf.energy;
    m[13] = gf.homogeneity;
    return m;
}

// ---- normalization ----

struct MeasurementNormalizer {
    std::array<double, kNumMeasurements> mean{};
    std::array<double, kNumMeasurements> std{};

    MeasurementNormalizer() { std.fill(1.0); }  // default is the identity transform
};

inline MeasurementNormalizer fit_normalizer(const std::vector<MeasurementVector>& vectors) {
    if (vectors.empty()) throw std::invalid_argument("normalizer: no measurement vectors");
    MeasurementNormalizer n;
    for (const auto& v : vectors)
        for (int i = 0; i < kNumMeasurements; ++i) n.mean[static_cast<size_t>(i)] += v[static_cast<size_t>(i)];
    for (auto& x : n.mean) x /= static_cast<double>(vectors.size());
    std::array<double, kNumMeasurements> acc{};
    for (const auto& v : vectors)
        for (int i = 0; i < kNumMeasurements; ++i) {
            const double d = v[static_cast<size_t>(i)] - n.mean[static_cast<size_t>(i)];
            acc[static_cast<size_t>(i)] += d * d;
        }
    for (size_t i = 0; i < kNumMeasurements; ++i) {
        n.std[i] = std::sqrt(acc[i] / static_cast<double>(vectors.size()));  // population convention
        if (n.std[i] <= 0) n.std[i] = 1.0;  // zero-variance dims pass through
    }
    return n;
}

inline MeasurementNormalizer fit_normalizer(const data::DatasetManifest& manifest) {
    std::vector<MeasurementVector> vs;
    vs.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        const data::ImageSample s = data::load_sample(manifest, e);
        vs.push_back(extract_measurements(s.image, s.mask));
    }
    return fit_normalizer(vs);
}

inline MeasurementVector normalize(const MeasurementVector& v, const MeasurementNormalizer& n) {
    MeasurementVector out;
    for (size_t i = 0; i < kNumMeasurements; ++i) out[i] = (v[i] - n.mean[i]) / n.std[i];
    return out;
}

// ---- persistence ----

// Normalizer file: two rows (means, stds), 17 significant digits.
inline void save_normalizer(const MeasurementNormalizer& n, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("normalizer: cannot write: " + path.string());
    os << std::setprecision(17);
    os << "# rows: mean, std; columns in canonical measurement order\n";
    for (const auto* row : {&n.mean, &n.std}) {
        for (size_t i = 0; i < kNumMeasurements; ++i) os << (i ? " " : "") << (*row)[i];
        os << "\n";
    }
}

inline MeasurementNormalizer load_normalizer(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("normalizer: cannot open: " + path.string());
    std::string line;
    std::getline(is, line);  // comment
    MeasurementNormalizer n;
    for (auto* row : {&n.mean, &n.std}) {
        for (size_t i = 0; i < kNumMeasurements; ++i)
            if (!(is >> (*row)[i])) throw std::runtime_error("normalizer: truncated file: " + path.string());
    }
    return n;
}

// Measurement table: one row per sample, tab-separated, fixed column order.
inline void export_measurements(const std::vector<std::pair<std::string, MeasurementVector>>& rows,
                                const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("measurements: cannot write: " + path.string());
    os << "sample_id";
    for (const auto& name : MeasurementVector::names()) os << "\t" << name;
    os << "\n" << std::setprecision(17);
    for (const auto& [id, v] : rows) {
        os << id;
        for (size_t i = 0; i < kNumMeasurements; ++i) os << "\t" << v[i];
        os << "\n";
    }
}

}  // namespace lesyn::measure
