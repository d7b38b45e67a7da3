#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>

#include "lesyn/data/manifest.hpp"

// Built-in synthetic toy-lesion dataset: one elliptical lesion per image on a
// noisy skin-toned background. Class id deterministically controls lesion size,
// color and texture so that classes are separable and their measurement vectors
// differ. The mask is the exact ellipse support (a single connected component).

namespace lesyn::data {

struct ToyDatasetSpec {
    int num_classes = 3;
    int samples_per_class = 10;
    int64_t height = 64;
    int64_t width = 64;
    uint64_t seed = 7;
};

namespace toydetail {

struct Rgb {
    float r, g, b;
};

inline Rgb lesion_color(int cls) {
    static constexpr std::array<Rgb, 8> palette = {{
        {0.35f, 0.22f, 0.15f},  // dark brown
        {0.62f, 0.25f, 0.22f},  // red
        {0.35f, 0.40f, 0.50f},  // blue-gray
        {0.55f, 0.38f, 0.25f},  // light brown
        {0.78f, 0.45f, 0.50f},  // pink
        {0.16f, 0.11f, 0.11f},  // near-black
        {0.45f, 0.28f, 0.50f},  // violet
        {0.45f, 0.42f, 0.20f},  // olive
    }};
    return palette[static_cast<size_t>(cls) % palette.size()];
}

// Base semi-major axis as a fraction of min(H, W); grows with class id mod 4.
inline double radius_fraction(int cls) { return 0.16 + 0.05 * static_cast<double>(cls % 4); }

inline double speckle_amplitude(int cls) { return 0.03 + 0.025 * static_cast<double>(cls % 3); }

inline uint64_t sample_seed(const ToyDatasetSpec& spec, int cls, int idx) {
    uint64_t h = spec.seed * 0x9e3779b97f4a7c15ULL + 0x01000193ULL;
    h ^= static_cast<uint64_t>(cls) * 0x100000001b3ULL;
    h = h * 0xbf58476d1ce4e5b9ULL + static_cast<uint64_t>(idx);
    return h;
}

}  // namespace toydetail

// Bounds on the mask area fraction for a class; generated samples always fall
// inside (up to rasterization, covered by the slack factors).
inline std::pair<double, double> toy_area_fraction_range(const ToyDatasetSpec& spec, int cls) {
    const double r = toydetail::radius_fraction(cls);
    const double minside = static_cast<double>(std::min(spec.height, spec.width));
    const double frame = minside * minside / static_cast<double>(spec.height * spec.width);
    // semi-major in [0.85, 1.15]*r*minside/... aspect in [0.55, 0.95]; extra 10% slack each side
    const double pi = 3.14159265358979323846;
    const double lo = 0.90 * pi * r * r * 0.85 * 0.85 * 0.55 * frame;
    const double hi = 1.10 * pi * r * r * 1.15 * 1.15 * 0.95 * frame;
    return {lo, hi};
}

inline ImageSample make_toy_sample(const ToyDatasetSpec& spec, int cls, int idx) {
    const int64_t h = spec.height, w = spec.width;
    Rng rng(toydetail::sample_seed(spec, cls, idx));

    const double minside = static_cast<double>(std::min(h, w));
    const double a = toydetail::radius_fraction(cls) * minside * rng.uniform(0.85, 1.15);
    const double b = a * rng.uniform(0.55, 0.95);
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    const double cx = 0.5 * static_cast<double>(w) + rng.uniform(-0.08, 0.08) * static_cast<double>(w);
    const double cy = 0.5 * static_cast<double>(h) + rng.uniform(-0.08, 0.08) * static_cast<double>(h);
    const double ct = std::cos(theta), st = std::sin(theta);

    const auto color = toydetail::lesion_color(cls);
    const double amp = toydetail::speckle_amplitude(cls);
    const double core_dark = 0.20 + 0.10 * static_cast<double>((cls + 1) % 3);

    const double skin_r = 0.80 + rng.uniform(-0.04, 0.04);
    const double skin_g = 0.62 + rng.uniform(-0.04, 0.04);
    const double skin_b = 0.52 + rng.uniform(-0.04, 0.04);
    const double grad = rng.uniform(-0.03, 0.03);

    ImageSample s;
    s.sample_id = "c" + std::to_string(cls) + "_s" + std::to_string(idx);
    s.label = cls;
    s.image = Tensor<float>({3, h, w});
    s.mask = Tensor<uint8_t>({h, w});

    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const double vignette = grad * (static_cast<double>(y) / static_cast<double>(h) - 0.5);
            const double noise = rng.uniform(-0.02, 0.02);
            double pr = skin_r + vignette + noise;
            double pg = skin_g + vignette + noise * 0.8;
            double pb = skin_b + vignette + noise * 0.6;

            const double dx = static_cast<double>(x) + 0.5 - cx;
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double u = (ct * dx + st * dy) / a;
            const double v = (-st * dx + ct * dy) / b;
            const double rho2 = u * u + v * v;
            if (rho2 <= 1.0) {
                s.mask.at2(y, x) = 1;
                const double rho = std::sqrt(rho2);
                // darker core, speckled texture, slight blend toward skin at the rim
                const double shade = 1.0 - core_dark * (1.0 - rho);
                const double speck = rng.uniform(-amp, amp);
                double lr = color.r * shade + speck;
                double lg = color.g * shade + speck * 0.9;
                double lb = color.b * shade + speck * 0.8;
                const double alpha = rho < 0.9 ? 1.0 : 1.0 - 0.45 * (rho - 0.9) / 0.1;
                pr = alpha * lr + (1.0 - alpha) * pr;
                pg = alpha * lg + (1.0 - alpha) * pg;
                pb = alpha * lb + (1.0 - alpha) * pb;
            }
            s.image.at3(0, y, x) = static_cast<float>(std::clamp(pr, 0.0, 1.0));
            s.image.at3(1, y, x) = static_cast<float>(std::clamp(pg, 0.0, 1.0));
            s.image.at3(2, y, x) = static_cast<float>(std::clamp(pb, 0.0, 1.0));
        }
    }
    return s;
}

// Writes images, masks and the manifest under out_dir and returns the manifest.
inline DatasetManifest generate_toy_dataset(const ToyDatasetSpec& spec, const fs::path& out_dir) {
    if (spec.num_classes < 2) throw std::invalid_argument("toy: num_classes must be >= 2");
    if (spec.samples_per_class < 1) throw std::invalid_argument("toy: samples_per_class must be >= 1");

    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    fs::create_directories(out_dir / "masks", ec);
    if (!fs::is_directory(out_dir / "images") || !fs::is_directory(out_dir / "masks"))
        throw std::runtime_error("toy: cannot create output directory: " + out_dir.string());

    DatasetManifest m;
    m.height = spec.height;
    m.width = spec.width;
    m.base_dir = out_dir;
    for (int c = 0; c < spec.num_classes; ++c) m.class_names.push_back("toy" + std::to_string(c));

    for (int c = 0; c < spec.num_classes; ++c) {
        for (int i = 0; i < spec.samples_per_class; ++i) {
            ImageSample s = make_toy_sample(spec, c, i);
            const std::string img_rel = "images/" + s.sample_id + ".ppm";
            const std::string mask_rel = "masks/" + s.sample_id + ".pgm";
            write_pnm((out_dir / img_rel).string(), s.image);
            write_mask((out_dir / mask_rel).string(), s.mask);
            m.entries.push_back(ManifestEntry{s.sample_id, img_rel, mask_rel, c});
        }
    }
    std::sort(m.entries.begin(), m.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.sample_id < b.sample_id; });
    save_manifest(m, out_dir / "manifest.jsonl");
    return m;
}

}  // namespace lesyn::data
