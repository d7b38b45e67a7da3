#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "lesyn/core/ops_conv.hpp"
#include "lesyn/data/manifest.hpp"

// Frozen, seeded convolutional feature extractor for FID/IS at desk scale.
// Features from different extractor_ids are never comparable; every report
// carries the id of the extractor that produced it.

namespace lesyn::eval {

class FrozenConvExtractor {
public:
    FrozenConvExtractor(uint64_t seed, int64_t feature_dim) : seed_(seed), dim_(feature_dim) {
        Rng rng(seed ^ 0xfea7u);
        w1_ = make_w(3, 16, rng);
        w2_ = make_w(16, 32, rng);
        w3_ = make_w(32, dim_, rng);
    }

    std::string id() const { return "frozen-conv-v1/seed=" + std::to_string(seed_) + "/d=" + std::to_string(dim_); }
    int64_t dim() const { return dim_; }

    // (3,H,W) float image in [0,1] -> D-dim feature vector.
    std::vector<double> features(const Tensor<float>& image) const {
        ag::NoGradGuard ng;
        auto x = ag::constant(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}));
        auto b1 = ag::constant(Tensor<float>({16}));
        auto b2 = ag::constant(Tensor<float>({32}));
        auto b3 = ag::constant(Tensor<float>({dim_}));
        auto h = ag::silu(ag::conv2d(x, w1_, b1, 2, 1));
        h = ag::silu(ag::conv2d(h, w2_, b2, 2, 1));
        h = ag::silu(ag::conv2d(h, w3_, b3, 2, 1));
        auto pooled = ag::pool_mean_hw(h);  // (1, D)
        std::vector<double> out(static_cast<size_t>(dim_));
        for (int64_t i = 0; i < dim_; ++i) out[static_cast<size_t>(i)] = static_cast<double>(pooled->value[i]);
        return out;
    }

private:
    static ag::NodeRef<float> make_w(int64_t in, int64_t out, Rng& rng) {
        const float std = static_cast<float>(std::sqrt(2.0 / static_cast<double>(in * 9)));
        return ag::constant(Tensor<float>::randn({out, in, 3, 3}, rng, std));
    }

    uint64_t seed_;
    int64_t dim_;
    ag::NodeRef<float> w1_, w2_, w3_;
};

struct FeatureSet {
    std::vector<std::vector<double>> rows;  // N x D
    std::string extractor_id;

    int64_t size() const { return static_cast<int64_t>(rows.size()); }
    int64_t dim() const { return rows.empty() ? 0 : static_cast<int64_t>(rows[0].size()); }
};

inline FeatureSet extract_features(const FrozenConvExtractor& ex, const std::vector<Tensor<float>>& images) {
    FeatureSet fs;
    fs.extractor_id = ex.id();
    fs.rows.reserve(images.size());
    for (const auto& img : images) fs.rows.push_back(ex.features(img));
    return fs;
}

struct FeatureExportReport {
    int64_t exported = 0;
    std::vector<std::string> skipped;  // unreadable files
};

// Tabular export: sample_id, label (-1 = unknown), then D feature columns.
inline void write_feature_table(const std::vector<std::string>& ids, const std::vector<int>& labels,
                                const FeatureSet& fs, const std::filesystem::path& path) {
    if (ids.size() != fs.rows.size()) throw std::invalid_argument("feature export: id/row count mismatch");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("feature export: cannot write: " + path.string());
    os << "# extractor_id=" << fs.extractor_id << "\n";
    os << "sample_id\tlabel";
    for (int64_t j = 0; j < fs.dim(); ++j) os << "\tf" << j;
    os << "\n" << std::setprecision(10);
    for (size_t i = 0; i < ids.size(); ++i) {
        os << ids[i] << "\t" << (i < labels.size() ? labels[i] : -1);
        for (double v : fs.rows[i]) os << "\t" << v;
        os << "\n";
    }
}

// Feature export straight from a directory of PNM images (sorted order).
// Unreadable files are skipped and reported; an empty directory is an error.
inline FeatureExportReport export_features_from_dir(const FrozenConvExtractor& ex,
                                                    const std::filesystem::path& image_dir,
                                                    const std::filesystem::path& out_path) {
    std::vector<std::filesystem::path> files;
    for (const auto& p : std::filesystem::directory_iterator(image_dir)) {
        const auto ext = p.path().extension().string();
        if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") files.push_back(p.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::invalid_argument("feature export: no images in " + image_dir.string());

    FeatureExportReport report;
    FeatureSet fs;
    fs.extractor_id = ex.id();
    std::vector<std::string> ids;
    for (const auto& f : files) {
        try {
            Tensor<float> img = data::read_pnm(f.string());
            if (img.dim(0) == 1) {
                Tensor<float> rgb({3, img.dim(1), img.dim(2)});
                for (int64_t c = 0; c < 3; ++c)
                    std::copy(img.data(), img.data() + img.dim(1) * img.dim(2),
                              rgb.data() + c * img.dim(1) * img.dim(2));
                img = std::move(rgb);
            }
            fs.rows.push_back(ex.features(img));
            ids.push_back(f.stem().string());
            ++report.exported;
        } catch (const std::exception&) {
            report.skipped.push_back(f.filename().string());
        }
    }
    write_feature_table(ids, {}, fs, out_path);
    return report;
}

}  // namespace lesyn::eval
