#pragma once

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lesyn/core/rng.hpp"
#include "lesyn/data/image_io.hpp"

namespace lesyn::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct ImageSample {
    Tensor<float> image;   // (C,H,W), values in [0,1]
    Tensor<uint8_t> mask;  // (H,W), values in {0,1}
    int label = 0;
    std::string sample_id;

    int64_t lesion_pixels() const {
        int64_t n = 0;
        for (int64_t i = 0; i < mask.numel(); ++i) n += mask[i];
        return n;
    }
};

struct ManifestEntry {
    std::string sample_id;
    std::string image;  // path relative to the manifest directory
    std::string mask;
    int label = 0;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names;
    int64_t height = 0;
    int64_t width = 0;
    fs::path base_dir;  // runtime only; resolved from the manifest path on load

    int num_classes() const { return static_cast<int>(class_names.size()); }

    std::vector<std::vector<size_t>> indices_by_class() const {
        std::vector<std::vector<size_t>> by_class(class_names.size());
        for (size_t i = 0; i < entries.size(); ++i) by_class[static_cast<size_t>(entries[i].label)].push_back(i);
        return by_class;
    }
};

struct IngestSkip {
    std::string sample_id;
    std::string reason;
};

struct IngestReport {
    int64_t accepted = 0;
    std::vector<IngestSkip> skipped;
};

inline void validate_manifest(const DatasetManifest& m, bool check_paths) {
    std::set<std::string> ids;
    for (const auto& e : m.entries) {
        if (!ids.insert(e.sample_id).second)
            throw std::runtime_error("manifest: duplicate sample_id: " + e.sample_id);
        if (e.label < 0 || e.label >= m.num_classes())
            throw std::runtime_error("manifest: label out of range for " + e.sample_id);
        if (check_paths) {
            if (!fs::exists(m.base_dir / e.image))
                throw std::runtime_error("manifest: missing image file: " + (m.base_dir / e.image).string());
            if (!fs::exists(m.base_dir / e.mask))
                throw std::runtime_error("manifest: missing mask file: " + (m.base_dir / e.mask).string());
        }
    }
}

// One JSON object per line; first line carries class_names and resolution.
inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("manifest: cannot write: " + path.string());
    json header = {{"class_names", m.class_names}, {"resolution", {m.height, m.width}}};
    os << header.dump() << "\n";
    for (const auto& e : m.entries) {
        json rec = {{"sample_id", e.sample_id}, {"image", e.image}, {"mask", e.mask}, {"label", e.label}};
        os << rec.dump() << "\n";
    }
}

inline DatasetManifest load_manifest(const fs::path& path, bool check_paths = true) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("manifest: cannot open: " + path.string());
    DatasetManifest m;
    m.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("manifest: empty file: " + path.string());
    json header = json::parse(line);
    m.class_names = header.at("class_names").get<std::vector<std::string>>();
    m.height = header.at("resolution").at(0).get<int64_t>();
    m.width = header.at("resolution").at(1).get<int64_t>();
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        m.entries.push_back(ManifestEntry{rec.at("sample_id").get<std::string>(), rec.at("image").get<std::string>(),
                                          rec.at("mask").get<std::string>(), rec.at("label").get<int>()});
    }
    validate_manifest(m, check_paths);
    return m;
}

inline ImageSample load_sample(const DatasetManifest& m, const ManifestEntry& e) {
    ImageSample s;
    s.sample_id = e.sample_id;
    s.label = e.label;
    Tensor<float> img = read_pnm((m.base_dir / e.image).string());
    if (img.dim(0) == 1) {  // grayscale source: replicate to 3 channels
        Tensor<float> rgb({3, img.dim(1), img.dim(2)});
        for (int64_t c = 0; c < 3; ++c)
            std::copy(img.data(), img.data() + img.dim(1) * img.dim(2), rgb.data() + c * img.dim(1) * img.dim(2));
        img = std::move(rgb);
    }
    if (img.dim(1) != m.height || img.dim(2) != m.width) img = resample_bilinear(img, m.height, m.width);
    Tensor<uint8_t> mask = read_mask((m.base_dir / e.mask).string());
    if (mask.dim(0) != m.height || mask.dim(1) != m.width) mask = resample_nearest(mask, m.height, m.width);
    s.image = std::move(img);
    s.mask = std::move(mask);
    return s;
}

inline std::vector<ImageSample> load_all_samples(const DatasetManifest& m) {
    std::vector<ImageSample> out;
    out.reserve(m.entries.size());
    for (const auto& e : m.entries) out.push_back(load_sample(m, e));
    return out;
}

// label_table: text lines "sample_id,label"; '#' starts a comment.
inline std::map<std::string, int> read_label_table(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("labels: cannot open: " + path.string());
    std::map<std::string, int> labels;
    std::string line;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error("labels: malformed line: " + line);
        std::string id = line.substr(0, comma);
        id.erase(std::remove_if(id.begin(), id.end(), [](char c) { return std::isspace(c); }), id.end());
        labels[id] = std::stoi(line.substr(comma + 1));
    }
    return labels;
}

// Matches images to same-stem masks and label rows, resamples everything to
// `resolution`, writes canonical copies under out_dir and returns the manifest.
// Unmatched samples are skipped and recorded; an empty result is a hard error.
inline std::pair<DatasetManifest, IngestReport> ingest_dataset(const fs::path& image_dir, const fs::path& mask_dir,
                                                               const fs::path& label_table,
                                                               std::pair<int64_t, int64_t> resolution,
                                                               const fs::path& out_dir,
                                                               std::vector<std::string> class_names = {}) {
    const auto labels = read_label_table(label_table);
    std::vector<fs::path> images;
    for (const auto& p : fs::directory_iterator(image_dir)) {
        const auto ext = p.path().extension().string();
        if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") images.push_back(p.path());
    }
    std::sort(images.begin(), images.end());

    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");

    DatasetManifest m;
    m.height = resolution.first;
    m.width = resolution.second;
    IngestReport report;

    int max_label = -1;
    for (const auto& [id, lab] : labels) max_label = std::max(max_label, lab);
    if (class_names.empty()) {
        for (int c = 0; c <= max_label; ++c) class_names.push_back("class" + std::to_string(c));
    }
    m.class_names = class_names;

    for (const auto& img_path : images) {
        const std::string stem = img_path.stem().string();
        fs::path mask_path;
        for (const char* ext : {".pgm", ".ppm", ".pnm"}) {
            fs::path cand = mask_dir / (stem + ext);
            if (fs::exists(cand)) {
                mask_path = cand;
                break;
            }
        }
        if (mask_path.empty()) {
            report.skipped.push_back({stem, "missing mask"});
            continue;
        }
        const auto lab = labels.find(stem);
        if (lab == labels.end()) {
            report.skipped.push_back({stem, "missing label"});
            continue;
        }
        if (lab->second < 0 || lab->second >= static_cast<int>(m.class_names.size())) {
            report.skipped.push_back({stem, "label out of range"});
            continue;
        }
        try {
            Tensor<float> img = read_pnm(img_path.string());
            if (img.dim(0) == 1) {
                Tensor<float> rgb({3, img.dim(1), img.dim(2)});
                for (int64_t c = 0; c < 3; ++c)
                    std::copy(img.data(), img.data() + img.dim(1) * img.dim(2),
                              rgb.data() + c * img.dim(1) * img.dim(2));
                img = std::move(rgb);
            }
            img = resample_bilinear(img, m.height, m.width);
            Tensor<uint8_t> mask = read_mask(mask_path.string());
            mask = resample_nearest(mask, m.height, m.width);
            const std::string img_rel = "images/" + stem + ".ppm";
            const std::string mask_rel = "masks/" + stem + ".pgm";
            write_pnm((out_dir / img_rel).string(), img);
            write_mask((out_dir / mask_rel).string(), mask);
            m.entries.push_back(ManifestEntry{stem, img_rel, mask_rel, lab->second});
            ++report.accepted;
        } catch (const std::exception& e) {
            report.skipped.push_back({stem, std::string("unreadable: ") + e.what()});
        }
    }
    std::sort(m.entries.begin(), m.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.sample_id < b.sample_id; });
    if (m.entries.empty()) throw std::runtime_error("ingest: no sample survived matching");
    m.base_dir = out_dir;
    save_manifest(m, out_dir / "manifest.jsonl");

    json rep = json::array();
    for (const auto& s : report.skipped) rep.push_back({{"sample_id", s.sample_id}, {"reason", s.reason}});
    std::ofstream os(out_dir / "ingest_report.json");
    os << json{{"accepted", report.accepted}, {"skipped", rep}}.dump(2) << "\n";
    return {m, report};
}

struct SplitResult {
    DatasetManifest train;
    DatasetManifest test;
    std::vector<std::string> warnings;
};

// Per-class stratified split: floor(fraction * n) to train, remainder to test,
// deterministic for a given seed. A single-sample class goes to train with a warning.
inline SplitResult split_dataset(const DatasetManifest& m, double train_fraction, uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("split: train_fraction must be in (0,1)");
    SplitResult r;
    r.train.class_names = r.test.class_names = m.class_names;
    r.train.height = r.test.height = m.height;
    r.train.width = r.test.width = m.width;
    r.train.base_dir = r.test.base_dir = m.base_dir;

    auto by_class = m.indices_by_class();
    Rng rng(seed);
    for (size_t c = 0; c < by_class.size(); ++c) {
        auto idx = by_class[c];
        std::sort(idx.begin(), idx.end(),
                  [&](size_t a, size_t b) { return m.entries[a].sample_id < m.entries[b].sample_id; });
        Rng class_rng = rng.fork(c);
        class_rng.shuffle(idx);
        if (idx.size() == 1) {
            r.train.entries.push_back(m.entries[idx[0]]);
            r.warnings.push_back("class " + m.class_names[c] + " has a single sample; placed in train");
            continue;
        }
        // train = floor(fraction * n) plus the rounding remainder, i.e. test = floor((1-fraction) * n);
        // the tiny epsilon guards exact products like 0.2 * 5 against binary rounding
        const size_t n_test = static_cast<size_t>(
            std::floor((1.0 - train_fraction) * static_cast<double>(idx.size()) + 1e-9));
        const size_t n_train = idx.size() - n_test;
        for (size_t i = 0; i < idx.size(); ++i) {
            (i < n_train ? r.train : r.test).entries.push_back(m.entries[idx[i]]);
        }
    }
    auto by_id = [](const ManifestEntry& a, const ManifestEntry& b) { return a.sample_id < b.sample_id; };
    std::sort(r.train.entries.begin(), r.train.entries.end(), by_id);
    std::sort(r.test.entries.begin(), r.test.entries.end(), by_id);
    return r;
}

}  // namespace lesyn::data
