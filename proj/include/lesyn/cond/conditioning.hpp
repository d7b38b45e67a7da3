#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "lesyn/measure/features.hpp"
#include "lesyn/nn/modules.hpp"

// Conditioning machinery: the learned measurement encoder
// F_q = SiLU(LayerNorm(W v + b)), the learned class embedding table S, the
// two-token condition sequence T0 = [S_c, F_q], and the per-class running-mean
// measurement codebook used for inter-class synthesis.

namespace lesyn::cond {

// Measurement token encoder; parameters live in the caller's registry so the
// surrounding model trains and checkpoints them.
template <typename T>
struct MeasurementEncoder {
    nn::Linear<T> proj;
    nn::LayerNorm<T> norm;

    MeasurementEncoder() = default;
    MeasurementEncoder(nn::ParamRegistry<T>& reg, const std::string& name, int64_t width, Rng& rng)
        : proj(reg, name + ".proj", measure::kNumMeasurements, width, rng), norm(reg, name + ".norm", width) {}

    // v: (n x 14) normalized measurement rows -> (n x width).
    ag::NodeRef<T> forward(const ag::NodeRef<T>& v) const {
        if (v->value.dim(1) != measure::kNumMeasurements)
            throw std::invalid_argument("measurement encoder: expected " +
                                        std::to_string(measure::kNumMeasurements) + " dims, got " +
                                        std::to_string(v->value.dim(1)));
        return ag::silu(norm.forward(proj.forward(v)));
    }

    ag::NodeRef<T> encode_vector(const measure::MeasurementVector& v) const {
        Tensor<T> row({1, measure::kNumMeasurements});
        for (size_t i = 0; i < measure::kNumMeasurements; ++i) row[static_cast<int64_t>(i)] = static_cast<T>(v[i]);
        return forward(ag::constant(row));
    }
};

template <typename T>
struct ClassEmbedding {
    ag::NodeRef<T> table;  // (numClasses x width)

    ClassEmbedding() = default;
    ClassEmbedding(nn::ParamRegistry<T>& reg, const std::string& name, int64_t num_classes, int64_t width,
                   Rng& rng) {
        table = reg.add(name + ".table", Tensor<T>::randn({num_classes, width}, rng, T(0.02)));
    }

    ag::NodeRef<T> row(int cls) const {
        if (!table || cls < 0 || cls >= table->value.dim(0))
            throw std::out_of_range("class embedding: invalid class id " + std::to_string(cls));
        return ag::embedding(table, std::vector<int64_t>{cls});
    }
};

// T0 = [S_c, F_q]: always exactly two tokens.
template <typename T>
ag::NodeRef<T> build_condition_tokens(const ClassEmbedding<T>& classes, int cls, const ag::NodeRef<T>& f_q) {
    auto s = classes.row(cls);
    if (f_q->value.dim(1) != s->value.dim(1))
        throw std::invalid_argument("condition tokens: width mismatch between S and F_q");
    if (f_q->value.dim(0) != 1) throw std::invalid_argument("condition tokens: F_q must be a single row");
    return ag::concat_rows<T>({s, f_q});
}

// Per-class running mean of raw (unnormalized) measurement vectors.
// Normalization happens at query time with whatever normalizer is current.
class MeasurementCodebook {
public:
    MeasurementCodebook() = default;
    explicit MeasurementCodebook(std::vector<std::string> class_names)
        : class_names_(std::move(class_names)),
          means_(class_names_.size()),
          counts_(class_names_.size(), 0) {}

    int num_classes() const { return static_cast<int>(class_names_.size()); }
    const std::vector<std::string>& class_names() const { return class_names_; }

    int64_t count(int cls) const {
        check_class(cls);
        return counts_[static_cast<size_t>(cls)];
    }

    void update(int cls, const measure::MeasurementVector& v) {
        check_class(cls);
        auto& mean = means_[static_cast<size_t>(cls)];
        auto& n = counts_[static_cast<size_t>(cls)];
        for (size_t i = 0; i < measure::kNumMeasurements; ++i) {
            mean[i] = (static_cast<double>(n) * mean[i] + v[i]) / static_cast<double>(n + 1);
        }
        ++n;
    }

    measure::MeasurementVector query(int cls) const {
        check_class(cls);
        if (counts_[static_cast<size_t>(cls)] == 0)
            throw std::runtime_error("measurement codebook: class '" + class_names_[static_cast<size_t>(cls)] +
                                     "' has no measurement statistics");
        return means_[static_cast<size_t>(cls)];
    }

    // Text format, bit-exact round trip (17 significant digits).
    void save(const std::filesystem::path& path) const {
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw std::runtime_error("measurement codebook: cannot write: " + path.string());
        os << std::setprecision(17);
        os << "# class count mean[14]\n";
        for (size_t c = 0; c < class_names_.size(); ++c) {
            os << class_names_[c] << " " << counts_[c];
            for (size_t i = 0; i < measure::kNumMeasurements; ++i) os << " " << means_[c][i];
            os << "\n";
        }
    }

    static MeasurementCodebook load(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("measurement codebook: cannot open: " + path.string());
        std::string line;
        std::getline(is, line);  // header comment
        MeasurementCodebook cb;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string name;
            int64_t count = 0;
            ls >> name >> count;
            measure::MeasurementVector v;
            for (size_t i = 0; i < measure::kNumMeasurements; ++i)
                if (!(ls >> v[i])) throw std::runtime_error("measurement codebook: malformed line: " + line);
            cb.class_names_.push_back(name);
            cb.counts_.push_back(count);
            cb.means_.push_back(v);
        }
        return cb;
    }

    bool operator==(const MeasurementCodebook& o) const {
        if (class_names_ != o.class_names_ || counts_ != o.counts_) return false;
        for (size_t c = 0; c < means_.size(); ++c)
            for (size_t i = 0; i < measure::kNumMeasurements; ++i)
                if (means_[c][i] != o.means_[c][i]) return false;
        return true;
    }

private:
    void check_class(int cls) const {
        if (cls < 0 || cls >= num_classes())
            throw std::out_of_range("measurement codebook: invalid class id " + std::to_string(cls));
    }

    std::vector<std::string> class_names_;
    std::vector<measure::MeasurementVector> means_;
    std::vector<int64_t> counts_;
};

// Offline rebuild over a manifest (extraction order = manifest order).
inline MeasurementCodebook build_codebook(const data::DatasetManifest& manifest) {
    MeasurementCodebook cb(manifest.class_names);
    for (const auto& e : manifest.entries) {
        const data::ImageSample s = data::load_sample(manifest, e);
        cb.update(e.label, measure::extract_measurements(s.image, s.mask));
    }
    return cb;
}

}  // namespace lesyn::cond
