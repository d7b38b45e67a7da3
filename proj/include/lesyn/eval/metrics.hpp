#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lesyn/eval/extractor.hpp"

// Quantitative generative metrics: Frechet distance between Gaussian moment
// fits (FID), Inception-style score over class posteriors (IS), and the
// source-class x target-class FID confusion matrix for inter-class synthesis.

namespace lesyn::eval {

namespace mdetail {

// Population (1/N) covariance: keeps FID invariant under duplicating samples.
inline void moments(const FeatureSet& fs, Eigen::VectorXd& mu, Eigen::MatrixXd& sigma) {
    const int64_t n = fs.size(), d = fs.dim();
    Eigen::MatrixXd x(n, d);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) x(i, j) = fs.rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    mu = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    sigma = centered.transpose() * centered / static_cast<double>(n);
}

}  // namespace mdetail

// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}); the square root comes from a
// self-adjoint eigendecomposition of the symmetrized product with an eps*I
// jitter when the product is near singular. Tiny negative eigenvalues clamp to 0.
inline double compute_fid(const FeatureSet& real, const FeatureSet& fake) {
    if (real.extractor_id != fake.extractor_id)
        throw std::invalid_argument("fid: feature sets come from different extractors (" + real.extractor_id +
                                    " vs " + fake.extractor_id + ")");
    if (real.size() < 2 || fake.size() < 2) throw std::invalid_argument("fid: need at least 2 samples per set");
    if (real.dim() != fake.dim()) throw std::invalid_argument("fid: feature dimension mismatch");

    Eigen::VectorXd mu1, mu2;
    Eigen::MatrixXd s1, s2;
    mdetail::moments(real, mu1, s1);
    mdetail::moments(fake, mu2, s2);

    const double mean_term = (mu1 - mu2).squaredNorm();

    // Near-singular products get an eps*I jitter applied to BOTH covariances so
    // the trace terms stay consistent with the square-root term.
    constexpr double kEps = 1e-6;
    Eigen::MatrixXd prod = s1 * s2;
    const double scale = std::max(1.0, prod.cwiseAbs().maxCoeff());
    if (std::abs(prod.determinant()) < kEps * kEps * scale) {
        const int64_t d = s1.rows();
        const Eigen::MatrixXd jitter = kEps * Eigen::MatrixXd::Identity(d, d);
        s1 += jitter;
        s2 += jitter;
        prod = s1 * s2;
    }
    Eigen::MatrixXd sym = 0.5 * (prod + prod.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    double sqrt_trace = 0;
    for (int64_t i = 0; i < es.eigenvalues().size(); ++i) {
        const double lam = es.eigenvalues()(i);
        if (lam > 0) sqrt_trace += std::sqrt(lam);  // tiny negatives clamp to 0
    }
    double fid = mean_term + s1.trace() + s2.trace() - 2.0 * sqrt_trace;
    if (fid < 0 && fid > -1e-6) fid = 0;  // floating-point residue only
    return fid;
}

struct InceptionScore {
    double mean = 0;
    double stddev = 0;
};

// probs: N rows of class posteriors (each summing to 1 within 1e-6). Per split:
// exp(mean_x KL(p(y|x) || mean_x p(y|x))); reported as mean +- std over splits.
inline InceptionScore compute_is(const std::vector<std::vector<double>>& probs, int num_splits = 10) {
    if (probs.empty()) throw std::invalid_argument("is: empty probability set");
    const size_t c = probs[0].size();
    for (const auto& row : probs) {
        if (row.size() != c) throw std::invalid_argument("is: ragged probability rows");
        double s = 0;
        for (double p : row) {
            if (p < 0) throw std::invalid_argument("is: negative probability");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-6) throw std::invalid_argument("is: probability row does not sum to 1");
    }
    num_splits = std::max(1, std::min<int>(num_splits, static_cast<int>(probs.size())));
    std::vector<double> scores;
    const size_t n = probs.size();
    for (int s = 0; s < num_splits; ++s) {
        const size_t lo = n * static_cast<size_t>(s) / static_cast<size_t>(num_splits);
        const size_t hi = n * static_cast<size_t>(s + 1) / static_cast<size_t>(num_splits);
        if (hi <= lo) continue;
        std::vector<double> marginal(c, 0.0);
        for (size_t i = lo; i < hi; ++i)
            for (size_t j = 0; j < c; ++j) marginal[j] += probs[i][j];
        for (auto& m : marginal) m /= static_cast<double>(hi - lo);
        double mean_kl = 0;
        for (size_t i = lo; i < hi; ++i) {
            double kl = 0;
            for (size_t j = 0; j < c; ++j) {
                const double p = probs[i][j];
                if (p > 0) kl += p * std::log(p / marginal[j]);
            }
            mean_kl += kl;
        }
        mean_kl /= static_cast<double>(hi - lo);
        scores.push_back(std::exp(mean_kl));
    }
    InceptionScore out;
    for (double s : scores) out.mean += s;
    out.mean /= static_cast<double>(scores.size());
    double var = 0;
    for (double s : scores) var += (s - out.mean) * (s - out.mean);
    out.stddev = std::sqrt(var / static_cast<double>(scores.size()));
    return out;
}

struct FidMatrix {
    int num_classes = 0;
    std::vector<std::vector<std::optional<double>>> cells;  // [source][target]; absent = missing data
    std::vector<double> target_mean;                        // over present cells per target column
    std::vector<double> target_std;
    std::string extractor_id;

    bool complete() const {
        for (const auto& row : cells)
            for (const auto& c : row)
                if (!c) return false;
        return true;
    }
};

// cell (i,j) = FID(real class j, synthetic generated from source i targeting j).
// Missing cells stay absent rather than reading as zero.
inline FidMatrix fid_confusion_matrix(const std::map<std::pair<int, int>, FeatureSet>& synth_by_source_target,
                                      const std::vector<FeatureSet>& real_by_class) {
    FidMatrix m;
    m.num_classes = static_cast<int>(real_by_class.size());
    if (m.num_classes == 0) throw std::invalid_argument("fid matrix: no real classes");
    m.extractor_id = real_by_class[0].extractor_id;
    m.cells.assign(static_cast<size_t>(m.num_classes),
                   std::vector<std::optional<double>>(static_cast<size_t>(m.num_classes)));
    for (int src = 0; src < m.num_classes; ++src) {
        for (int tgt = 0; tgt < m.num_classes; ++tgt) {
            auto it = synth_by_source_target.find({src, tgt});
            if (it == synth_by_source_target.end() || it->second.size() < 2) continue;
            m.cells[static_cast<size_t>(src)][static_cast<size_t>(tgt)] =
                compute_fid(real_by_class[static_cast<size_t>(tgt)], it->second);
        }
    }
    m.target_mean.assign(static_cast<size_t>(m.num_classes), std::numeric_limits<double>::quiet_NaN());
    m.target_std.assign(static_cast<size_t>(m.num_classes), std::numeric_limits<double>::quiet_NaN());
    for (int tgt = 0; tgt < m.num_classes; ++tgt) {
        std::vector<double> vals;
        for (int src = 0; src < m.num_classes; ++src)
            if (m.cells[static_cast<size_t>(src)][static_cast<size_t>(tgt)])
                vals.push_back(*m.cells[static_cast<size_t>(src)][static_cast<size_t>(tgt)]);
        if (vals.empty()) continue;
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double var = 0;
        for (double v : vals) var += (v - mean) * (v - mean);
        m.target_mean[static_cast<size_t>(tgt)] = mean;
        m.target_std[static_cast<size_t>(tgt)] = std::sqrt(var / static_cast<double>(vals.size()));
    }
    return m;
}

// CSV-style grid; absent cells render as empty fields.
inline std::string fid_matrix_to_csv(const FidMatrix& m, const std::vector<std::string>& class_names) {
    std::ostringstream os;
    os.precision(10);
    os << "source\\target";
    for (const auto& n : class_names) os << "," << n;
    os << "\n";
    for (int src = 0; src < m.num_classes; ++src) {
        os << class_names[static_cast<size_t>(src)];
        for (int tgt = 0; tgt < m.num_classes; ++tgt) {
            os << ",";
            const auto& c = m.cells[static_cast<size_t>(src)][static_cast<size_t>(tgt)];
            if (c) os << *c;
        }
        os << "\n";
    }
    os << "target_mean";
    for (int tgt = 0; tgt < m.num_classes; ++tgt) {
        os << ",";
        if (std::isfinite(m.target_mean[static_cast<size_t>(tgt)])) os << m.target_mean[static_cast<size_t>(tgt)];
    }
    os << "\ntarget_std";
    for (int tgt = 0; tgt < m.num_classes; ++tgt) {
        os << ",";
        if (std::isfinite(m.target_std[static_cast<size_t>(tgt)])) os << m.target_std[static_cast<size_t>(tgt)];
    }
    os << "\n# extractor_id=" << m.extractor_id << "\n";
    return os.str();
}

}  // namespace lesyn::eval
