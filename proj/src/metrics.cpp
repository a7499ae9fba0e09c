#include "skeldiff/metrics.hpp"

#include <cmath>

#include "skeldiff/error.hpp"
#include "skeldiff/models/train.hpp"

namespace skeldiff {

namespace {

// Eigenvalue tolerance ladder for the matrix square roots.
constexpr double kClipEig = -1e-6;   // values in (kClipEig, 0) are rounding noise
constexpr double kClipFid = -1e-8;

Eigen::VectorXd checked_sqrt(const Eigen::VectorXd& ev, const char* what) {
    Eigen::VectorXd out(ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] <= kClipEig)
            fail(ErrorCategory::numeric, std::string("fid: ") + what + " has eigenvalue " + std::to_string(ev[i]) +
                                             " (covariance is not positive semidefinite)");
        out[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return out;
}

}  // namespace

FeatureSet FeatureSet::subset(int label) const {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label) rows.push_back(static_cast<Eigen::Index>(i));
    FeatureSet out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.features.row(static_cast<Eigen::Index>(r)) = features.row(rows[r]);
    out.labels.assign(rows.size(), label);
    return out;
}

FeatureSet extract_features(const models::STTrans& model, const Dataset& ds, const NormParams& norm) {
    if (ds.num_classes != model.config().num_classes)
        fail(ErrorCategory::config, "extract_features: model has " + std::to_string(model.config().num_classes) +
                                        " classes, dataset " + std::to_string(ds.num_classes));
    const ad::Tensor images = models::images_tensor(ds, norm);
    const std::size_t n = ds.size();
    const auto d = static_cast<std::size_t>(model.config().embed_dim);
    FeatureSet fs;
    fs.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    ad::NoGradGuard guard;
    constexpr std::size_t chunk = 64;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < n; start += chunk) {
        rows.clear();
        for (std::size_t r = start; r < std::min(n, start + chunk); ++r) rows.push_back(r);
        const ad::Tensor f = model.features(ad::Value::constant(models::gather(images, rows))).data();
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < d; ++c)
                fs.features(static_cast<Eigen::Index>(start + r), static_cast<Eigen::Index>(c)) = f[r * d + c];
    }
    for (const auto& it : ds.items) fs.labels.push_back(it.label);
    return fs;
}

void l2_normalize(FeatureSet& fs) {
    for (Eigen::Index r = 0; r < fs.features.rows(); ++r) {
        const double n = fs.features.row(r).norm();
        if (n > 0.0) fs.features.row(r) /= n;
    }
}

FeatureStats fit_stats(const FeatureSet& fs) {
    const auto n = fs.features.rows();
    if (n < 2) fail(ErrorCategory::invalid_argument, "fit_stats: need at least 2 samples, got " + std::to_string(n));
    FeatureStats st;
    st.n = static_cast<std::size_t>(n);
    st.mean = fs.features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = fs.features.rowwise() - st.mean.transpose();
    st.cov = centered.transpose() * centered / static_cast<double>(n - 1);
    st.cov = 0.5 * (st.cov + st.cov.transpose()).eval();
    return st;
}

double fid(const FeatureStats& a, const FeatureStats& b) {
    if (a.mean.size() != b.mean.size() || a.cov.rows() != a.mean.size() || b.cov.rows() != b.mean.size())
        fail(ErrorCategory::shape, "fid: feature dimensions differ (" + std::to_string(a.mean.size()) + " vs " +
                                       std::to_string(b.mean.size()) + ")");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a.cov);
    const Eigen::VectorXd sa = checked_sqrt(ea.eigenvalues(), "first covariance");
    const Eigen::MatrixXd root_a = ea.eigenvectors() * sa.asDiagonal() * ea.eigenvectors().transpose();
    Eigen::MatrixXd m = root_a * b.cov * root_a;
    m = 0.5 * (m + m.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
    const double cross = checked_sqrt(em.eigenvalues(), "cross product").sum();
    const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if (value < kClipFid) fail(ErrorCategory::numeric, "fid: negative result " + std::to_string(value));
    return std::max(value, 0.0);
}

double recognition_accuracy(const models::STTrans& model, const Dataset& ds, const NormParams& norm) {
    if (ds.size() == 0) fail(ErrorCategory::invalid_argument, "recognition_accuracy: empty dataset");
    const auto pred = models::argmax_rows(models::predict_logits(model, models::images_tensor(ds, norm)));
    std::size_t ok = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) ok += static_cast<int>(pred[i]) == ds.items[i].label;
    return static_cast<double>(ok) / static_cast<double>(ds.size());
}

double overall_diversity(const FeatureSet& synth, const FeatureSet& real, std::size_t n_pairs, std::uint64_t seed) {
    if (synth.features.rows() == 0 || real.features.rows() == 0)
        fail(ErrorCategory::invalid_argument, "overall_diversity: empty feature set");
    if (n_pairs == 0) fail(ErrorCategory::invalid_argument, "overall_diversity: n_pairs must be positive");
    Rng rng(seed);
    double total = 0.0;
    for (std::size_t k = 0; k < n_pairs; ++k) {
        const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(synth.features.rows())));
        const auto j = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(real.features.rows())));
        total += (synth.features.row(i) - real.features.row(j)).norm();
    }
    return total / static_cast<double>(n_pairs);
}

double overall_diversity_exhaustive(const FeatureSet& synth, const FeatureSet& real) {
    if (synth.features.rows() == 0 || real.features.rows() == 0)
        fail(ErrorCategory::invalid_argument, "overall_diversity: empty feature set");
    double total = 0.0;
    for (Eigen::Index i = 0; i < synth.features.rows(); ++i)
        for (Eigen::Index j = 0; j < real.features.rows(); ++j) total += (synth.features.row(i) - real.features.row(j)).norm();
    return total / static_cast<double>(synth.features.rows() * real.features.rows());
}

PerActionDiversity per_action_diversity(const FeatureSet& synth, const FeatureSet& real, int num_classes,
                                        std::size_t n_pairs_per_class, std::uint64_t seed) {
    PerActionDiversity out;
    for (int c = 0; c < num_classes; ++c) {
        const FeatureSet s = synth.subset(c), r = real.subset(c);
        if (s.size() == 0 || r.size() == 0)
            fail(ErrorCategory::invalid_argument, "per_action_diversity: class " + std::to_string(c) + " missing from the " +
                                                      (s.size() == 0 ? "synthetic" : "real") + " set");
        out.per_class.push_back(n_pairs_per_class == 0
                                    ? overall_diversity_exhaustive(s, r)
                                    : overall_diversity(s, r, n_pairs_per_class, derive_seed(seed, static_cast<std::uint64_t>(c))));
    }
    for (double v : out.per_class) out.mean += v;
    if (!out.per_class.empty()) out.mean /= static_cast<double>(out.per_class.size());
    return out;
}

}  // namespace skeldiff
