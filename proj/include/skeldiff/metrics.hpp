#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "skeldiff/dataset.hpp"
#include "skeldiff/models/st_trans.hpp"

namespace skeldiff {

struct FeatureSet {
    Eigen::MatrixXd features;  // n x d
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    /// Rows whose label equals `label`.
    FeatureSet subset(int label) const;
};

struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    std::size_t n = 0;
};

/// Pooled pre-head embeddings of every item.
FeatureSet extract_features(const models::STTrans& model, const Dataset& ds, const NormParams& norm);

/// Scales every feature row to unit L2 norm (zero rows stay zero).
void l2_normalize(FeatureSet& fs);

/// Sample mean and unbiased, symmetrized covariance.
FeatureStats fit_stats(const FeatureSet& fs);

/// Frechet distance between the Gaussian fits. The cross term uses the
/// eigendecomposition of S_A^(1/2) S_B S_A^(1/2).
double fid(const FeatureStats& a, const FeatureStats& b);

/// Fraction of argmax-correct predictions (ties go to the lowest class).
double recognition_accuracy(const models::STTrans& model, const Dataset& ds, const NormParams& norm);

/// Mean L2 distance over n_pairs seeded uniform (synthetic, real) pairs.
double overall_diversity(const FeatureSet& synth, const FeatureSet& real, std::size_t n_pairs, std::uint64_t seed);
/// Same, averaged over all synthetic x real pairs.
double overall_diversity_exhaustive(const FeatureSet& synth, const FeatureSet& real);

struct PerActionDiversity {
    std::vector<double> per_class;
    double mean = 0.0;
};

/// Diversity restricted to same-class pairs for classes 0..num_classes-1.
/// n_pairs_per_class = 0 selects the exhaustive mean.
PerActionDiversity per_action_diversity(const FeatureSet& synth, const FeatureSet& real, int num_classes,
                                        std::size_t n_pairs_per_class, std::uint64_t seed);

}  // namespace skeldiff
