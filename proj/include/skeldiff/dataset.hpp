#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "skeldiff/codec.hpp"

namespace skeldiff {

enum class Provenance { real, synthetic, mixed };

std::string provenance_name(Provenance p);
Provenance parse_provenance(const std::string& s);

struct Dataset {
    std::vector<JointSequence> items;
    int num_classes = 0;
    std::size_t num_joints = 0;
    std::vector<std::pair<int, int>> topology;  // (parent, child) joint indices
    Provenance provenance = Provenance::real;

    std::size_t size() const { return items.size(); }
    /// Throws if any item violates the dataset invariants.
    void validate() const;
    std::vector<std::size_t> class_counts() const;

    bool operator==(const Dataset&) const = default;
};

struct ToyGenConfig {
    int num_classes = 4;
    int samples_per_class = 100;
    std::size_t num_joints = 16;
    std::size_t num_frames = 16;
    double noise_std = 0.01;
    std::uint64_t seed = 0;
};

/// Names of the procedural action classes, in label order.
const std::vector<std::string>& toy_class_names();

/// Joint indices of the toy skeleton's limb chains (first 16 joints).
struct ToyChains {
    static constexpr int right_arm[3] = {7, 8, 9};
    static constexpr int left_arm[3] = {4, 5, 6};
    static constexpr int right_leg[3] = {13, 14, 15};
    static constexpr int left_leg[3] = {10, 11, 12};
};

/// Procedural action corpus: each class animates designated joints of a
/// fixed kinematic tree with per-sample random amplitude, timing, body
/// scale, heading and root offset, plus Gaussian coordinate noise.
Dataset gen_toy(const ToyGenConfig& cfg);

// JSONL: a header line {"format","num_classes","num_joints","topology","provenance"}
// then one object per item {seq_id,label,subject_id,num_frames,num_joints,coords}.
void save_jsonl(const Dataset& ds, const std::filesystem::path& path);
Dataset load_jsonl(const std::filesystem::path& path);

/// Cross-subject partition: items whose subject is in `eval_subjects` go to the second set.
std::pair<Dataset, Dataset> split_by_subject(const Dataset& ds, const std::set<int>& eval_subjects);

/// Per class, replaces round(p * n_c) uniformly chosen real items with synthetic ones.
Dataset mix_replace(const Dataset& real, const Dataset& synth, double p, std::uint64_t seed);
/// Per class, appends round(p * n_c) synthetic items; real items are untouched.
Dataset mix_add(const Dataset& real, const Dataset& synth, double p, std::uint64_t seed);

/// Items of one class, in dataset order.
std::vector<std::size_t> class_indices(const Dataset& ds, int label);

}  // namespace skeldiff
