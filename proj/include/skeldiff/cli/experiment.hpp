#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skeldiff/dataset.hpp"
#include "skeldiff/models/st_trans.hpp"
#include "skeldiff/models/train.hpp"

namespace skeldiff::cli {

enum class MixMode { replace, add };
std::string mix_mode_name(MixMode m);
MixMode parse_mix_mode(const std::string& s);

struct MeanCI {
    double mean = 0.0;
    double half_width = 0.0;  // 95% Student-t; 0 for a single trial
};

/// Mean and 95% confidence half-width over trial values.
MeanCI mean_ci95(const std::vector<double>& values);

struct AugmentCell {
    double proportion = 0.0;
    std::vector<double> accuracies;  // one per trial, trial order
    MeanCI summary;
};

struct AugmentConfig {
    MixMode mode = MixMode::add;
    std::vector<double> proportions{0.0, 0.2, 0.4};
    int trials = 5;
    std::uint64_t seed = 0;
    models::STTransConfig model;
    models::TrainConfig train;
};

/// For each proportion and trial: mix real and synthetic training data,
/// train a fresh recognizer and score it on `eval`. Trial t trains with the
/// same seed at every proportion, so cells differ only in the data mix.
/// Proportion 0 skips the mixers entirely.
std::vector<AugmentCell> run_augment_experiment(const Dataset& real, const Dataset& synth, const Dataset& eval,
                                                const NormParams& norm, const AugmentConfig& cfg,
                                                const std::function<void(const std::string&)>& log = {});

nlohmann::json augment_report_json(const std::vector<AugmentCell>& cells);
std::string augment_report_csv(const std::vector<AugmentCell>& cells);

}  // namespace skeldiff::cli
