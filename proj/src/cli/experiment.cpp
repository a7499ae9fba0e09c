#include "skeldiff/cli/experiment.hpp"

#include <cmath>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "skeldiff/cli/run_config.hpp"
#include "skeldiff/error.hpp"
#include "skeldiff/metrics.hpp"

namespace skeldiff::cli {

std::string mix_mode_name(MixMode m) { return m == MixMode::replace ? "replace" : "add"; }

MixMode parse_mix_mode(const std::string& s) {
    if (s == "replace") return MixMode::replace;
    if (s == "add") return MixMode::add;
    fail(ErrorCategory::config, "unknown mix mode '" + s + "' (expected replace or add)");
}

MeanCI mean_ci95(const std::vector<double>& values) {
    if (values.empty()) fail(ErrorCategory::invalid_argument, "mean_ci95: no values");
    MeanCI out;
    const auto n = static_cast<double>(values.size());
    for (double v : values) out.mean += v;
    out.mean /= n;
    if (values.size() < 2) return out;
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    const boost::math::students_t dist(n - 1.0);
    out.half_width = boost::math::quantile(dist, 0.975) * sd / std::sqrt(n);
    return out;
}

std::vector<AugmentCell> run_augment_experiment(const Dataset& real, const Dataset& synth, const Dataset& eval,
                                                const NormParams& norm, const AugmentConfig& cfg,
                                                const std::function<void(const std::string&)>& log) {
    if (cfg.trials <= 0) fail(ErrorCategory::config, "augment: trials must be positive");
    if (cfg.proportions.empty()) fail(ErrorCategory::config, "augment: proportions list is empty");
    for (double p : cfg.proportions)
        if (!(p >= 0.0)) fail(ErrorCategory::config, "augment: proportions must be >= 0");

    const ad::Tensor eval_images = models::images_tensor(eval, norm);
    const auto eval_labels = models::labels_of(eval);
    std::vector<AugmentCell> cells;
    for (std::size_t pi = 0; pi < cfg.proportions.size(); ++pi) {
        const double p = cfg.proportions[pi];
        AugmentCell cell;
        cell.proportion = p;
        for (int trial = 0; trial < cfg.trials; ++trial) {
            const auto tr = static_cast<std::uint64_t>(trial);
            Dataset train_set = real;
            if (p > 0.0) {
                const std::uint64_t mix_seed = derive_seed(cfg.seed, tr, 1);
                train_set = cfg.mode == MixMode::replace ? mix_replace(real, synth, p, mix_seed) : mix_add(real, synth, p, mix_seed);
            }
            models::TrainConfig tc = cfg.train;
            tc.seed = derive_seed(cfg.seed, tr, 2);
            models::STTrans model(cfg.model, derive_seed(cfg.seed, tr, 3));
            const ad::Tensor images = models::images_tensor(train_set, norm);
            const auto labels = models::labels_of(train_set);
            models::train_classifier(model, images, labels, ad::Tensor({0}), {}, tc);
            const auto pred = models::argmax_rows(models::predict_logits(model, eval_images));
            std::size_t ok = 0;
            for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == eval_labels[i];
            const double acc = static_cast<double>(ok) / static_cast<double>(eval.size());
            cell.accuracies.push_back(acc);
            if (log)
                log("p=" + fmt(p, 3) + " trial=" + std::to_string(trial) + " train_size=" + std::to_string(train_set.size()) +
                    " accuracy=" + fmt(acc, 6));
        }
        cell.summary = mean_ci95(cell.accuracies);
        cells.push_back(std::move(cell));
    }
    return cells;
}

nlohmann::json augment_report_json(const std::vector<AugmentCell>& cells) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : cells)
        rows.push_back({{"proportion", c.proportion},
                        {"accuracies", c.accuracies},
                        {"mean", c.summary.mean},
                        {"ci95_half_width", c.summary.half_width}});
    return rows;
}

std::string augment_report_csv(const std::vector<AugmentCell>& cells) {
    std::ostringstream out;
    out << "proportion,trials,mean_accuracy,ci95_half_width\n";
    for (const auto& c : cells)
        out << fmt(c.proportion, 4) << ',' << c.accuracies.size() << ',' << fmt(c.summary.mean, 6) << ','
            << fmt(c.summary.half_width, 6) << '\n';
    return out.str();
}

}  // namespace skeldiff::cli
