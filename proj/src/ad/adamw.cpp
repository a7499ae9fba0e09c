#include "skeldiff/ad/adamw.hpp"

#include <cmath>
#include <string>

#include "skeldiff/error.hpp"

namespace skeldiff::ad {

void adamw_update(std::span<double> param, std::span<const double> grad, AdamWMoments& moments,
                  const AdamWHyper& hyper, std::int64_t step) {
    if (step < 1) fail(ErrorCategory::invalid_argument, "adamw: step count must be >= 1");
    if (moments.m.size() != param.size() || moments.v.size() != param.size()) {
        fail(ErrorCategory::invalid_argument, "adamw: optimizer state not initialized for parameter of size " +
                                                  std::to_string(param.size()));
    }
    if (grad.size() != param.size()) {
        fail(ErrorCategory::shape, "adamw: gradient size " + std::to_string(grad.size()) + " != parameter size " +
                                       std::to_string(param.size()));
    }
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
    const double decay = 1.0 - hyper.lr * hyper.weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        moments.m[i] = hyper.beta1 * moments.m[i] + (1.0 - hyper.beta1) * g;
        moments.v[i] = hyper.beta2 * moments.v[i] + (1.0 - hyper.beta2) * g * g;
        const double m_hat = moments.m[i] / bc1;
        const double v_hat = moments.v[i] / bc2;
        param[i] *= decay;
        param[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
}

AdamW::AdamW(std::vector<Value> params, AdamWHyper hyper) : params_(std::move(params)), hyper_(hyper) {
    if (hyper_.lr <= 0.0) fail(ErrorCategory::config, "adamw: learning rate must be positive");
    moments_.reserve(params_.size());
    for (const auto& p : params_) {
        const std::size_t n = p.data().size();
        moments_.push_back({std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
    }
}

void AdamW::step() {
    ++step_count_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Value& p = params_[i];
        if (!p.has_grad()) {
            const std::vector<double> zeros(p.data().size(), 0.0);
            adamw_update(p.mutable_data().values(), zeros, moments_[i], hyper_, step_count_);
        } else {
            adamw_update(p.mutable_data().values(), p.node()->grad.values(), moments_[i], hyper_, step_count_);
        }
    }
}

}  // namespace skeldiff::ad
