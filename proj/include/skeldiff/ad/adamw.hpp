#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skeldiff/ad/value.hpp"

namespace skeldiff::ad {

struct AdamWHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Moment buffers for one parameter tensor.
struct AdamWMoments {
    std::vector<double> m;
    std::vector<double> v;
};

/// One decoupled-weight-decay Adam update of a flat parameter buffer.
/// `step` is the 1-based step count used for bias correction.
void adamw_update(std::span<double> param, std::span<const double> grad, AdamWMoments& moments,
                  const AdamWHyper& hyper, std::int64_t step);

/// AdamW over an ordered parameter list. Reads each parameter's accumulated
/// gradient; zeroing gradients stays the caller's job.
class AdamW {
public:
    AdamW(std::vector<Value> params, AdamWHyper hyper);

    void step();
    std::int64_t step_count() const { return step_count_; }
    const AdamWHyper& hyper() const { return hyper_; }
    void set_lr(double lr) { hyper_.lr = lr; }
    const std::vector<AdamWMoments>& moments() const { return moments_; }

private:
    std::vector<Value> params_;
    std::vector<AdamWMoments> moments_;
    AdamWHyper hyper_;
    std::int64_t step_count_ = 0;
};

}  // namespace skeldiff::ad
