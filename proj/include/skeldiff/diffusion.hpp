#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "skeldiff/ad/tensor.hpp"
#include "skeldiff/rng.hpp"

namespace skeldiff {

enum class ScheduleKind { linear, cosine };
enum class SigmaKind { beta, beta_tilde };

std::string schedule_kind_name(ScheduleKind k);
ScheduleKind parse_schedule_kind(const std::string& s);
std::string sigma_kind_name(SigmaKind k);
SigmaKind parse_sigma_kind(const std::string& s);

/// Noise levels for steps 1..steps. Index 0 of `betas` is unused (0);
/// alpha_bars[0] = 1 and alpha_bars[t] = prod_{s<=t} (1 - betas[s]).
struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::cosine;
    int steps = 0;
    std::vector<double> betas;
    std::vector<double> alpha_bars;

    double beta(int t) const { return betas.at(static_cast<std::size_t>(t)); }
    double alpha_bar(int t) const { return alpha_bars.at(static_cast<std::size_t>(t)); }
    /// Reverse-step variance sigma_t^2 for the chosen kind.
    double variance(int t, SigmaKind kind) const;
};

NoiseSchedule linear_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02);
NoiseSchedule cosine_schedule(int steps, double s = 0.008, double max_beta = 0.999);
NoiseSchedule make_schedule(ScheduleKind kind, int steps);

/// CSV with columns t,beta,alpha_bar for t = 0..steps.
void write_schedule_csv(std::ostream& out, const NoiseSchedule& sched);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
ad::Tensor q_sample(const ad::Tensor& x0, int t, const ad::Tensor& eps, const NoiseSchedule& sched);
/// Clean-image estimate (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
ad::Tensor predict_x0(const ad::Tensor& x_t, int t, const ad::Tensor& eps_hat, const NoiseSchedule& sched);
/// Reverse-step mean (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(1 - beta_t).
ad::Tensor posterior_mean(const ad::Tensor& x_t, int t, const ad::Tensor& eps_hat, const NoiseSchedule& sched);

/// Constraint on the clean-image estimate of an (N, C, H, W) batch: pixels
/// outside the content block are zeroed and pixels inside are clamped to
/// [-clip, clip]. clip 0 skips the clamp; rows == 0 means no block.
struct X0Projection {
    double clip = 0.0;
    std::size_t row0 = 0, col0 = 0, rows = 0, cols = 0;

    bool identity() const { return !(clip > 0.0) && rows == 0; }
    void apply(ad::Tensor& x0) const;
    /// Zeroes everything outside the block; no-op without one.
    void mask(ad::Tensor& x) const;
};

/// Mean of q(x_{t-1} | x_t, x0) with x0 = predict_x0 passed through proj:
/// sqrt(abar_{t-1}) beta_t / (1 - abar_t) x0 + sqrt(1 - beta_t) (1 - abar_{t-1}) / (1 - abar_t) x_t.
/// An identity projection returns posterior_mean unchanged.
ad::Tensor posterior_mean_projected(const ad::Tensor& x_t, int t, const ad::Tensor& eps_hat, const NoiseSchedule& sched,
                                    const X0Projection& proj);

/// Adds sigma * z in place, where chain i of `rngs` supplies the noise for
/// the i-th equal slice of `x`. No noise is drawn when sigma == 0.
void add_chain_noise(ad::Tensor& x, double sigma, std::span<Rng> rngs);

/// Standard-normal tensor whose i-th slice comes from rngs[i].
ad::Tensor chain_normal(const ad::Shape& shape, std::span<Rng> rngs);

/// One ancestral step x_t -> x_{t-1}; t = 1 is noise-free. A non-identity
/// projection takes the mean from posterior_mean_projected.
ad::Tensor p_sample(const ad::Tensor& x_t, int t, const ad::Tensor& eps_hat, const NoiseSchedule& sched,
                    SigmaKind sigma_kind, std::span<Rng> rngs, const X0Projection& proj = {});
ad::Tensor p_sample(const ad::Tensor& x_t, int t, const ad::Tensor& eps_hat, const NoiseSchedule& sched,
                    SigmaKind sigma_kind, Rng& rng, const X0Projection& proj = {});

/// Noise predictor eps(x_t, t) for a batch of chains.
using EpsModel = std::function<ad::Tensor(const ad::Tensor& x_t, int t)>;

/// Unguided ancestral sampling: x_T ~ N(0, I) per chain, then p_sample for
/// t = T..1. `shape` is the full batch shape; its leading extent must be
/// rngs.size().
ad::Tensor sample_loop(const EpsModel& model, const NoiseSchedule& sched, SigmaKind sigma_kind,
                       std::span<Rng> rngs, const ad::Shape& shape, const X0Projection& proj = {});

}  // namespace skeldiff
