#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skeldiff/ad/tensor.hpp"
#include "skeldiff/codec.hpp"
#include "skeldiff/dataset.hpp"
#include "skeldiff/diffusion.hpp"
#include "skeldiff/models/st_trans.hpp"

namespace skeldiff {

/// Which way the classifier gradient enters the mean. `corrected` ascends
/// log p(y | x0); `paper` adds the cross-entropy gradient as written in the
/// pseudocode, which descends it.
enum class GuidanceSign { corrected, paper };
/// Whether the gradient is multiplied by the step variance or its square root.
enum class GuidanceScaling { variance, stddev };

std::string guidance_sign_name(GuidanceSign s);
GuidanceSign parse_guidance_sign(const std::string& s);
std::string guidance_scaling_name(GuidanceScaling s);
GuidanceScaling parse_guidance_scaling(const std::string& s);

struct GuidanceConfig {
    double scale = 1.0;
    SigmaKind sigma_kind = SigmaKind::beta_tilde;
    GuidanceSign sign = GuidanceSign::corrected;
    GuidanceScaling scaling = GuidanceScaling::variance;
    std::uint64_t seed = 0;
    int batch = 16;  // chains advanced together by generate_dataset
    double clip_x0 = 1.0;  // clamp for the clean estimate (data range); 0 disables
    bool mask_padding = true;  // zero the clean estimate outside the content block

    void validate() const;
};

void to_json(nlohmann::json& j, const GuidanceConfig& c);
void from_json(const nlohmann::json& j, GuidanceConfig& c);

/// Source of d log p(y | x) / dx for a batch of clean-image estimates.
class Guide {
public:
    virtual ~Guide() = default;
    virtual ad::Tensor grad_log_prob(const ad::Tensor& x, std::span<const std::size_t> labels) const = 0;
};

/// Guide backed by a classifier. Freeze its parameters first, or every call
/// also accumulates (unused) parameter gradients.
class ClassifierGuide final : public Guide {
public:
    explicit ClassifierGuide(const models::STTrans& model) : model_(model) {}
    ad::Tensor grad_log_prob(const ad::Tensor& x, std::span<const std::size_t> labels) const override;

private:
    const models::STTrans& model_;
};

/// s * d log p(y | x0) / dx0 (sign `corrected`) or s * d L_C / dx0 (sign `paper`).
ad::Tensor guidance_grad(const Guide& guide, const ad::Tensor& x0, std::span<const std::size_t> labels, double scale,
                         GuidanceSign sign = GuidanceSign::corrected);

/// Clean-estimate projection for gcfg: the clip, plus the content block of
/// `content` when mask_padding is set and a layout is given.
X0Projection x0_projection(const GuidanceConfig& gcfg, const ImageMeta* content);

/// One guided reverse step. The classifier sees the projected clean estimate,
/// the mean comes from posterior_mean_projected and the guidance gradient is
/// masked to the content block. With scale 0 the classifier is not evaluated
/// and the result is exactly p_sample's with the same projection.
ad::Tensor guided_step(const EpsModel& model, const Guide& guide, const ad::Tensor& x_t, int t,
                       std::span<const std::size_t> labels, const NoiseSchedule& sched, const GuidanceConfig& gcfg,
                       std::span<Rng> rngs, const ImageMeta* content = nullptr);

/// Full guided chain for a batch: x_T ~ N(0, I) drawn per chain exactly
/// as in sample_loop, then guided_step for t = T..1.
ad::Tensor guided_sample_batch(const EpsModel& model, const Guide& guide, std::span<const std::size_t> labels,
                               const NoiseSchedule& sched, const GuidanceConfig& gcfg, std::span<Rng> rngs,
                               const ImageMeta* content = nullptr);

/// Single sample of class y seeded by gcfg.seed, wrapped with codec meta.
SkeletonImage guided_sample(const EpsModel& model, const Guide& guide, std::size_t label, const NoiseSchedule& sched,
                            const GuidanceConfig& gcfg, const ImageMeta& meta);

struct GenerationReport {
    std::vector<std::string> flagged;  // seq_ids with pixels beyond 3x the training range
};

/// counts[y] guided samples per class; sample (y, i) is seeded from
/// derive_seed(gcfg.seed, y, i), so output does not depend on batching.
Dataset generate_dataset(const EpsModel& model, const Guide& guide, std::span<const int> counts,
                         const NoiseSchedule& sched, const GuidanceConfig& gcfg, const ImageMeta& meta,
                         GenerationReport* report = nullptr);

}  // namespace skeldiff
