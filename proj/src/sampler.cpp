#include "skeldiff/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "skeldiff/error.hpp"

namespace skeldiff {

std::string guidance_sign_name(GuidanceSign s) { return s == GuidanceSign::paper ? "paper" : "corrected"; }

GuidanceSign parse_guidance_sign(const std::string& s) {
    if (s == "paper") return GuidanceSign::paper;
    if (s == "corrected") return GuidanceSign::corrected;
    fail(ErrorCategory::config, "unknown guidance sign '" + s + "' (expected paper or corrected)");
}

std::string guidance_scaling_name(GuidanceScaling s) { return s == GuidanceScaling::stddev ? "stddev" : "variance"; }

GuidanceScaling parse_guidance_scaling(const std::string& s) {
    if (s == "stddev") return GuidanceScaling::stddev;
    if (s == "variance") return GuidanceScaling::variance;
    fail(ErrorCategory::config, "unknown guidance scaling '" + s + "' (expected variance or stddev)");
}

void GuidanceConfig::validate() const {
    if (!std::isfinite(scale) || scale < 0.0) fail(ErrorCategory::config, "guidance: scale must be finite and >= 0");
    if (batch <= 0) fail(ErrorCategory::config, "guidance: batch must be positive");
    if (!std::isfinite(clip_x0) || clip_x0 < 0.0) fail(ErrorCategory::config, "guidance: clip_x0 must be finite and >= 0");
}

void to_json(nlohmann::json& j, const GuidanceConfig& c) {
    j = nlohmann::json{{"scale", c.scale},
                       {"sigma", sigma_kind_name(c.sigma_kind)},
                       {"sign", guidance_sign_name(c.sign)},
                       {"scaling", guidance_scaling_name(c.scaling)},
                       {"seed", c.seed},
                       {"batch", c.batch},
                       {"clip_x0", c.clip_x0},
                       {"mask_padding", c.mask_padding}};
}

void from_json(const nlohmann::json& j, GuidanceConfig& c) {
    GuidanceConfig d;
    c.scale = j.value("scale", d.scale);
    c.sigma_kind = parse_sigma_kind(j.value("sigma", sigma_kind_name(d.sigma_kind)));
    c.sign = parse_guidance_sign(j.value("sign", guidance_sign_name(d.sign)));
    c.scaling = parse_guidance_scaling(j.value("scaling", guidance_scaling_name(d.scaling)));
    c.seed = j.value("seed", d.seed);
    c.batch = j.value("batch", d.batch);
    c.clip_x0 = j.value("clip_x0", d.clip_x0);
    c.mask_padding = j.value("mask_padding", d.mask_padding);
}

ad::Tensor ClassifierGuide::grad_log_prob(const ad::Tensor& x, std::span<const std::size_t> labels) const {
    ad::Value input = ad::Value::parameter(x);
    // Summing per-sample log-probabilities keeps each chain's gradient its own.
    ad::Value total = ad::sum(ad::pick(ad::log_softmax(model_.logits(input)), labels));
    total.backward();
    return input.grad();
}

ad::Tensor guidance_grad(const Guide& guide, const ad::Tensor& x0, std::span<const std::size_t> labels, double scale,
                         GuidanceSign sign) {
    if (scale == 0.0) return ad::Tensor(x0.shape(), 0.0);
    ad::Tensor g = guide.grad_log_prob(x0, labels);
    if (g.shape() != x0.shape()) fail(ErrorCategory::shape, "guidance_grad: gradient shape does not match x0");
    const double c = sign == GuidanceSign::corrected ? scale : -scale;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] *= c;
        if (!std::isfinite(g[i])) fail(ErrorCategory::numeric, "guidance_grad: non-finite gradient");
    }
    return g;
}

X0Projection x0_projection(const GuidanceConfig& gcfg, const ImageMeta* content) {
    X0Projection p;
    p.clip = gcfg.clip_x0;
    if (gcfg.mask_padding && content) {
        p.row0 = content->row0;
        p.col0 = content->col0;
        p.rows = content->joints;
        p.cols = content->frames;
    }
    return p;
}

ad::Tensor guided_step(const EpsModel& model, const Guide& guide, const ad::Tensor& x_t, int t,
                       std::span<const std::size_t> labels, const NoiseSchedule& sched, const GuidanceConfig& gcfg,
                       std::span<Rng> rngs, const ImageMeta* content) {
    const X0Projection proj = x0_projection(gcfg, content);
    const ad::Tensor eps = model(x_t, t);
    if (gcfg.scale == 0.0) return p_sample(x_t, t, eps, sched, gcfg.sigma_kind, rngs, proj);

    ad::Tensor mu = posterior_mean_projected(x_t, t, eps, sched, proj);
    const double var = sched.variance(t, gcfg.sigma_kind);
    ad::Tensor x0 = predict_x0(x_t, t, eps, sched);
    proj.apply(x0);
    ad::Tensor g = guidance_grad(guide, x0, labels, gcfg.scale, gcfg.sign);
    // Padding is a known constant, so its gradient only pushes x_t off the data manifold.
    proj.mask(g);
    const double k = gcfg.scaling == GuidanceScaling::variance ? var : std::sqrt(var);
    for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += k * g[i];
    if (t > 1) add_chain_noise(mu, std::sqrt(var), rngs);
    return mu;
}

ad::Tensor guided_sample_batch(const EpsModel& model, const Guide& guide, std::span<const std::size_t> labels,
                               const NoiseSchedule& sched, const GuidanceConfig& gcfg, std::span<Rng> rngs,
                               const ImageMeta* content) {
    gcfg.validate();
    if (labels.size() != rngs.size())
        fail(ErrorCategory::shape, "guided_sample: " + std::to_string(labels.size()) + " labels for " +
                                       std::to_string(rngs.size()) + " chains");
    ad::Tensor x = chain_normal({rngs.size(), 3, kImageSize, kImageSize}, rngs);
    for (int t = sched.steps; t >= 1; --t) x = guided_step(model, guide, x, t, labels, sched, gcfg, rngs, content);
    return x;
}

SkeletonImage guided_sample(const EpsModel& model, const Guide& guide, std::size_t label, const NoiseSchedule& sched,
                            const GuidanceConfig& gcfg, const ImageMeta& meta) {
    Rng rng(gcfg.seed);
    const std::size_t labels[1] = {label};
    const ad::Tensor x = guided_sample_batch(model, guide, labels, sched, gcfg, std::span<Rng>(&rng, 1), &meta);
    return from_chw(x.storage(), meta);
}

Dataset generate_dataset(const EpsModel& model, const Guide& guide, std::span<const int> counts,
                         const NoiseSchedule& sched, const GuidanceConfig& gcfg, const ImageMeta& meta,
                         GenerationReport* report) {
    gcfg.validate();
    Dataset ds;
    ds.num_classes = static_cast<int>(counts.size());
    ds.num_joints = meta.joints;
    ds.provenance = Provenance::synthetic;
    constexpr std::size_t pix = 3 * kImageSize * kImageSize;
    constexpr double flag_limit = 3.0;  // normalized training range is [-1, 1]

    for (std::size_t y = 0; y < counts.size(); ++y) {
        if (counts[y] < 0) fail(ErrorCategory::invalid_argument, "generate_dataset: negative count for class " + std::to_string(y));
        const auto n = static_cast<std::size_t>(counts[y]);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(gcfg.batch)) {
            const std::size_t m = std::min(n - start, static_cast<std::size_t>(gcfg.batch));
            std::vector<Rng> rngs;
            for (std::size_t i = 0; i < m; ++i) rngs.emplace_back(derive_seed(gcfg.seed, y, start + i));
            const std::vector<std::size_t> labels(m, y);
            const ad::Tensor x = guided_sample_batch(model, guide, labels, sched, gcfg, rngs, &meta);
            for (std::size_t i = 0; i < m; ++i) {
                const SkeletonImage img = from_chw(std::span<const double>(x.data() + i * pix, pix), meta);
                JointSequence seq = decode(img);
                seq.label = static_cast<int>(y);
                seq.subject_id = -1;
                seq.seq_id = "synth_" + std::to_string(y) + "_" + std::to_string(start + i);
                if (report) {
                    bool out_of_range = false;
                    for (double v : img.pixels) out_of_range |= std::abs(v) > flag_limit;
                    if (out_of_range) report->flagged.push_back(seq.seq_id);
                }
                ds.items.push_back(std::move(seq));
            }
        }
    }
    return ds;
}

}  // namespace skeldiff
