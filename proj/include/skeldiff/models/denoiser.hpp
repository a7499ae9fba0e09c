#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "skeldiff/ad/ops.hpp"
#include "skeldiff/models/layers.hpp"

namespace skeldiff::models {

struct DenoiserConfig {
    int base_channels = 32;
    int res_blocks = 2;              // per resolution
    std::vector<int> resolutions{32, 16, 8};
    std::vector<int> channel_mult{1, 2, 2};  // per resolution, times base_channels
    int time_embed_dim = 32;
    int norm_groups = 8;

    void validate() const;
};

void to_json(nlohmann::json& j, const DenoiserConfig& c);
void from_json(const nlohmann::json& j, DenoiserConfig& c);

/// Noise predictor eps(x_t, t): a U-Net over (N, 3, 32, 32) images with
/// one encoder/decoder level per resolution, skip connections between
/// matching levels, and residual blocks that add a projection of the step
/// embedding to every channel. The output convolution starts at zero.
class Denoiser {
public:
    Denoiser(DenoiserConfig cfg, std::uint64_t seed);

    ad::Value forward(const ad::Value& x, std::span<const int> steps) const;
    /// Inference without graph recording; every chain uses step t.
    ad::Tensor predict(const ad::Tensor& x, int t) const;

    const DenoiserConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    struct ResBlock {
        GroupNorm norm1, norm2;
        Conv conv1, conv2;
        Linear temb;
        Conv skip;
        bool has_skip = false;
        ad::Value operator()(const ad::Value& x, const ad::Value& temb_act) const;
    };
    ResBlock make_block(const std::string& name, std::size_t in, std::size_t out, std::size_t temb_dim, Rng& rng);

    DenoiserConfig cfg_;
    ParamStore params_;
    Linear time1_, time2_;
    Conv stem_;
    std::vector<std::vector<ResBlock>> down_;
    std::vector<Conv> downsample_;
    ResBlock middle_;
    std::vector<std::vector<ResBlock>> up_;
    std::vector<Conv> upsample_;
    GroupNorm out_norm_;
    Conv out_conv_;
};

}  // namespace skeldiff::models
