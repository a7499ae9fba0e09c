#include "skeldiff/models/denoiser.hpp"

#include "skeldiff/error.hpp"
#include "skeldiff/models/time_embedding.hpp"

namespace skeldiff::models {

void DenoiserConfig::validate() const {
    if (base_channels <= 0 || res_blocks <= 0 || time_embed_dim <= 0 || norm_groups <= 0)
        fail(ErrorCategory::config, "denoiser: sizes must be positive");
    if (time_embed_dim % 2 != 0) fail(ErrorCategory::config, "denoiser: time_embed_dim must be even");
    if (resolutions.empty() || resolutions.front() != 32)
        fail(ErrorCategory::config, "denoiser: resolutions must start at 32");
    for (std::size_t i = 1; i < resolutions.size(); ++i)
        if (resolutions[i] * 2 != resolutions[i - 1] || resolutions[i] < 1)
            fail(ErrorCategory::config, "denoiser: each resolution must halve the previous one");
    if (channel_mult.size() != resolutions.size())
        fail(ErrorCategory::config, "denoiser: channel_mult needs one entry per resolution");
    for (int m : channel_mult) {
        if (m <= 0) fail(ErrorCategory::config, "denoiser: channel multipliers must be positive");
        if ((base_channels * m) % norm_groups != 0)
            fail(ErrorCategory::config, "denoiser: norm_groups must divide every level's channel count");
    }
}

void to_json(nlohmann::json& j, const DenoiserConfig& c) {
    j = nlohmann::json{{"base_channels", c.base_channels}, {"res_blocks", c.res_blocks},
                       {"resolutions", c.resolutions},     {"channel_mult", c.channel_mult},
                       {"time_embed_dim", c.time_embed_dim}, {"norm_groups", c.norm_groups}};
}

void from_json(const nlohmann::json& j, DenoiserConfig& c) {
    DenoiserConfig d;
    c.base_channels = j.value("base_channels", d.base_channels);
    c.res_blocks = j.value("res_blocks", d.res_blocks);
    c.resolutions = j.value("resolutions", d.resolutions);
    c.channel_mult = j.value("channel_mult", d.channel_mult);
    c.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
    c.norm_groups = j.value("norm_groups", d.norm_groups);
}

ad::Value Denoiser::ResBlock::operator()(const ad::Value& x, const ad::Value& temb_act) const {
    ad::Value h = conv1(ad::silu(norm1(x)));
    h = ad::add_channel_bias(h, temb(temb_act));
    h = conv2(ad::silu(norm2(h)));
    return ad::add(has_skip ? skip(x) : x, h);
}

Denoiser::ResBlock Denoiser::make_block(const std::string& name, std::size_t in, std::size_t out, std::size_t temb_dim, Rng& rng) {
    const auto groups = static_cast<std::size_t>(cfg_.norm_groups);
    ResBlock b;
    b.norm1 = GroupNorm(params_, name + ".norm1", in, groups);
    b.conv1 = Conv(params_, name + ".conv1", in, out, 3, 1, 1, rng);
    b.temb = Linear(params_, name + ".temb", temb_dim, out, rng);
    b.norm2 = GroupNorm(params_, name + ".norm2", out, groups);
    b.conv2 = Conv(params_, name + ".conv2", out, out, 3, 1, 1, rng);
    if (in != out) {
        b.skip = Conv(params_, name + ".skip", in, out, 1, 1, 0, rng);
        b.has_skip = true;
    }
    return b;
}

Denoiser::Denoiser(DenoiserConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t levels = cfg_.resolutions.size();
    std::vector<std::size_t> ch(levels);
    for (std::size_t i = 0; i < levels; ++i) ch[i] = static_cast<std::size_t>(cfg_.base_channels * cfg_.channel_mult[i]);
    const auto ted = static_cast<std::size_t>(cfg_.time_embed_dim);
    const std::size_t temb_dim = 2 * ted;

    time1_ = Linear(params_, "time.fc1", ted, temb_dim, rng);
    time2_ = Linear(params_, "time.fc2", temb_dim, temb_dim, rng);
    stem_ = Conv(params_, "stem", 3, ch[0], 3, 1, 1, rng);

    std::size_t cur = ch[0];
    for (std::size_t i = 0; i < levels; ++i) {
        std::vector<ResBlock> blocks;
        for (int r = 0; r < cfg_.res_blocks; ++r) {
            blocks.push_back(make_block("down" + std::to_string(i) + "." + std::to_string(r), cur, ch[i], temb_dim, rng));
            cur = ch[i];
        }
        down_.push_back(std::move(blocks));
        if (i + 1 < levels) downsample_.emplace_back(params_, "down" + std::to_string(i) + ".pool", cur, cur, 3, 2, 1, rng);
    }
    middle_ = make_block("middle", cur, cur, temb_dim, rng);

    up_.resize(levels);
    upsample_.resize(levels);
    for (std::size_t i = levels; i-- > 0;) {
        if (i + 1 < levels) {
            upsample_[i] = Conv(params_, "up" + std::to_string(i) + ".unpool", cur, ch[i], 3, 1, 1, rng);
            cur = ch[i];
        }
        std::vector<ResBlock> blocks;
        for (int r = 0; r < cfg_.res_blocks; ++r) {
            const std::size_t in = r == 0 ? cur + ch[i] : ch[i];
            blocks.push_back(make_block("up" + std::to_string(i) + "." + std::to_string(r), in, ch[i], temb_dim, rng));
        }
        up_[i] = std::move(blocks);
        cur = ch[i];
    }
    out_norm_ = GroupNorm(params_, "out.norm", ch[0], static_cast<std::size_t>(cfg_.norm_groups));
    out_conv_ = Conv(params_, "out.conv", ch[0], 3, 3, 1, 1, rng, /*zero_init=*/true);
}

ad::Value Denoiser::forward(const ad::Value& x, std::span<const int> steps) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != 32 || s[3] != 32)
        fail(ErrorCategory::shape, "denoiser: expected input (N, 3, 32, 32), got " + ad::shape_str(s));
    if (steps.size() != s[0])
        fail(ErrorCategory::shape, "denoiser: " + std::to_string(steps.size()) + " steps for batch of " + std::to_string(s[0]));
    const auto temb_in = ad::Value::constant(time_embedding_batch(steps, static_cast<std::size_t>(cfg_.time_embed_dim)));
    const ad::Value temb = ad::silu(time2_(ad::silu(time1_(temb_in))));

    const std::size_t levels = down_.size();
    std::vector<ad::Value> skips;
    ad::Value h = stem_(x);
    for (std::size_t i = 0; i < levels; ++i) {
        for (const auto& b : down_[i]) h = b(h, temb);
        skips.push_back(h);
        if (i + 1 < levels) h = downsample_[i](h);
    }
    h = middle_(h, temb);
    for (std::size_t i = levels; i-- > 0;) {
        if (i + 1 < levels) h = upsample_[i](ad::upsample_nearest2x(h));
        h = ad::concat({h, skips[i]}, 1);
        for (const auto& b : up_[i]) h = b(h, temb);
    }
    return out_conv_(ad::silu(out_norm_(h)));
}

ad::Tensor Denoiser::predict(const ad::Tensor& x, int t) const {
    ad::NoGradGuard guard;
    const std::vector<int> steps(x.shape().empty() ? 0 : x.shape()[0], t);
    return forward(ad::Value::constant(x), steps).data();
}

}  // namespace skeldiff::models
