#include "skeldiff/models/st_trans.hpp"

#include "skeldiff/error.hpp"

namespace skeldiff::models {

void STTransConfig::validate() const {
    if (patch_size <= 0 || 32 % patch_size != 0) fail(ErrorCategory::config, "st_trans: patch_size must divide 32");
    if (embed_dim <= 0 || depth < 0 || heads <= 0 || num_classes <= 0 || mlp_ratio <= 0)
        fail(ErrorCategory::config, "st_trans: sizes must be positive");
    if (embed_dim % heads != 0) fail(ErrorCategory::config, "st_trans: embed_dim must be divisible by heads");
}

void to_json(nlohmann::json& j, const STTransConfig& c) {
    j = nlohmann::json{{"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},     {"depth", c.depth},
                       {"heads", c.heads},           {"num_classes", c.num_classes}, {"mlp_ratio", c.mlp_ratio}};
}

void from_json(const nlohmann::json& j, STTransConfig& c) {
    STTransConfig d;
    c.patch_size = j.value("patch_size", d.patch_size);
    c.embed_dim = j.value("embed_dim", d.embed_dim);
    c.depth = j.value("depth", d.depth);
    c.heads = j.value("heads", d.heads);
    c.num_classes = j.value("num_classes", d.num_classes);
    c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
}

STTrans::STTrans(STTransConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const auto e = static_cast<std::size_t>(cfg_.embed_dim);
    const auto p = static_cast<std::size_t>(cfg_.patch_size);
    const std::size_t tokens = cfg_.grid() * cfg_.grid();
    patch_ = Conv(params_, "patch", 3, e, p, p, 0, rng);
    pos_ = params_.add("pos", uniform_tensor({tokens, e}, 0.02, rng));
    for (int d = 0; d < cfg_.depth; ++d) {
        const std::string n = "block" + std::to_string(d);
        const std::size_t hidden = e * static_cast<std::size_t>(cfg_.mlp_ratio);
        Block b;
        b.ln1 = LayerNorm(params_, n + ".ln1", e);
        b.q = Linear(params_, n + ".q", e, e, rng);
        b.k = Linear(params_, n + ".k", e, e, rng);
        b.v = Linear(params_, n + ".v", e, e, rng);
        b.proj = Linear(params_, n + ".proj", e, e, rng);
        b.ln2 = LayerNorm(params_, n + ".ln2", e);
        b.fc1 = Linear(params_, n + ".fc1", e, hidden, rng);
        b.fc2 = Linear(params_, n + ".fc2", hidden, e, rng);
        blocks_.push_back(std::move(b));
    }
    final_ln_ = LayerNorm(params_, "final_ln", e);
    head_ = Linear(params_, "head", e, static_cast<std::size_t>(cfg_.num_classes), rng, /*zero_init=*/true);
}

ad::Value STTrans::features(const ad::Value& x) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != 32 || s[3] != 32)
        fail(ErrorCategory::shape, "st_trans: expected input (N, 3, 32, 32), got " + ad::shape_str(s));
    const std::size_t n = s[0];
    const auto e = static_cast<std::size_t>(cfg_.embed_dim);
    const std::size_t tokens = cfg_.grid() * cfg_.grid();

    // (N, E, g, g) -> (N, g*g, E), token index = row-major patch position.
    ad::Value h = ad::permute(ad::reshape(patch_(x), {n, e, tokens}), {0, 2, 1});
    h = ad::add(h, pos_);
    for (const auto& b : blocks_) {
        const ad::Value a = b.ln1(h);
        const ad::Value att = ad::multi_head_attention(b.q(a), b.k(a), b.v(a), static_cast<std::size_t>(cfg_.heads));
        h = ad::add(h, b.proj(att));
        h = ad::add(h, b.fc2(ad::gelu(b.fc1(b.ln2(h)))));
    }
    return ad::mean_axis(final_ln_(h), 1);
}

ad::Value STTrans::logits(const ad::Value& x) const { return head_(features(x)); }

ad::Value cross_entropy(const ad::Value& logits, std::span<const std::size_t> labels) {
    const auto& s = logits.shape();
    if (s.size() != 2 || s[0] != labels.size())
        fail(ErrorCategory::shape, "cross_entropy: logits " + ad::shape_str(s) + " vs " + std::to_string(labels.size()) + " labels");
    for (std::size_t y : labels)
        if (y >= s[1])
            fail(ErrorCategory::invalid_argument, "cross_entropy: label " + std::to_string(y) + " out of range for " +
                                                      std::to_string(s[1]) + " classes");
    return ad::scale(ad::mean(ad::pick(ad::log_softmax(logits), labels)), -1.0);
}

}  // namespace skeldiff::models
