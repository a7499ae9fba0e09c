#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "skeldiff/ad/ops.hpp"
#include "skeldiff/models/layers.hpp"

namespace skeldiff::models {

struct STTransConfig {
    int patch_size = 4;
    int embed_dim = 64;
    int depth = 4;
    int heads = 4;
    int num_classes = 4;
    int mlp_ratio = 2;

    void validate() const;
    std::size_t grid() const { return 32 / static_cast<std::size_t>(patch_size); }
};

void to_json(nlohmann::json& j, const STTransConfig& c);
void from_json(const nlohmann::json& j, STTransConfig& c);

/// Patch-attention classifier over skeleton images. Patches cover a block
/// of joints x frames, so self-attention mixes spatial and temporal context
/// in one pass. Pre-norm transformer blocks, mean-pooled tokens, linear
/// head (zero-initialized).
class STTrans {
public:
    STTrans(STTransConfig cfg, std::uint64_t seed);

    /// Pooled token embedding (N, embed_dim): the layer before the head.
    ad::Value features(const ad::Value& x) const;
    ad::Value logits(const ad::Value& x) const;
    ad::Value head(const ad::Value& features) const { return head_(features); }

    const STTransConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    struct Block {
        LayerNorm ln1, ln2;
        Linear q, k, v, proj, fc1, fc2;
    };

    STTransConfig cfg_;
    ParamStore params_;
    Conv patch_;
    ad::Value pos_;
    std::vector<Block> blocks_;
    LayerNorm final_ln_;
    Linear head_;
};

/// Mean over the batch of -log softmax(logits)[y].
ad::Value cross_entropy(const ad::Value& logits, std::span<const std::size_t> labels);

}  // namespace skeldiff::models
