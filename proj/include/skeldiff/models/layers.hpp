#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "skeldiff/ad/checkpoint.hpp"
#include "skeldiff/ad/ops.hpp"
#include "skeldiff/rng.hpp"

namespace skeldiff::models {

/// Ordered, named parameter collection owned by a model.
class ParamStore {
public:
    ad::Value add(const std::string& name, ad::Tensor init);

    std::vector<ad::Value> values() const;
    const std::vector<std::pair<std::string, ad::Value>>& items() const { return items_; }
    ad::Value find(const std::string& name) const;
    std::size_t count() const;

    void zero_grad();
    /// Stops gradient tracking for all parameters (inference-only models).
    void freeze();

    ad::Checkpoint to_checkpoint(nlohmann::json meta) const;
    /// Copies tensors into the existing parameters; names and shapes must match.
    void load(const ad::Checkpoint& ckpt);

private:
    std::vector<std::pair<std::string, ad::Value>> items_;
};

ad::Tensor uniform_tensor(ad::Shape shape, double bound, Rng& rng);

struct Linear {
    ad::Value w, b;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool zero_init = false);
    ad::Value operator()(const ad::Value& x) const { return ad::dense(x, w, b); }
};

struct Conv {
    ad::Value w, b;
    ad::Conv2dOptions opt;
    Conv() = default;
    Conv(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
         std::size_t pad, Rng& rng, bool zero_init = false);
    ad::Value operator()(const ad::Value& x) const { return ad::conv2d(x, w, b, opt); }
};

struct GroupNorm {
    ad::Value gamma, beta;
    std::size_t groups = 1;
    GroupNorm() = default;
    GroupNorm(ParamStore& ps, const std::string& name, std::size_t channels, std::size_t groups);
    ad::Value operator()(const ad::Value& x) const { return ad::group_norm(x, groups, gamma, beta); }
};

struct LayerNorm {
    ad::Value gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, std::size_t dim);
    ad::Value operator()(const ad::Value& x) const { return ad::layer_norm(x, gamma, beta); }
};

}  // namespace skeldiff::models
