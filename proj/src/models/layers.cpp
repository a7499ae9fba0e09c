#include "skeldiff/models/layers.hpp"

#include <cmath>

#include "skeldiff/error.hpp"

namespace skeldiff::models {

ad::Value ParamStore::add(const std::string& name, ad::Tensor init) {
    for (const auto& [n, v] : items_)
        if (n == name) fail(ErrorCategory::invalid_argument, "duplicate parameter name '" + name + "'");
    auto v = ad::Value::parameter(std::move(init));
    items_.emplace_back(name, v);
    return v;
}

std::vector<ad::Value> ParamStore::values() const {
    std::vector<ad::Value> out;
    out.reserve(items_.size());
    for (const auto& [n, v] : items_) out.push_back(v);
    return out;
}

ad::Value ParamStore::find(const std::string& name) const {
    for (const auto& [n, v] : items_)
        if (n == name) return v;
    fail(ErrorCategory::invalid_argument, "no parameter named '" + name + "'");
}

std::size_t ParamStore::count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : items_) n += v.data().size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [n, v] : items_) v.zero_grad();
}

void ParamStore::freeze() {
    for (auto& [n, v] : items_) {
        v.set_requires_grad(false);
        v.zero_grad();
    }
}

ad::Checkpoint ParamStore::to_checkpoint(nlohmann::json meta) const {
    ad::Checkpoint c;
    c.meta = std::move(meta);
    for (const auto& [n, v] : items_) c.tensors.push_back({n, v.data()});
    return c;
}

void ParamStore::load(const ad::Checkpoint& ckpt) {
    if (ckpt.tensors.size() != items_.size())
        fail(ErrorCategory::format, "checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                                        std::to_string(items_.size()));
    for (std::size_t i = 0; i < items_.size(); ++i) {
        auto& [name, v] = items_[i];
        const auto& t = ckpt.tensors[i];
        if (t.name != name || t.tensor.shape() != v.shape())
            fail(ErrorCategory::format, "checkpoint tensor '" + t.name + "' " + ad::shape_str(t.tensor.shape()) +
                                            " does not match parameter '" + name + "' " + ad::shape_str(v.shape()));
        v.mutable_data() = t.tensor;
    }
}

ad::Tensor uniform_tensor(ad::Shape shape, double bound, Rng& rng) {
    ad::Tensor t(std::move(shape));
    for (double& x : t.values()) x = bound * (2.0 * rng.uniform() - 1.0);
    return t;
}

Linear::Linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool zero_init) {
    const double bound = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
    w = ps.add(name + ".w", uniform_tensor({in, out}, bound, rng));
    b = ps.add(name + ".b", zero_init ? ad::Tensor({out}, 0.0) : uniform_tensor({out}, bound, rng));
}

Conv::Conv(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
           std::size_t pad, Rng& rng, bool zero_init) {
    const double bound = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in * k * k));
    w = ps.add(name + ".w", uniform_tensor({out, in, k, k}, bound, rng));
    b = ps.add(name + ".b", zero_init ? ad::Tensor({out}, 0.0) : uniform_tensor({out}, bound, rng));
    opt = {stride, pad};
}

GroupNorm::GroupNorm(ParamStore& ps, const std::string& name, std::size_t channels, std::size_t g) : groups(g) {
    gamma = ps.add(name + ".gamma", ad::Tensor({channels}, 1.0));
    beta = ps.add(name + ".beta", ad::Tensor({channels}, 0.0));
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, std::size_t dim) {
    gamma = ps.add(name + ".gamma", ad::Tensor({dim}, 1.0));
    beta = ps.add(name + ".beta", ad::Tensor({dim}, 0.0));
}

}  // namespace skeldiff::models
