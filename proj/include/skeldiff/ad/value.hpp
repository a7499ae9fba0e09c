#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "skeldiff/ad/tensor.hpp"

namespace skeldiff::ad {

struct Node;

/// Reverse-mode rule: reads `self.grad` and accumulates into the grads of
/// `self.parents` that require gradients.
using BackwardFn = std::function<void(Node& self)>;

struct Node {
    Tensor data;
    Tensor grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;
    const char* op = "leaf";

    bool is_leaf() const { return parents.empty(); }
    /// Gradient buffer, zero-allocated on first use.
    Tensor& grad_buffer();
};

/// Handle to a node in the computation graph. Copies share the node.
class Value {
public:
    Value() = default;
    explicit Value(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Value constant(Tensor t);
    static Value parameter(Tensor t);

    const Tensor& data() const { return node_->data; }
    /// Direct access for optimizers and checkpoint loading.
    Tensor& mutable_data() { return node_->data; }
    const Shape& shape() const { return node_->data.shape(); }
    double item() const { return node_->data.item(); }

    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient, or zeros of the data shape if nothing has accumulated yet.
    Tensor grad() const;
    void zero_grad();

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    /// Accumulates d(this)/d(leaf) into every reachable leaf requiring
    /// gradients. `this` must be a scalar. Leaf gradients accumulate across
    /// calls; intermediate gradients are recomputed each call.
    void backward() const;

    const std::shared_ptr<Node>& node() const { return node_; }
    bool valid() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Creates the result node of an op. Records parents and the backward rule
/// only when recording is enabled and some parent requires gradients.
/// Throws a numeric error if `out` contains NaN or Inf.
Value make_result(Tensor out, std::vector<Value> parents, BackwardFn fn, const char* op);

}  // namespace skeldiff::ad
