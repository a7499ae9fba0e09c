#include "skeldiff/ad/value.hpp"

#include <string>
#include <unordered_set>

#include "skeldiff/error.hpp"

namespace skeldiff::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
    if (grad.empty() && !data.empty()) grad = Tensor(data.shape(), 0.0);
    return grad;
}

Value Value::constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->data = std::move(t);
    return Value(std::move(n));
}

Value Value::parameter(Tensor t) {
    auto n = std::make_shared<Node>();
    n->data = std::move(t);
    n->requires_grad = true;
    return Value(std::move(n));
}

Tensor Value::grad() const {
    if (node_->grad.empty()) return Tensor(node_->data.shape(), 0.0);
    return node_->grad;
}

void Value::zero_grad() { node_->grad = Tensor(); }

void Value::backward() const {
    if (node_->data.size() != 1) {
        fail(ErrorCategory::shape, "backward: loss must be scalar, got shape " + shape_str(node_->data.shape()));
    }
    // Iterative post-order DFS; deep networks would overflow a recursive one.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->is_leaf()) n->grad = Tensor(n->data.shape(), 0.0);
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->is_leaf() && n->backward) n->backward(*n);
    }
    for (Node* n : order) {
        if (!n->is_leaf()) n->grad = Tensor();
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Value make_result(Tensor out, std::vector<Value> parents, BackwardFn fn, const char* op) {
    if (!all_finite(out.values())) {
        fail(ErrorCategory::numeric, std::string(op) + ": non-finite result");
    }
    auto n = std::make_shared<Node>();
    n->data = std::move(out);
    n->op = op;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (g_grad_enabled && any) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::move(fn);
    }
    return Value(std::move(n));
}

}  // namespace skeldiff::ad
