#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "skeldiff/ad/value.hpp"

// Differentiable primitives. Broadcasting is limited to one rule: in the
// binary elementwise ops the second operand may have a shape equal to a
// trailing suffix of the first operand's shape (e.g. a bias over the last
// axis). Anything else is a shape error.

namespace skeldiff::ad {

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double c);
Value square(const Value& a);

/// (m, k) x (k, n) -> (m, n).
Value matmul(const Value& a, const Value& b);

/// Affine map over the last axis: x(..., in) * w(in, out) + bias(out).
/// Pass an invalid Value to omit the bias.
Value dense(const Value& x, const Value& w, const Value& bias);

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// x(N, C, H, W) with w(O, C, kh, kw) and optional bias(O) -> (N, O, Ho, Wo).
Value conv2d(const Value& x, const Value& w, const Value& bias, Conv2dOptions opt = {});

/// Normalizes over the last axis; gamma/beta (d) may be invalid to skip the affine part.
Value layer_norm(const Value& x, const Value& gamma, const Value& beta, double eps = 1e-5);

/// Normalizes x(N, C, H, W) over channel groups; gamma/beta have shape (C).
Value group_norm(const Value& x, std::size_t groups, const Value& gamma, const Value& beta, double eps = 1e-5);

Value softmax(const Value& x);      // last axis
Value log_softmax(const Value& x);  // last axis
Value silu(const Value& x);
Value gelu(const Value& x);  // exact erf form

Value sum(const Value& x);   // -> scalar
Value mean(const Value& x);  // -> scalar
/// Mean over one axis; that axis is removed from the shape.
Value mean_axis(const Value& x, std::size_t axis);

Value reshape(const Value& x, Shape shape);
/// out.shape[i] = x.shape[perm[i]].
Value permute(const Value& x, const std::vector<std::size_t>& perm);
Value concat(const std::vector<Value>& xs, std::size_t axis);

/// Rows of table(V, D) selected by indices -> (n, D).
Value embedding_lookup(const Value& table, std::span<const std::size_t> indices);

/// Scaled dot-product attention of already-projected q, k, v (N, L, D),
/// split into `heads` contiguous slices of the last axis.
Value multi_head_attention(const Value& q, const Value& k, const Value& v, std::size_t heads);

/// x(N, C, H, W) -> (N, C, 2H, 2W) by pixel replication.
Value upsample_nearest2x(const Value& x);

/// x(N, C, H, W) + b(N, C) broadcast over the spatial axes.
Value add_channel_bias(const Value& x, const Value& b);

/// out[n] = x[n, idx[n]] for x(N, K).
Value pick(const Value& x, std::span<const std::size_t> idx);

/// mean((a - b)^2) over all elements.
Value mse_loss(const Value& a, const Value& b);

}  // namespace skeldiff::ad
