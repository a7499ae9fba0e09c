#include "skeldiff/ad/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>

#include "skeldiff/error.hpp"

namespace skeldiff::ad {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != numel(shape_)) {
        fail(ErrorCategory::shape, "tensor: " + std::to_string(values_.size()) +
                                       " values do not fit shape " + shape_str(shape_));
    }
}

double Tensor::item() const {
    if (values_.size() != 1) {
        fail(ErrorCategory::shape, "item: tensor of shape " + shape_str(shape_) + " is not a scalar");
    }
    return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (numel(shape) != values_.size()) {
        fail(ErrorCategory::shape, "reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    }
    return Tensor(std::move(shape), values_);
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool all_finite(std::span<const double> v) {
    // Exponent bits all set means Inf or NaN. Branch-free so it vectorizes.
    constexpr std::uint64_t exp_mask = 0x7ff0000000000000ULL;
    std::uint64_t bad = 0;
    for (double x : v) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(x) & exp_mask) == exp_mask);
    return bad == 0;
}

}  // namespace skeldiff::ad
