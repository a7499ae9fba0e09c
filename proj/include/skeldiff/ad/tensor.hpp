#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace skeldiff::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major n-dimensional array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::vector<double>& storage() { return values_; }
    const std::vector<double>& storage() const { return values_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    /// Value of a single-element tensor.
    double item() const;

    /// Same values under a new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    void fill(double v);

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

bool all_finite(std::span<const double> v);

}  // namespace skeldiff::ad
