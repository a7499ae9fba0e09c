#include "skeldiff/models/time_embedding.hpp"

#include <algorithm>
#include <cmath>

#include "skeldiff/error.hpp"

namespace skeldiff::models {

std::vector<double> time_embedding(double t, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) fail(ErrorCategory::invalid_argument, "time_embedding: dim must be even and positive, got " + std::to_string(dim));
    const std::size_t half = dim / 2;
    std::vector<double> e(dim);
    for (std::size_t i = 0; i < half; ++i) {
        const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e[2 * i] = std::sin(t * w);
        e[2 * i + 1] = std::cos(t * w);
    }
    return e;
}

ad::Tensor time_embedding_batch(std::span<const int> steps, std::size_t dim) {
    ad::Tensor out({steps.size(), dim});
    for (std::size_t n = 0; n < steps.size(); ++n) {
        const auto e = time_embedding(static_cast<double>(steps[n]), dim);
        std::copy(e.begin(), e.end(), out.data() + n * dim);
    }
    return out;
}

}  // namespace skeldiff::models
