#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "skeldiff/ad/tensor.hpp"

namespace skeldiff::models {

/// Sinusoidal step embedding: entries (2i, 2i+1) are sin/cos of t * w_i
/// with w_i = 10000^(-i / (dim/2)).
std::vector<double> time_embedding(double t, std::size_t dim);

/// Stacked embeddings for a batch of steps -> (N, dim).
ad::Tensor time_embedding_batch(std::span<const int> steps, std::size_t dim);

}  // namespace skeldiff::models
