#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "skeldiff/ad/tensor.hpp"

namespace skeldiff::ad {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Parameter checkpoint: an ordered list of named tensors plus free-form
/// metadata (model configuration, training provenance).
struct Checkpoint {
    std::vector<NamedTensor> tensors;
    nlohmann::json meta = nlohmann::json::object();
};

// File layout: one JSON manifest line
//   {"format":"skeldiff-params","version":1,"meta":{...},
//    "tensors":[{"name":..,"shape":[..],"offset":..,"count":..}, ...]}
// followed by the concatenated little-endian float64 buffers.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace skeldiff::ad
