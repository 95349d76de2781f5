#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "wfkit/tensor.hpp"

namespace wfkit {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// <stem>.json holds {"config", "tensors": [{"name", "shape", "offset"}]};
// <stem>.bin holds the values as little-endian float64 in manifest order.
void save_checkpoint(const std::filesystem::path& json_path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::ordered_json& config);

struct Checkpoint {
  nlohmann::json config;
  std::vector<NamedTensor> tensors;
};

// Throws Error{kIoError | kConfigError}.
Checkpoint load_checkpoint(const std::filesystem::path& json_path);

}  // namespace wfkit
