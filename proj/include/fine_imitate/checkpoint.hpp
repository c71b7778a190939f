#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fine_imitate/tensor.hpp"

namespace fi::numerics {

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered list of named parameters. Names are unique.
using Checkpoint = std::vector<NamedTensor>;

inline constexpr int kCheckpointVersion = 1;

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

/// JSON container: {"format": "fine-imitate-checkpoint", "version": 1,
/// "tensors": [{"name", "dims", "values"}]}. Doubles are written with 17
/// significant digits, so a save/load cycle is lossless.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

const Tensor& find_tensor(const Checkpoint& ckpt, const std::string& name);

}  // namespace fi::numerics
