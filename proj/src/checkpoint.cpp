#include "fine_imitate/checkpoint.hpp"

#include <fstream>
#include <set>

namespace fi::numerics {

namespace {
constexpr const char* kFormat = "fine-imitate-checkpoint";
}

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, value] : ckpt) {
    tensors.push_back({{"name", name},
                       {"dims", value.dims()},
                       {"values", std::vector<double>(value.values().begin(), value.values().end())}});
  }
  return {{"format", kFormat}, {"version", kCheckpointVersion}, {"tensors", std::move(tensors)}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != kFormat) throw std::runtime_error("checkpoint: unrecognised format tag");
  const int version = j.at("version").get<int>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  std::set<std::string> seen;
  for (const auto& t : j.at("tensors")) {
    auto name = t.at("name").get<std::string>();
    if (!seen.insert(name).second) throw std::runtime_error("checkpoint: duplicate tensor '" + name + "'");
    ckpt.push_back({std::move(name), Tensor(t.at("dims").get<std::vector<std::size_t>>(),
                                            t.at("values").get<std::vector<double>>())});
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out << checkpoint_to_json(ckpt).dump() << '\n';
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return checkpoint_from_json(nlohmann::json::parse(in));
}

const Tensor& find_tensor(const Checkpoint& ckpt, const std::string& name) {
  for (const auto& entry : ckpt) {
    if (entry.name == name) return entry.value;
  }
  throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

}  // namespace fi::numerics
