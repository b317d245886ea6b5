#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cg3d/model/model.hpp"
#include "cg3d/training/optim.hpp"

namespace cg3d {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  explicit Checkpoint(Model<float> m) : model(std::move(m)) {}

  Model<float> model;
  std::vector<std::string> classes;
  long step = 0;
  std::string stage;          // "bimodal", "cg3d", "finetune"
  std::string config_digest;
  // Optimizer states by role ("3d", "prompt", "bimodal", "finetune").
  std::map<std::string, Optimizer> optimizers;
  // Parameters outside the model groups, e.g. a classification head.
  std::vector<nn::Parameter<float>> extra;
  nlohmann::json meta = nlohmann::json::object();
};

// "CG3D" | u32 version | u32 header bytes | JSON header | float32 payloads in
// header order: group tensors, extra tensors, optimizer accumulators.
std::vector<char> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const char> bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Header only, without materializing tensors.
nlohmann::json read_checkpoint_header(const std::string& path);

}  // namespace cg3d
