#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "cg3d/model/encoders.hpp"
#include "cg3d/training/config.hpp"

namespace cg3d {

// lr_min + (lr - lr_min) * (1 + cos(pi * step / total)) / 2, clamped at total.
double cosine_lr(const OptimConfig& cfg, long step, long total);

// AdamW (decoupled decay) or SGD with momentum. Accumulators are keyed by
// parameter name and only exist for parameters that were stepped, i.e. the
// trainable ones.
class Optimizer {
 public:
  explicit Optimizer(OptimConfig cfg = {}) : cfg_(cfg) {}

  const OptimConfig& config() const noexcept { return cfg_; }
  // Swaps hyperparameters, keeping the state. Throws ConfigError if the kind
  // differs.
  void reconfigure(const OptimConfig& cfg);
  long steps() const noexcept { return t_; }

  // Updates every trainable parameter in `params` that has a gradient.
  void step(const ParamList<float>& params, double lr);

  struct Slot {
    nn::Tensor<float> m, v;  // sgd uses m as the velocity
  };
  const std::map<std::string, Slot>& slots() const noexcept { return slots_; }

  // Header part (names, shapes, step count) and payload order.
  nlohmann::json header() const;
  void append_payload(std::vector<float>& out) const;
  // Rebuilds from header() + payload; advances `pos` past the consumed floats.
  static Optimizer restore(OptimConfig cfg, const nlohmann::json& header, std::span<const float> payload,
                           std::size_t& pos);

 private:
  OptimConfig cfg_;
  long t_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace cg3d
