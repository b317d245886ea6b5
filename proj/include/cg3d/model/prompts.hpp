#pragma once

#include <string>
#include <vector>

#include "cg3d/nn/graph.hpp"
#include "cg3d/util/rng.hpp"

namespace cg3d {

// Deep visual prompts: `n` free tokens of the encoder width for each of
// `layers` transformer layers. n == 0 disables prompting.
template <typename T>
struct PromptSet {
  int layers = 0;
  int n = 0;
  int width = 0;
  std::vector<nn::Parameter<T>> tokens;  // one (n x width) parameter per layer

  bool enabled() const noexcept { return layers > 0 && n > 0; }
};

// Tokens drawn from N(0, 0.02^2).
template <typename T>
PromptSet<T> init_prompts(int layers, int n, int width, Rng& rng);

// "VPT1" | u32 layers | u32 n | u32 width | float32 payload (layer-major).
void write_prompts(const std::string& path, const PromptSet<float>& ps);
PromptSet<float> read_prompts(const std::string& path);
std::vector<char> encode_prompts(const PromptSet<float>& ps);
PromptSet<float> decode_prompts(std::span<const char> bytes);

// Replaces target's tokens with source's. Throws ConfigError unless the
// (layers, n, width) shapes agree.
void assign_prompts(PromptSet<float>& target, const PromptSet<float>& source);

}  // namespace cg3d
