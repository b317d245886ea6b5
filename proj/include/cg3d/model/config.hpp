#pragma once

#include <json.hpp>

namespace cg3d {

// Sizes of the image/text transformers and the shared embedding. The point
// encoder has fixed widths (see PointNetEncoder).
struct EncoderConfig {
  int embed_dim = 64;
  int image_size = 64;
  int patch = 8;
  int layers = 4;
  int heads = 4;
  int width = 64;
  int text_len = 16;
  int n_prompt_tokens = 5;
  int mlp_ratio = 4;

  int patches_per_side() const { return image_size / patch; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }

  // Throws ConfigError on inconsistent sizes.
  void validate() const;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static EncoderConfig from_json(const nlohmann::json& j);

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

}  // namespace cg3d
