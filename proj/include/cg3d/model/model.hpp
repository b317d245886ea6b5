#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cg3d/model/encoders.hpp"

namespace cg3d {

inline constexpr std::array<std::string_view, 7> kGroupNames = {"base_2d", "base_text", "proj_2d", "proj_text",
                                                                "enc_3d",  "proj_3d",   "prompts"};

// The three encoders, their projection heads and the prompt tokens. Every
// parameter belongs to exactly one named group.
template <typename T>
class Model {
 public:
  Model(const EncoderConfig& cfg, Vocab vocab, std::uint64_t seed, const std::string& point_kind = "pointnet");
  Model(const Model& o);
  Model& operator=(const Model& o);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  EncoderConfig config;
  Vocab vocab;
  std::string point_kind;
  ImageEncoder<T> image;
  TextEncoder<T> text;
  std::unique_ptr<PointSetEncoder<T>> point;
  Projection<T> proj_2d, proj_text, proj_3d;
  PromptSet<T> prompts;

  // Throws ConfigError for an unknown group name.
  ParamList<T> group(std::string_view name);
  ParamList<T> all_parameters();
  void set_trainable(std::string_view name, bool on);
  bool trainable(std::string_view name) const;
  void zero_grad();

  // Graph builders returning unit-norm (batch x embed_dim) embeddings.
  nn::Var embed_points(nn::Graph<T>& g, std::span<const PointCloud> clouds);
  nn::Var embed_images(nn::Graph<T>& g, std::span<const DepthImage> images, bool use_prompts);
  nn::Var embed_texts(nn::Graph<T>& g, std::span<const TokenSeq> tokens);

  // Gradient-free evaluation in chunks.
  nn::Tensor<T> encode_points(std::span<const PointCloud> clouds);
  nn::Tensor<T> encode_images(std::span<const DepthImage> images, bool use_prompts);
  nn::Tensor<T> encode_texts(std::span<const TokenSeq> tokens);
  nn::Tensor<T> encode_captions(std::span<const std::string> captions);
  // Pre-projection point features (batch x point->output_width()).
  nn::Tensor<T> point_features(std::span<const PointCloud> clouds);
  nn::Tensor<T> image_features(std::span<const DepthImage> images, bool use_prompts);

  // Same architecture and values in another precision.
  template <typename U>
  Model<U> cast() const;
};

// FNV-1a over the float32 bytes of every value in the group.
std::uint64_t checksum(Model<float>& m, std::string_view group);

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out(config, vocab, 0, point_kind);
  auto& self = const_cast<Model&>(*this);
  for (auto name : kGroupNames) {
    auto src = self.group(name);
    auto dst = out.group(name);
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i]->value = src[i]->value.template cast<U>();
      dst[i]->trainable = src[i]->trainable;
    }
  }
  return out;
}

}  // namespace cg3d
