#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cg3d/geometry/depth.hpp"
#include "cg3d/geometry/point_cloud.hpp"
#include "cg3d/model/config.hpp"
#include "cg3d/model/prompts.hpp"
#include "cg3d/model/vocab.hpp"
#include "cg3d/nn/ops.hpp"
#include "cg3d/util/rng.hpp"

namespace cg3d {

template <typename T>
using ParamList = std::vector<nn::Parameter<T>*>;

template <typename T>
struct Linear {
  nn::Parameter<T> w;  // in x out
  nn::Parameter<T> b;  // 1 x out

  void init(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  nn::Var operator()(nn::Graph<T>& g, nn::Var x);
  void collect(ParamList<T>& out);
};

template <typename T>
struct LayerNorm {
  nn::Parameter<T> gamma;
  nn::Parameter<T> beta;

  void init(const std::string& name, std::size_t width);
  nn::Var operator()(nn::Graph<T>& g, nn::Var x);
  void collect(ParamList<T>& out);
};

// Pre-LN transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  Linear<T> qkv, out, fc1, fc2;

  void init(const std::string& name, std::size_t width, std::size_t hidden, Rng& rng);
  nn::Var forward(nn::Graph<T>& g, nn::Var x, std::size_t batch, std::size_t seq, std::size_t heads, bool causal);
  void collect(ParamList<T>& out);
};

// Patch transformer over depth images. Output is the final class token after
// a layer norm: (batch x width).
template <typename T>
struct ImageEncoder {
  EncoderConfig cfg;
  Linear<T> patch_embed;
  nn::Parameter<T> cls;  // 1 x width
  nn::Parameter<T> pos;  // (1 + patches) x width
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> ln_out;

  void init(const EncoderConfig& c, Rng& rng);
  // patches: (batch*num_patches x patch*patch). With enabled prompts the
  // tokens of layer i sit right after the class token during block i and are
  // dropped from its output.
  nn::Var forward(nn::Graph<T>& g, const nn::Tensor<T>& patches, std::size_t batch, PromptSet<T>* prompts);
  void collect(ParamList<T>& out);
};

// Causal transformer over token sequences; output is the hidden state at each
// sequence's EOS position after a layer norm: (batch x width).
template <typename T>
struct TextEncoder {
  EncoderConfig cfg;
  std::size_t vocab_size = 0;
  nn::Parameter<T> tok_embed;  // vocab x width
  nn::Parameter<T> pos;        // text_len x width
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> ln_out;

  void init(const EncoderConfig& c, std::size_t vocab, Rng& rng);
  nn::Var forward(nn::Graph<T>& g, std::span<const TokenSeq> tokens);
  void collect(ParamList<T>& out);
};

// Pluggable point-set encoder: (batch*n x 3) points, n per cloud, to
// (batch x output_width()) features.
template <typename T>
class PointSetEncoder {
 public:
  virtual ~PointSetEncoder() = default;
  virtual std::string kind() const = 0;
  virtual std::size_t output_width() const = 0;
  virtual nn::Var forward(nn::Graph<T>& g, const nn::Tensor<T>& points, std::size_t batch) = 0;
  virtual void collect(ParamList<T>& out) = 0;
  virtual std::unique_ptr<PointSetEncoder> clone() const = 0;
};

// Shared per-point map 3-64-128-256 with ReLU, max over points, then 256-256.
template <typename T>
class PointNetEncoder final : public PointSetEncoder<T> {
 public:
  explicit PointNetEncoder(Rng& rng);
  std::string kind() const override { return "pointnet"; }
  std::size_t output_width() const override { return 256; }
  nn::Var forward(nn::Graph<T>& g, const nn::Tensor<T>& points, std::size_t batch) override;
  void collect(ParamList<T>& out) override;
  std::unique_ptr<PointSetEncoder<T>> clone() const override { return std::make_unique<PointNetEncoder>(*this); }

 private:
  Linear<T> l1_, l2_, l3_, head_;
};

// Creates a point encoder by kind name; throws ConfigError for unknown kinds.
template <typename T>
std::unique_ptr<PointSetEncoder<T>> make_point_encoder(const std::string& kind, Rng& rng);

// Affine map followed by row L2 normalization.
template <typename T>
struct Projection {
  Linear<T> lin;

  void init(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  nn::Var forward(nn::Graph<T>& g, nn::Var features);
  void collect(ParamList<T>& out);
};

// Input layout helpers.
template <typename T>
nn::Tensor<T> patchify(std::span<const DepthImage> images, int image_size, int patch);

// Stacks clouds that all have the same point count; throws ContractError on
// empty clouds or mismatched counts.
template <typename T>
nn::Tensor<T> stack_points(std::span<const PointCloud> clouds);

}  // namespace cg3d
