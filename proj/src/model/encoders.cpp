#include "cg3d/model/encoders.hpp"

#include <cmath>

#include "cg3d/util/error.hpp"

namespace cg3d {

namespace {

template <typename T>
nn::Parameter<T> gaussian(const std::string& name, std::size_t rows, std::size_t cols, double sigma, Rng& rng) {
  nn::Parameter<T> p;
  p.name = name;
  p.value = nn::Tensor<T>(rows, cols);
  for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(sigma * normal01(rng));
  return p;
}

template <typename T>
nn::Parameter<T> constant(const std::string& name, std::size_t rows, std::size_t cols, T v) {
  nn::Parameter<T> p;
  p.name = name;
  p.value = nn::Tensor<T>(rows, cols, v);
  return p;
}

}  // namespace

template <typename T>
void Linear<T>::init(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  w = gaussian<T>(name + ".w", in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  b = constant<T>(name + ".b", 1, out, T{0});
}

template <typename T>
nn::Var Linear<T>::operator()(nn::Graph<T>& g, nn::Var x) {
  return nn::ops::linear(g, x, g.param(w), g.param(b));
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

template <typename T>
void LayerNorm<T>::init(const std::string& name, std::size_t width) {
  gamma = constant<T>(name + ".gamma", 1, width, T{1});
  beta = constant<T>(name + ".beta", 1, width, T{0});
}

template <typename T>
nn::Var LayerNorm<T>::operator()(nn::Graph<T>& g, nn::Var x) {
  return nn::ops::layer_norm(g, x, g.param(gamma), g.param(beta));
}

template <typename T>
void LayerNorm<T>::collect(ParamList<T>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

template <typename T>
void TransformerBlock<T>::init(const std::string& name, std::size_t width, std::size_t hidden, Rng& rng) {
  ln1.init(name + ".ln1", width);
  ln2.init(name + ".ln2", width);
  qkv.init(name + ".qkv", width, 3 * width, rng);
  out.init(name + ".out", width, width, rng);
  fc1.init(name + ".fc1", width, hidden, rng);
  fc2.init(name + ".fc2", hidden, width, rng);
  // Residual branches start small so the stack is close to identity.
  for (auto* p : {&out.w, &fc2.w})
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] *= static_cast<T>(0.5);
}

template <typename T>
nn::Var TransformerBlock<T>::forward(nn::Graph<T>& g, nn::Var x, std::size_t batch, std::size_t seq,
                                     std::size_t heads, bool causal) {
  using namespace nn::ops;
  nn::Var a = attention(g, qkv(g, ln1(g, x)), batch, seq, heads, causal);
  x = add(g, x, out(g, a));
  nn::Var h = fc2(g, gelu(g, fc1(g, ln2(g, x))));
  return add(g, x, h);
}

template <typename T>
void TransformerBlock<T>::collect(ParamList<T>& o) {
  ln1.collect(o);
  qkv.collect(o);
  out.collect(o);
  ln2.collect(o);
  fc1.collect(o);
  fc2.collect(o);
}

template <typename T>
void ImageEncoder<T>::init(const EncoderConfig& c, Rng& rng) {
  c.validate();
  cfg = c;
  const auto w = static_cast<std::size_t>(c.width);
  const auto pp = static_cast<std::size_t>(c.patch * c.patch);
  patch_embed.init("image.patch_embed", pp, w, rng);
  cls = gaussian<T>("image.cls", 1, w, 0.02, rng);
  pos = gaussian<T>("image.pos", 1 + static_cast<std::size_t>(c.num_patches()), w, 0.02, rng);
  blocks.assign(static_cast<std::size_t>(c.layers), {});
  for (std::size_t l = 0; l < blocks.size(); ++l)
    blocks[l].init("image.block" + std::to_string(l), w, w * static_cast<std::size_t>(c.mlp_ratio), rng);
  ln_out.init("image.ln_out", w);
}

template <typename T>
nn::Var ImageEncoder<T>::forward(nn::Graph<T>& g, const nn::Tensor<T>& patches, std::size_t batch,
                                 PromptSet<T>* prompts) {
  using namespace nn::ops;
  const auto np = static_cast<std::size_t>(cfg.num_patches());
  const std::size_t seq = np + 1;
  if (batch == 0) throw ContractError("encode_image: empty batch");
  if (patches.rows() != batch * np || patches.cols() != static_cast<std::size_t>(cfg.patch * cfg.patch))
    throw ContractError("encode_image: patch tensor " + patches.shape_string() + " does not match batch " +
                        std::to_string(batch));
  const bool prompted = prompts != nullptr && prompts->enabled();
  if (prompted && (prompts->layers != cfg.layers || prompts->width != cfg.width ||
                   prompts->tokens.size() != static_cast<std::size_t>(cfg.layers)))
    throw ConfigError("prompt set (" + std::to_string(prompts->layers) + " layers, width " +
                      std::to_string(prompts->width) + ") does not match image encoder (" +
                      std::to_string(cfg.layers) + " layers, width " + std::to_string(cfg.width) + ")");

  // [cls_b, patches_b...] for each b, then positional embedding.
  nn::Var emb = patch_embed(g, g.constant(patches));
  nn::Var cls_rows = gather_rows(g, g.param(cls), std::vector<std::size_t>(batch, 0));
  nn::Var both = concat_rows(g, emb, cls_rows);
  std::vector<std::size_t> order;
  order.reserve(batch * seq);
  for (std::size_t b = 0; b < batch; ++b) {
    order.push_back(batch * np + b);
    for (std::size_t p = 0; p < np; ++p) order.push_back(b * np + p);
  }
  nn::Var x = add_tiled(g, gather_rows(g, both, std::move(order)), g.param(pos));

  const auto heads = static_cast<std::size_t>(cfg.heads);
  const std::size_t n = prompted ? static_cast<std::size_t>(prompts->n) : 0;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    if (!prompted) {
      x = blocks[l].forward(g, x, batch, seq, heads, false);
      continue;
    }
    std::vector<std::size_t> tile;
    tile.reserve(batch * n);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < n; ++k) tile.push_back(k);
    nn::Var ptok = gather_rows(g, g.param(prompts->tokens[l]), std::move(tile));
    nn::Var cat = concat_rows(g, x, ptok);
    std::vector<std::size_t> inject;
    inject.reserve(batch * (seq + n));
    for (std::size_t b = 0; b < batch; ++b) {
      inject.push_back(b * seq);
      for (std::size_t k = 0; k < n; ++k) inject.push_back(batch * seq + b * n + k);
      for (std::size_t p = 1; p < seq; ++p) inject.push_back(b * seq + p);
    }
    nn::Var y = blocks[l].forward(g, gather_rows(g, cat, std::move(inject)), batch, seq + n, heads, false);
    std::vector<std::size_t> strip;
    strip.reserve(batch * seq);
    for (std::size_t b = 0; b < batch; ++b) {
      strip.push_back(b * (seq + n));
      for (std::size_t p = 1; p < seq; ++p) strip.push_back(b * (seq + n) + n + p);
    }
    x = gather_rows(g, y, std::move(strip));
  }
  std::vector<std::size_t> cls_idx(batch);
  for (std::size_t b = 0; b < batch; ++b) cls_idx[b] = b * seq;
  return ln_out(g, gather_rows(g, x, std::move(cls_idx)));
}

template <typename T>
void ImageEncoder<T>::collect(ParamList<T>& out) {
  patch_embed.collect(out);
  out.push_back(&cls);
  out.push_back(&pos);
  for (auto& b : blocks) b.collect(out);
  ln_out.collect(out);
}

template <typename T>
void TextEncoder<T>::init(const EncoderConfig& c, std::size_t vocab, Rng& rng) {
  c.validate();
  if (vocab < static_cast<std::size_t>(Vocab::kReserved)) throw ConfigError("text encoder: vocabulary too small");
  cfg = c;
  vocab_size = vocab;
  const auto w = static_cast<std::size_t>(c.width);
  tok_embed = gaussian<T>("text.tok_embed", vocab, w, 0.02, rng);
  pos = gaussian<T>("text.pos", static_cast<std::size_t>(c.text_len), w, 0.01, rng);
  blocks.assign(static_cast<std::size_t>(c.layers), {});
  for (std::size_t l = 0; l < blocks.size(); ++l)
    blocks[l].init("text.block" + std::to_string(l), w, w * static_cast<std::size_t>(c.mlp_ratio), rng);
  ln_out.init("text.ln_out", w);
}

template <typename T>
nn::Var TextEncoder<T>::forward(nn::Graph<T>& g, std::span<const TokenSeq> tokens) {
  using namespace nn::ops;
  const std::size_t batch = tokens.size();
  const auto len = static_cast<std::size_t>(cfg.text_len);
  if (batch == 0) throw ContractError("encode_text: empty batch");
  std::vector<std::size_t> idx;
  idx.reserve(batch * len);
  std::vector<std::size_t> eos(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const TokenSeq& t = tokens[b];
    if (t.indices.size() != len) throw ContractError("encode_text: token sequence length differs from text_len");
    if (t.eos_pos < 1 || static_cast<std::size_t>(t.eos_pos) >= len)
      throw ContractError("encode_text: eos position out of range");
    for (int id : t.indices) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) throw ContractError("encode_text: token id out of range");
      idx.push_back(static_cast<std::size_t>(id));
    }
    eos[b] = b * len + static_cast<std::size_t>(t.eos_pos);
  }
  nn::Var x = add_tiled(g, gather_rows(g, g.param(tok_embed), std::move(idx)), g.param(pos));
  for (auto& blk : blocks) x = blk.forward(g, x, batch, len, static_cast<std::size_t>(cfg.heads), true);
  return ln_out(g, gather_rows(g, x, std::move(eos)));
}

template <typename T>
void TextEncoder<T>::collect(ParamList<T>& out) {
  out.push_back(&tok_embed);
  out.push_back(&pos);
  for (auto& b : blocks) b.collect(out);
  ln_out.collect(out);
}

template <typename T>
PointNetEncoder<T>::PointNetEncoder(Rng& rng) {
  l1_.init("point.mlp1", 3, 64, rng);
  l2_.init("point.mlp2", 64, 128, rng);
  l3_.init("point.mlp3", 128, 256, rng);
  head_.init("point.head", 256, 256, rng);
  // ReLU layers: He scaling.
  for (auto* l : {&l1_, &l2_, &l3_})
    for (std::size_t i = 0; i < l->w.value.size(); ++i) l->w.value[i] *= static_cast<T>(std::sqrt(2.0));
}

template <typename T>
nn::Var PointNetEncoder<T>::forward(nn::Graph<T>& g, const nn::Tensor<T>& points, std::size_t batch) {
  using namespace nn::ops;
  if (batch == 0 || points.rows() == 0 || points.rows() % batch != 0 || points.cols() != 3)
    throw ContractError("encode_3d: expected (batch*n x 3) points, got " + points.shape_string());
  nn::Var h = relu(g, l1_(g, g.constant(points)));
  h = relu(g, l2_(g, h));
  h = relu(g, l3_(g, h));
  return head_(g, max_pool(g, h, batch));
}

template <typename T>
void PointNetEncoder<T>::collect(ParamList<T>& out) {
  l1_.collect(out);
  l2_.collect(out);
  l3_.collect(out);
  head_.collect(out);
}

template <typename T>
std::unique_ptr<PointSetEncoder<T>> make_point_encoder(const std::string& kind, Rng& rng) {
  if (kind == "pointnet") return std::make_unique<PointNetEncoder<T>>(rng);
  throw ConfigError("unknown point encoder \"" + kind + "\" (available: pointnet)");
}

template <typename T>
void Projection<T>::init(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  lin.init(name, in, out, rng);
}

template <typename T>
nn::Var Projection<T>::forward(nn::Graph<T>& g, nn::Var features) {
  const std::size_t in = lin.w.value.rows();
  if (g.value(features).cols() != in)
    throw ConfigError("projection expects width " + std::to_string(in) + ", got " +
                      std::to_string(g.value(features).cols()));
  return nn::ops::l2_normalize(g, lin(g, features));
}

template <typename T>
void Projection<T>::collect(ParamList<T>& out) {
  lin.collect(out);
}

template <typename T>
nn::Tensor<T> patchify(std::span<const DepthImage> images, int image_size, int patch) {
  const int pps = image_size / patch;
  const auto pp = static_cast<std::size_t>(patch * patch);
  nn::Tensor<T> out(images.size() * static_cast<std::size_t>(pps * pps), pp);
  std::size_t r = 0;
  for (const DepthImage& img : images) {
    if (img.height != image_size || img.width != image_size ||
        img.pixels.size() != static_cast<std::size_t>(image_size * image_size))
      throw ConfigError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        ", encoder expects " + std::to_string(image_size) + "x" + std::to_string(image_size));
    for (int pr = 0; pr < pps; ++pr)
      for (int pc = 0; pc < pps; ++pc, ++r) {
        std::size_t c = 0;
        for (int y = 0; y < patch; ++y)
          for (int x = 0; x < patch; ++x) out(r, c++) = static_cast<T>(img.at(pr * patch + y, pc * patch + x));
      }
  }
  return out;
}

template <typename T>
nn::Tensor<T> stack_points(std::span<const PointCloud> clouds) {
  if (clouds.empty()) throw ContractError("encode_3d: empty batch");
  const std::size_t n = clouds.front().size();
  for (const auto& c : clouds) {
    if (c.size() == 0) throw ContractError("encode_3d: empty point cloud");
    if (c.size() != n) throw ContractError("encode_3d: clouds in a batch must have equal point counts (resample first)");
  }
  nn::Tensor<T> out(clouds.size() * n, 3);
  std::size_t r = 0;
  for (const auto& c : clouds)
    for (const Vec3& p : c.points) {
      out(r, 0) = static_cast<T>(p.x);
      out(r, 1) = static_cast<T>(p.y);
      out(r, 2) = static_cast<T>(p.z);
      ++r;
    }
  return out;
}

#define CG3D_INSTANTIATE_ENCODERS(T)                                                              \
  template struct Linear<T>;                                                                      \
  template struct LayerNorm<T>;                                                                   \
  template struct TransformerBlock<T>;                                                            \
  template struct ImageEncoder<T>;                                                                \
  template struct TextEncoder<T>;                                                                 \
  template class PointNetEncoder<T>;                                                              \
  template struct Projection<T>;                                                                  \
  template std::unique_ptr<PointSetEncoder<T>> make_point_encoder<T>(const std::string&, Rng&);   \
  template nn::Tensor<T> patchify<T>(std::span<const DepthImage>, int, int);                      \
  template nn::Tensor<T> stack_points<T>(std::span<const PointCloud>);

CG3D_INSTANTIATE_ENCODERS(float)
CG3D_INSTANTIATE_ENCODERS(double)

}  // namespace cg3d
