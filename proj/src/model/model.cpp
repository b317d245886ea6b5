#include "cg3d/model/model.hpp"

#include <algorithm>
#include <cstring>

#include "cg3d/util/error.hpp"

namespace cg3d {

namespace {
constexpr std::size_t kEvalChunk = 64;
}

template <typename T>
Model<T>::Model(const EncoderConfig& cfg, Vocab v, std::uint64_t seed, const std::string& kind)
    : config(cfg), vocab(std::move(v)), point_kind(kind) {
  config.validate();
  const auto w = static_cast<std::size_t>(config.width);
  const auto d = static_cast<std::size_t>(config.embed_dim);
  // Each component draws from its own stream so changing one size does not
  // reshuffle the others.
  Rng r_image(derive_seed(seed, {1})), r_text(derive_seed(seed, {2})), r_point(derive_seed(seed, {3}));
  Rng r_p2(derive_seed(seed, {4})), r_pt(derive_seed(seed, {5})), r_p3(derive_seed(seed, {6}));
  Rng r_prompt(derive_seed(seed, {7}));
  image.init(config, r_image);
  text.init(config, vocab.size(), r_text);
  point = make_point_encoder<T>(point_kind, r_point);
  proj_2d.init("proj_2d", w, d, r_p2);
  proj_text.init("proj_text", w, d, r_pt);
  proj_3d.init("proj_3d", point->output_width(), d, r_p3);
  prompts = init_prompts<T>(config.layers, config.n_prompt_tokens, config.width, r_prompt);
}

template <typename T>
Model<T>::Model(const Model& o)
    : config(o.config),
      vocab(o.vocab),
      point_kind(o.point_kind),
      image(o.image),
      text(o.text),
      point(o.point->clone()),
      proj_2d(o.proj_2d),
      proj_text(o.proj_text),
      proj_3d(o.proj_3d),
      prompts(o.prompts) {}

template <typename T>
Model<T>& Model<T>::operator=(const Model& o) {
  if (this != &o) {
    Model tmp(o);
    *this = std::move(tmp);
  }
  return *this;
}

template <typename T>
ParamList<T> Model<T>::group(std::string_view name) {
  ParamList<T> out;
  if (name == "base_2d") image.collect(out);
  else if (name == "base_text") text.collect(out);
  else if (name == "proj_2d") proj_2d.collect(out);
  else if (name == "proj_text") proj_text.collect(out);
  else if (name == "enc_3d") point->collect(out);
  else if (name == "proj_3d") proj_3d.collect(out);
  else if (name == "prompts") {
    for (auto& t : prompts.tokens) out.push_back(&t);
  } else {
    throw ConfigError("unknown parameter group \"" + std::string(name) + "\"");
  }
  return out;
}

template <typename T>
ParamList<T> Model<T>::all_parameters() {
  ParamList<T> out;
  for (auto name : kGroupNames) {
    auto g = group(name);
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

template <typename T>
void Model<T>::set_trainable(std::string_view name, bool on) {
  for (auto* p : group(name)) p->trainable = on;
}

template <typename T>
bool Model<T>::trainable(std::string_view name) const {
  auto params = const_cast<Model&>(*this).group(name);
  return !params.empty() && std::all_of(params.begin(), params.end(), [](auto* p) { return p->trainable; });
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto* p : all_parameters()) p->zero_grad();
}

template <typename T>
nn::Var Model<T>::embed_points(nn::Graph<T>& g, std::span<const PointCloud> clouds) {
  return proj_3d.forward(g, point->forward(g, stack_points<T>(clouds), clouds.size()));
}

template <typename T>
nn::Var Model<T>::embed_images(nn::Graph<T>& g, std::span<const DepthImage> images, bool use_prompts) {
  auto patches = patchify<T>(images, config.image_size, config.patch);
  return proj_2d.forward(g, image.forward(g, patches, images.size(), use_prompts ? &prompts : nullptr));
}

template <typename T>
nn::Var Model<T>::embed_texts(nn::Graph<T>& g, std::span<const TokenSeq> tokens) {
  return proj_text.forward(g, text.forward(g, tokens));
}

namespace {

template <typename T, typename Item, typename Fn>
nn::Tensor<T> chunked(std::span<const Item> items, std::size_t width, Fn&& fn) {
  nn::Tensor<T> out(items.size(), width);
  for (std::size_t s = 0; s < items.size(); s += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, items.size() - s);
    nn::Graph<T> g(false);
    const nn::Tensor<T>& v = g.value(fn(g, items.subspan(s, n)));
    std::copy(v.storage().begin(), v.storage().end(), out.data() + s * width);
  }
  return out;
}

}  // namespace

template <typename T>
nn::Tensor<T> Model<T>::encode_points(std::span<const PointCloud> clouds) {
  return chunked<T>(clouds, static_cast<std::size_t>(config.embed_dim),
                    [&](nn::Graph<T>& g, std::span<const PointCloud> c) { return embed_points(g, c); });
}

template <typename T>
nn::Tensor<T> Model<T>::encode_images(std::span<const DepthImage> images, bool use_prompts) {
  return chunked<T>(images, static_cast<std::size_t>(config.embed_dim),
                    [&](nn::Graph<T>& g, std::span<const DepthImage> c) { return embed_images(g, c, use_prompts); });
}

template <typename T>
nn::Tensor<T> Model<T>::encode_texts(std::span<const TokenSeq> tokens) {
  return chunked<T>(tokens, static_cast<std::size_t>(config.embed_dim),
                    [&](nn::Graph<T>& g, std::span<const TokenSeq> c) { return embed_texts(g, c); });
}

template <typename T>
nn::Tensor<T> Model<T>::encode_captions(std::span<const std::string> captions) {
  std::vector<TokenSeq> toks;
  toks.reserve(captions.size());
  for (const auto& c : captions) toks.push_back(tokenize(c, vocab, config.text_len));
  return encode_texts(toks);
}

template <typename T>
nn::Tensor<T> Model<T>::point_features(std::span<const PointCloud> clouds) {
  return chunked<T>(clouds, point->output_width(), [&](nn::Graph<T>& g, std::span<const PointCloud> c) {
    return point->forward(g, stack_points<T>(c), c.size());
  });
}

template <typename T>
nn::Tensor<T> Model<T>::image_features(std::span<const DepthImage> images, bool use_prompts) {
  return chunked<T>(images, static_cast<std::size_t>(config.width),
                    [&](nn::Graph<T>& g, std::span<const DepthImage> c) {
                      auto patches = patchify<T>(c, config.image_size, config.patch);
                      return image.forward(g, patches, c.size(), use_prompts ? &prompts : nullptr);
                    });
}

template class Model<float>;
template class Model<double>;

std::uint64_t checksum(Model<float>& m, std::string_view group) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : m.group(group)) {
    for (unsigned char c : p->name) h = (h ^ c) * 0x100000001b3ULL;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      std::uint32_t bits;
      const float f = p->value[i];
      std::memcpy(&bits, &f, 4);
      for (int k = 0; k < 4; ++k) h = (h ^ ((bits >> (8 * k)) & 0xffu)) * 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace cg3d
