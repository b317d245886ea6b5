#include "cg3d/model/prompts.hpp"

#include <cmath>

#include "cg3d/util/binary_io.hpp"

namespace cg3d {

template <typename T>
PromptSet<T> init_prompts(int layers, int n, int width, Rng& rng) {
  if (layers < 0 || n < 0 || width <= 0) throw ConfigError("init_prompts: invalid shape");
  PromptSet<T> ps{layers, n, width, {}};
  if (n == 0) return ps;
  for (int l = 0; l < layers; ++l) {
    nn::Parameter<T> p;
    p.name = "prompts.layer" + std::to_string(l);
    p.value = nn::Tensor<T>(static_cast<std::size_t>(n), static_cast<std::size_t>(width));
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(0.02 * normal01(rng));
    ps.tokens.push_back(std::move(p));
  }
  return ps;
}

template PromptSet<float> init_prompts<float>(int, int, int, Rng&);
template PromptSet<double> init_prompts<double>(int, int, int, Rng&);

std::vector<char> encode_prompts(const PromptSet<float>& ps) {
  io::ByteWriter w;
  w.magic("VPT1");
  w.u32(static_cast<std::uint32_t>(ps.layers));
  w.u32(static_cast<std::uint32_t>(ps.n));
  w.u32(static_cast<std::uint32_t>(ps.width));
  for (const auto& t : ps.tokens) w.f32s(t.value.storage());
  return w.take();
}

PromptSet<float> decode_prompts(std::span<const char> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("VPT1", "prompt file");
  PromptSet<float> ps;
  ps.layers = static_cast<int>(r.u32("prompt layers"));
  ps.n = static_cast<int>(r.u32("prompt count"));
  ps.width = static_cast<int>(r.u32("prompt width"));
  if (ps.width <= 0) throw FormatError("prompt file: zero width", r.offset());
  if (ps.n == 0) return ps;
  for (int l = 0; l < ps.layers; ++l) {
    nn::Parameter<float> p;
    p.name = "prompts.layer" + std::to_string(l);
    p.value = nn::Tensor<float>(static_cast<std::size_t>(ps.n), static_cast<std::size_t>(ps.width));
    const std::size_t at = r.offset();
    r.f32s(p.value.storage(), "prompt payload");
    for (std::size_t i = 0; i < p.value.size(); ++i)
      if (!std::isfinite(p.value[i])) throw FormatError("prompt file: non-finite token value", at + 4 * i);
    ps.tokens.push_back(std::move(p));
  }
  return ps;
}

void write_prompts(const std::string& path, const PromptSet<float>& ps) { io::write_file(path, encode_prompts(ps)); }

PromptSet<float> read_prompts(const std::string& path) {
  const auto bytes = io::read_file(path);
  return decode_prompts(bytes);
}

void assign_prompts(PromptSet<float>& target, const PromptSet<float>& source) {
  if (target.layers != source.layers || target.n != source.n || target.width != source.width)
    throw ConfigError("prompt shape (" + std::to_string(source.layers) + "," + std::to_string(source.n) + "," +
                      std::to_string(source.width) + ") does not match encoder (" + std::to_string(target.layers) +
                      "," + std::to_string(target.n) + "," + std::to_string(target.width) + ")");
  for (std::size_t l = 0; l < target.tokens.size(); ++l) target.tokens[l].value = source.tokens[l].value;
}

}  // namespace cg3d
