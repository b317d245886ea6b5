#include "cg3d/model/config.hpp"

#include <string>

#include "cg3d/util/error.hpp"

namespace cg3d {

void EncoderConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("encoder config: ") + name + " must be positive");
  };
  positive(embed_dim, "embed_dim");
  positive(image_size, "image_size");
  positive(patch, "patch");
  positive(layers, "layers");
  positive(heads, "heads");
  positive(width, "width");
  positive(mlp_ratio, "mlp_ratio");
  if (image_size < 8) throw ConfigError("encoder config: image_size must be >= 8");
  if (image_size % patch != 0) throw ConfigError("encoder config: image_size must be a multiple of patch");
  if (width % heads != 0) throw ConfigError("encoder config: width must be divisible by heads");
  if (text_len < 2) throw ConfigError("encoder config: text_len must be >= 2");
  if (n_prompt_tokens < 0) throw ConfigError("encoder config: n_prompt_tokens must be >= 0");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"embed_dim", embed_dim}, {"image_size", image_size}, {"patch", patch},
          {"layers", layers},       {"heads", heads},           {"width", width},
          {"text_len", text_len},   {"n_prompt_tokens", n_prompt_tokens}, {"mlp_ratio", mlp_ratio}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("encoder config: expected a JSON object");
  EncoderConfig c;
  for (const auto& [key, val] : j.items()) {
    if (!val.is_number_integer()) throw ConfigError("encoder config: \"" + key + "\" must be an integer");
    const int v = val.get<int>();
    if (key == "embed_dim") c.embed_dim = v;
    else if (key == "image_size") c.image_size = v;
    else if (key == "patch") c.patch = v;
    else if (key == "layers") c.layers = v;
    else if (key == "heads") c.heads = v;
    else if (key == "width") c.width = v;
    else if (key == "text_len") c.text_len = v;
    else if (key == "n_prompt_tokens") c.n_prompt_tokens = v;
    else if (key == "mlp_ratio") c.mlp_ratio = v;
    else throw ConfigError("encoder config: unknown key \"" + key + "\"");
  }
  c.validate();
  return c;
}

}  // namespace cg3d
