#include "cg3d/training/checkpoint.hpp"

#include <cmath>

#include "cg3d/util/binary_io.hpp"
#include "cg3d/util/error.hpp"

namespace cg3d {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "CG3D";

char hex_digit(unsigned v) { return "0123456789abcdef"[v & 15]; }

std::string hex64(std::uint64_t v) {
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = hex_digit(static_cast<unsigned>(v));
  return s;
}

json tensor_entry(const nn::Parameter<float>& p) {
  return {{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}};
}

// FNV-1a over the payload bytes; catches damage to extras and optimizer
// state, which the per-group checksums do not cover.
std::uint64_t payload_hash(const std::vector<float>& payload) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::size_t i = 0; i < payload.size() * sizeof(float); ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
  return h;
}

struct Header {
  json j;
  std::size_t payload_at = 0;
};

Header read_header(io::ByteReader& r) {
  r.expect_magic(kMagic, "checkpoint");
  const std::uint32_t version = r.u32("checkpoint version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), r.offset() - 4);
  const std::uint32_t len = r.u32("checkpoint header length");
  const std::size_t at = r.offset();
  const std::string text = r.str(len, "checkpoint header");
  Header h;
  try {
    h.j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), at + e.byte);
  }
  h.payload_at = r.offset();
  return h;
}

}  // namespace

std::vector<char> encode_checkpoint(const Checkpoint& ck) {
  auto& model = const_cast<Model<float>&>(ck.model);
  std::vector<float> payload;
  json groups = json::object();
  for (auto name : kGroupNames) {
    json tensors = json::array();
    for (auto* p : model.group(name)) {
      tensors.push_back(tensor_entry(*p));
      payload.insert(payload.end(), p->value.storage().begin(), p->value.storage().end());
    }
    groups[std::string(name)] = {{"trainable", model.trainable(name)},
                                 {"checksum", hex64(checksum(model, name))},
                                 {"tensors", tensors}};
  }
  json extra = json::array();
  for (const auto& p : ck.extra) {
    extra.push_back(tensor_entry(p));
    payload.insert(payload.end(), p.value.storage().begin(), p.value.storage().end());
  }
  json opts = json::object();
  for (const auto& [role, o] : ck.optimizers) {
    opts[role] = o.header();
    o.append_payload(payload);
  }
  json h;
  h["encoder"] = model.config.to_json();
  h["point_kind"] = model.point_kind;
  h["vocab"] = model.vocab.to_json();
  h["classes"] = ck.classes;
  h["step"] = ck.step;
  h["stage"] = ck.stage;
  h["config_digest"] = ck.config_digest;
  h["groups"] = groups;
  h["extra"] = extra;
  h["optimizers"] = opts;
  h["meta"] = ck.meta;
  h["payload_floats"] = payload.size();
  h["payload_checksum"] = hex64(payload_hash(payload));

  const std::string text = h.dump();
  io::ByteWriter w;
  w.magic(kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.str(text);
  w.f32s(payload);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const char> bytes) {
  io::ByteReader r(bytes);
  const Header hd = read_header(r);
  const json& h = hd.j;
  try {
    const auto n = h.at("payload_floats").get<std::size_t>();
    std::vector<float> payload(n);
    r.f32s(payload, "checkpoint payload");
    if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes", r.offset());
    if (hex64(payload_hash(payload)) != h.at("payload_checksum").get<std::string>())
      throw FormatError("checkpoint payload fails its checksum", hd.payload_at);
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite(payload[i]))
        throw FormatError("checkpoint: non-finite parameter value", hd.payload_at + i * sizeof(float));

    Model<float> model(EncoderConfig::from_json(h.at("encoder")), Vocab::from_json(h.at("vocab")), 0,
                       h.at("point_kind").get<std::string>());
    std::size_t pos = 0;
    auto fill = [&](nn::Parameter<float>& p, const json& e) {
      const auto rows = e.at("rows").get<std::size_t>(), cols = e.at("cols").get<std::size_t>();
      if (e.at("name").get<std::string>() != p.name || rows != p.value.rows() || cols != p.value.cols())
        throw ConfigError("checkpoint tensor " + e.at("name").get<std::string>() + " (" + std::to_string(rows) + "x" +
                          std::to_string(cols) + ") does not match model parameter " + p.name + " " +
                          p.value.shape_string());
      std::copy_n(payload.begin() + static_cast<std::ptrdiff_t>(pos), p.value.size(), p.value.data());
      pos += p.value.size();
    };
    const json& groups = h.at("groups");
    for (auto name : kGroupNames) {
      const json& gj = groups.at(std::string(name));
      auto params = model.group(name);
      const json& tensors = gj.at("tensors");
      if (tensors.size() != params.size())
        throw ConfigError("checkpoint group " + std::string(name) + " has " + std::to_string(tensors.size()) +
                          " tensors, model expects " + std::to_string(params.size()));
      for (std::size_t i = 0; i < params.size(); ++i) fill(*params[i], tensors[i]);
      model.set_trainable(name, gj.at("trainable").get<bool>());
      if (hex64(checksum(model, name)) != gj.at("checksum").get<std::string>())
        throw FormatError("checkpoint group " + std::string(name) + " fails its checksum", hd.payload_at);
    }
    Checkpoint ck(std::move(model));
    for (const auto& e : h.at("extra")) {
      nn::Parameter<float> p{e.at("name").get<std::string>(),
                             nn::Tensor<float>(e.at("rows").get<std::size_t>(), e.at("cols").get<std::size_t>()),
                             {}};
      fill(p, e);
      ck.extra.push_back(std::move(p));
    }
    for (const auto& [role, oj] : h.at("optimizers").items()) {
      OptimConfig cfg;
      cfg.kind = oj.at("kind").get<std::string>() == "sgd" ? OptimKind::sgd : OptimKind::adamw;
      ck.optimizers.emplace(role, Optimizer::restore(cfg, oj, payload, pos));
    }
    if (pos != n) throw FormatError("checkpoint: payload holds unused floats", hd.payload_at + pos * sizeof(float));
    ck.classes = h.at("classes").get<std::vector<std::string>>();
    ck.step = h.at("step").get<long>();
    ck.stage = h.at("stage").get<std::string>();
    ck.config_digest = h.at("config_digest").get<std::string>();
    ck.meta = h.at("meta");
    return ck;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), 12);
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) { io::write_file(path, encode_checkpoint(ck)); }

Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

json read_checkpoint_header(const std::string& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  return read_header(r).j;
}

}  // namespace cg3d
