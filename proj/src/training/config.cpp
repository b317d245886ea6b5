#include "cg3d/training/config.hpp"

#include <cstdio>
#include <set>

#include "cg3d/util/binary_io.hpp"
#include "cg3d/util/error.hpp"

namespace cg3d {

using nlohmann::json;

std::string to_string(PositiveMode m) { return m == PositiveMode::by_class ? "class" : "instance"; }
std::string to_string(OptimKind k) { return k == OptimKind::adamw ? "adamw" : "sgd"; }

namespace {

// Walks the keys of one JSON object, rejecting any it does not consume.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, int>) {
        if (!it->is_number_integer()) throw ConfigError(where_ + "." + key + ": expected an integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw ConfigError(where_ + "." + key + ": expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(where_ + "." + key + ": expected true or false");
      }
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.contains(k)) throw ConfigError(where_ + ": unknown key \"" + k + "\"");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

PositiveMode positive_mode_from(const std::string& s, const std::string& where) {
  if (s == "class") return PositiveMode::by_class;
  if (s == "instance") return PositiveMode::instance;
  throw ConfigError(where + ": positive_mode must be \"class\" or \"instance\"");
}

json optim_json(const OptimConfig& o) {
  json j = {{"kind", to_string(o.kind)}, {"lr", o.lr}, {"weight_decay", o.weight_decay}, {"min_lr", o.min_lr}};
  if (o.kind == OptimKind::sgd) {
    j["momentum"] = o.momentum;
  } else {
    j["beta1"] = o.beta1;
    j["beta2"] = o.beta2;
    j["eps"] = o.eps;
  }
  return j;
}

void optim_from(const json* j, OptimConfig& o, const std::string& where) {
  if (!j) return;
  Fields f(*j, where);
  std::string kind = to_string(o.kind);
  f.get("kind", kind);
  if (kind == "adamw") o.kind = OptimKind::adamw;
  else if (kind == "sgd") o.kind = OptimKind::sgd;
  else throw ConfigError(where + ".kind: expected \"adamw\" or \"sgd\"");
  f.get("lr", o.lr);
  f.get("weight_decay", o.weight_decay);
  f.get("min_lr", o.min_lr);
  f.get("momentum", o.momentum);
  f.get("beta1", o.beta1);
  f.get("beta2", o.beta2);
  f.get("eps", o.eps);
  f.finish();
}

json augment_json(const AugmentConfig& a) {
  return {{"scale_min", a.scale_min},       {"scale_max", a.scale_max}, {"rotate", a.rotate},
          {"drop_frac", a.drop_frac},       {"drop_random", a.drop_random},
          {"jitter_sigma", a.jitter_sigma}, {"jitter_clip", a.jitter_clip}};
}

void augment_from(const json* j, AugmentConfig& a, const std::string& where) {
  if (!j) return;
  Fields f(*j, where);
  f.get("scale_min", a.scale_min);
  f.get("scale_max", a.scale_max);
  f.get("rotate", a.rotate);
  f.get("drop_frac", a.drop_frac);
  f.get("drop_random", a.drop_random);
  f.get("jitter_sigma", a.jitter_sigma);
  f.get("jitter_clip", a.jitter_clip);
  f.finish();
}

}  // namespace

void OptimConfig::validate(const std::string& where) const {
  if (!(lr > 0)) throw ConfigError(where + ": lr must be positive");
  if (!(min_lr >= 0 && min_lr <= lr)) throw ConfigError(where + ": min_lr must lie in [0, lr]");
  if (!(weight_decay >= 0)) throw ConfigError(where + ": weight_decay must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError(where + ": momentum must lie in [0, 1)");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0))
    throw ConfigError(where + ": invalid adamw moments");
}

void ExperimentConfig::validate() const {
  encoder.validate();
  corpus.validate();
  if (corpus.image_size != encoder.image_size)
    throw ConfigError("corpus.image_size must equal encoder.image_size");
  if (!(test_fraction >= 0 && test_fraction < 1)) throw ConfigError("test_fraction must lie in [0, 1)");
  auto positive = [](int v, const char* what) {
    if (v < 1) throw ConfigError(std::string(what) + " must be >= 1");
  };
  positive(bimodal.steps, "bimodal.steps");
  positive(bimodal.batch_size, "bimodal.batch_size");
  positive(cg3d.steps, "cg3d.steps");
  positive(cg3d.batch_size, "cg3d.batch_size");
  positive(cg3d.n_points, "cg3d.n_points");
  positive(finetune.steps, "finetune.steps");
  positive(finetune.batch_size, "finetune.batch_size");
  positive(finetune.n_points, "finetune.n_points");
  positive(scene.k, "scene.k");
  positive(scene.n_points, "scene.n_points");
  positive(probe.max_iter, "probe.max_iter");
  for (double tau : {bimodal.tau, cg3d.tau})
    if (!(tau > 0)) throw ParameterError("temperature must be positive");
  if (!cg3d.use_3d2d && !cg3d.use_3dtext) throw ConfigError("cg3d: at least one of use_3d2d/use_3dtext must be set");
  if (!(finetune.train_fraction > 0 && finetune.train_fraction <= 1))
    throw ConfigError("finetune.train_fraction must lie in (0, 1]");
  if (!(probe.l2 >= 0 && probe.tol > 0)) throw ConfigError("probe: l2 must be >= 0 and tol > 0");
  bimodal.optimizer.validate("bimodal.optimizer");
  cg3d.optimizer_3d.validate("cg3d.optimizer_3d");
  cg3d.optimizer_prompt.validate("cg3d.optimizer_prompt");
  finetune.optimizer.validate("finetune.optimizer");
  cg3d.augment.validate();
  finetune.augment.validate();
  validate_template(scene.query_template);
}

json ExperimentConfig::to_json() const {
  json j;
  j["encoder"] = encoder.to_json();
  j["point_encoder"] = point_encoder;
  j["corpus"] = {{"classes", corpus.classes},       {"unseen", corpus.unseen},
                 {"per_class", corpus.per_class},   {"n_points", corpus.n_points},
                 {"image_size", corpus.image_size}, {"image_mode", cg3d::to_string(corpus.image_mode)},
                 {"templates", corpus.templates}};
  j["test_fraction"] = test_fraction;
  j["bimodal"] = {{"steps", bimodal.steps},
                  {"batch_size", bimodal.batch_size},
                  {"tau", bimodal.tau},
                  {"positive_mode", cg3d::to_string(bimodal.positive_mode)},
                  {"optimizer", optim_json(bimodal.optimizer)},
                  {"fresh_views", bimodal.fresh_views},
                  {"image_mode", cg3d::to_string(bimodal.image_mode)}};
  j["cg3d"] = {{"steps", cg3d.steps},
               {"batch_size", cg3d.batch_size},
               {"tau", cg3d.tau},
               {"positive_mode", cg3d::to_string(cg3d.positive_mode)},
               {"n_points", cg3d.n_points},
               {"augment", augment_json(cg3d.augment)},
               {"optimizer_3d", optim_json(cg3d.optimizer_3d)},
               {"optimizer_prompt", optim_json(cg3d.optimizer_prompt)},
               {"use_3d2d", cg3d.use_3d2d},
               {"use_3dtext", cg3d.use_3dtext},
               {"use_prompts", cg3d.use_prompts},
               {"fresh_views", cg3d.fresh_views}};
  j["finetune"] = {{"steps", finetune.steps},
                   {"batch_size", finetune.batch_size},
                   {"n_points", finetune.n_points},
                   {"train_fraction", finetune.train_fraction},
                   {"augment", augment_json(finetune.augment)},
                   {"optimizer", optim_json(finetune.optimizer)}};
  j["probe"] = {{"l2", probe.l2}, {"max_iter", probe.max_iter}, {"tol", probe.tol}};
  j["scene"] = {{"k", scene.k},
                {"strip_floor", scene.strip_floor},
                {"n_points", scene.n_points},
                {"query_template", scene.query_template}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Fields top(j, "config");
  if (const json* e = top.sub("encoder")) c.encoder = EncoderConfig::from_json(*e);
  top.get("point_encoder", c.point_encoder);
  top.get("test_fraction", c.test_fraction);
  if (const json* s = top.sub("corpus")) {
    Fields f(*s, "corpus");
    c.corpus.image_size = c.encoder.image_size;
    f.get("classes", c.corpus.classes);
    f.get("unseen", c.corpus.unseen);
    f.get("per_class", c.corpus.per_class);
    f.get("n_points", c.corpus.n_points);
    f.get("image_size", c.corpus.image_size);
    f.get("templates", c.corpus.templates);
    std::string mode = cg3d::to_string(c.corpus.image_mode);
    f.get("image_mode", mode);
    c.corpus.image_mode = image_mode_from_string(mode);
    f.finish();
  } else {
    c.corpus.image_size = c.encoder.image_size;
  }
  if (const json* s = top.sub("bimodal")) {
    Fields f(*s, "bimodal");
    f.get("steps", c.bimodal.steps);
    f.get("batch_size", c.bimodal.batch_size);
    f.get("tau", c.bimodal.tau);
    std::string pm = cg3d::to_string(c.bimodal.positive_mode);
    f.get("positive_mode", pm);
    c.bimodal.positive_mode = positive_mode_from(pm, "bimodal");
    optim_from(f.sub("optimizer"), c.bimodal.optimizer, "bimodal.optimizer");
    f.get("fresh_views", c.bimodal.fresh_views);
    std::string bm = cg3d::to_string(c.bimodal.image_mode);
    f.get("image_mode", bm);
    c.bimodal.image_mode = image_mode_from_string(bm);
    f.finish();
  }
  if (const json* s = top.sub("cg3d")) {
    Fields f(*s, "cg3d");
    f.get("steps", c.cg3d.steps);
    f.get("batch_size", c.cg3d.batch_size);
    f.get("tau", c.cg3d.tau);
    std::string pm = cg3d::to_string(c.cg3d.positive_mode);
    f.get("positive_mode", pm);
    c.cg3d.positive_mode = positive_mode_from(pm, "cg3d");
    f.get("n_points", c.cg3d.n_points);
    augment_from(f.sub("augment"), c.cg3d.augment, "cg3d.augment");
    optim_from(f.sub("optimizer_3d"), c.cg3d.optimizer_3d, "cg3d.optimizer_3d");
    optim_from(f.sub("optimizer_prompt"), c.cg3d.optimizer_prompt, "cg3d.optimizer_prompt");
    f.get("use_3d2d", c.cg3d.use_3d2d);
    f.get("use_3dtext", c.cg3d.use_3dtext);
    f.get("use_prompts", c.cg3d.use_prompts);
    f.get("fresh_views", c.cg3d.fresh_views);
    f.finish();
  }
  if (const json* s = top.sub("finetune")) {
    Fields f(*s, "finetune");
    f.get("steps", c.finetune.steps);
    f.get("batch_size", c.finetune.batch_size);
    f.get("n_points", c.finetune.n_points);
    f.get("train_fraction", c.finetune.train_fraction);
    augment_from(f.sub("augment"), c.finetune.augment, "finetune.augment");
    optim_from(f.sub("optimizer"), c.finetune.optimizer, "finetune.optimizer");
    f.finish();
  }
  if (const json* s = top.sub("probe")) {
    Fields f(*s, "probe");
    f.get("l2", c.probe.l2);
    f.get("max_iter", c.probe.max_iter);
    f.get("tol", c.probe.tol);
    f.finish();
  }
  if (const json* s = top.sub("scene")) {
    Fields f(*s, "scene");
    f.get("k", c.scene.k);
    f.get("strip_floor", c.scene.strip_floor);
    f.get("n_points", c.scene.n_points);
    f.get("query_template", c.scene.query_template);
    f.finish();
  }
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  const std::string text = io::read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
  return from_json(j);
}

std::string ExperimentConfig::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json().dump()) h = (h ^ ch) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cg3d
