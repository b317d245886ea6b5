#include "cg3d/training/trainer.hpp"

#include <cmath>
#include <limits>

#include "cg3d/losses/nce.hpp"
#include "cg3d/nn/ops.hpp"
#include "cg3d/util/error.hpp"

namespace cg3d {

namespace {

// Stream tags so the batch, augmentation and view draws of one step never
// share a generator.
constexpr std::uint64_t kBimodalTag = 0xB1;
constexpr std::uint64_t kCg3dTag = 0xC3;
constexpr std::uint64_t kPick = 0, kAugment = 1, kViews = 2;

ParamList<float> groups(Model<float>& m, std::initializer_list<std::string_view> names) {
  ParamList<float> out;
  for (auto n : names) {
    auto g = m.group(n);
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

std::vector<int> labels_of(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(ds.label(i));
  return out;
}

float scalar(nn::Graph<float>& g, nn::Var v) { return g.value(v)[0]; }

}  // namespace

std::vector<std::size_t> sample_without_replacement(std::span<const std::size_t> pool, std::size_t k, Rng& rng) {
  std::vector<std::size_t> v(pool.begin(), pool.end());
  k = std::min(k, v.size());
  for (std::size_t i = 0; i < k; ++i) std::swap(v[i], v[i + uniform_index(rng, v.size() - i)]);
  v.resize(k);
  return v;
}

std::vector<DepthImage> render_views(const Dataset& ds, std::span<const std::size_t> indices, ImageMode mode,
                                     int image_size, std::uint64_t seed) {
  std::vector<DepthImage> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    out.push_back(make_image(mode, ds.cloud(i), ViewPose::random(rng), image_size, image_size));
  }
  return out;
}

Checkpoint pretrain_bimodal(const Dataset& ds, std::span<const std::size_t> indices, const ExperimentConfig& cfg,
                            std::uint64_t seed, TrainingLog* log) {
  cfg.validate();
  if (indices.empty()) throw ConfigError("pretrain_bimodal: no training records");
  const BimodalConfig& bc = cfg.bimodal;
  Model<float> model(cfg.encoder, ds.vocab(), seed, cfg.point_encoder);
  for (auto g : kGroupNames) model.set_trainable(g, false);
  for (auto g : kBaseGroups) model.set_trainable(g, true);
  const auto params = groups(model, {"base_2d", "base_text", "proj_2d", "proj_text"});
  Optimizer opt(bc.optimizer);
  const auto& templates = cfg.corpus.templates;
  const auto& m = ds.manifest();

  for (long s = 0; s < bc.steps; ++s) {
    Rng rng(derive_seed(seed, {kBimodalTag, kPick, static_cast<std::uint64_t>(s)}));
    const auto idx = sample_without_replacement(indices, static_cast<std::size_t>(bc.batch_size), rng);
    const auto labels = labels_of(ds, idx);
    std::vector<DepthImage> images;
    std::vector<TokenSeq> tokens;
    if (bc.fresh_views) {
      images = render_views(ds, idx, bc.image_mode, cfg.encoder.image_size,
                            derive_seed(seed, {kBimodalTag, kViews, static_cast<std::uint64_t>(s)}));
      for (auto i : idx) {
        const auto& t = templates[uniform_index(rng, templates.size())];
        tokens.push_back(tokenize(render_caption(t, m.records[i].class_name), ds.vocab(), cfg.encoder.text_len));
      }
    } else {
      for (auto i : idx) {
        images.push_back(ds.image(i));
        tokens.push_back(tokenize(m.records[i].caption, ds.vocab(), cfg.encoder.text_len));
      }
    }
    model.zero_grad();
    nn::Graph<float> g;
    auto fi = model.embed_images(g, images, false);
    auto ft = model.embed_texts(g, tokens);
    auto loss = pair_loss<float>(g, fi, ft, labels, static_cast<float>(bc.tau), bc.positive_mode);
    const float lv = scalar(g, loss);
    if (!std::isfinite(lv)) throw DivergenceError("image-text loss is not finite", s);
    g.backward(loss);
    const double lr = cosine_lr(bc.optimizer, s, bc.steps);
    opt.step(params, lr);
    if (log) log->rows.push_back(LogRow{s, std::nullopt, lv, std::nullopt, lr});
  }

  for (auto g : kBaseGroups) model.set_trainable(g, false);
  for (auto g : {"enc_3d", "proj_3d", "prompts"}) model.set_trainable(g, true);
  Checkpoint ck(std::move(model));
  ck.classes = m.classes;
  ck.step = bc.steps;
  ck.stage = "bimodal";
  ck.config_digest = cfg.digest();
  ck.meta = {{"seed", seed}, {"image_mode", to_string(bc.image_mode)}};
  return ck;
}

Cg3dTrainer::Cg3dTrainer(const Dataset& ds, std::vector<std::size_t> train, Checkpoint start,
                         const ExperimentConfig& cfg, std::uint64_t seed)
    : ds_(ds),
      train_(std::move(train)),
      cfg_(cfg),
      seed_(seed),
      model_(std::move(start.model)),
      classes_(std::move(start.classes)),
      opt_3d_(cfg.cg3d.optimizer_3d),
      opt_prompt_(cfg.cg3d.optimizer_prompt) {
  cfg_.validate();
  if (train_.empty()) throw ConfigError("CG3D: no training records");
  for (auto g : kBaseGroups)
    if (model_.trainable(g))
      throw ConfigError("CG3D: group " + std::string(g) + " must be frozen (start from a stage-0 checkpoint)");
  if (classes_ != ds.manifest().classes) throw ConfigError("CG3D: checkpoint class list differs from the corpus");
  if (model_.vocab != ds.vocab()) throw ConfigError("CG3D: checkpoint vocabulary differs from the corpus");
  const auto& c = cfg_.cg3d;
  if (c.use_prompts && !model_.prompts.enabled())
    throw ConfigError("CG3D: use_prompts needs n_prompt_tokens > 0 in the encoder config");

  if (start.stage == "cg3d") {
    if (start.config_digest != cfg_.digest())
      throw ConfigError("CG3D resume: checkpoint config digest " + start.config_digest + " differs from " +
                        cfg_.digest());
    step_ = start.step;
    if (auto it = start.optimizers.find("3d"); it != start.optimizers.end()) {
      opt_3d_ = it->second;
      opt_3d_.reconfigure(c.optimizer_3d);
    }
    if (auto it = start.optimizers.find("prompt"); it != start.optimizers.end()) {
      opt_prompt_ = it->second;
      opt_prompt_.reconfigure(c.optimizer_prompt);
    }
  } else if (start.stage != "bimodal") {
    throw ConfigError("CG3D: cannot start from a \"" + start.stage + "\" checkpoint");
  }
  model_.set_trainable("enc_3d", true);
  model_.set_trainable("proj_3d", true);
  model_.set_trainable("prompts", c.use_prompts);

  // The text tower is frozen, so caption embeddings never change.
  text_row_.assign(ds.size(), std::numeric_limits<std::size_t>::max());
  std::vector<TokenSeq> toks;
  for (auto i : train_) {
    if (i >= ds.size()) throw ConfigError("CG3D: record index " + std::to_string(i) + " out of range");
    text_row_[i] = toks.size();
    toks.push_back(tokenize(ds.manifest().records[i].caption, ds.vocab(), cfg_.encoder.text_len));
  }
  text_cache_ = model_.encode_texts(toks);
}

Cg3dTrainer::Batch Cg3dTrainer::make_batch(long step, bool need_clouds) const {
  const auto& c = cfg_.cg3d;
  const auto s = static_cast<std::uint64_t>(step);
  Batch b;
  Rng rng(derive_seed(seed_, {kCg3dTag, kPick, s}));
  b.indices = sample_without_replacement(train_, static_cast<std::size_t>(c.batch_size), rng);
  b.labels = labels_of(ds_, b.indices);
  if (need_clouds) {
    BatchOptions opt{true, c.n_points, c.augment, cfg_.encoder.text_len};
    for (auto& smp : ds_.batch(b.indices, opt, derive_seed(seed_, {kCg3dTag, kAugment, s})))
      b.clouds.push_back(std::move(smp.cloud));
  }
  if (c.fresh_views) {
    b.images = render_views(ds_, b.indices, ds_.manifest().image_mode, cfg_.encoder.image_size,
                            derive_seed(seed_, {kCg3dTag, kViews, s}));
  } else {
    for (auto i : b.indices) b.images.push_back(ds_.image(i));
  }
  const std::size_t d = text_cache_.cols();
  b.text = nn::Tensor<float>(b.indices.size(), d);
  for (std::size_t r = 0; r < b.indices.size(); ++r) {
    auto src = text_cache_.row(text_row_[b.indices[r]]);
    std::copy(src.begin(), src.end(), b.text.row(r).begin());
  }
  return b;
}

LogRow Cg3dTrainer::step() {
  if (step_ >= total_steps()) throw ConfigError("CG3D: all " + std::to_string(total_steps()) + " steps are done");
  const auto& c = cfg_.cg3d;
  const auto tau = static_cast<float>(c.tau);
  LogRow row;
  row.step = step_;
  const bool even = step_ % 2 == 0;
  if (even) {
    Batch b = make_batch(step_, true);
    nn::Graph<float> g;
    auto f3d = model_.embed_points(g, b.clouds);
    nn::Var loss;
    if (c.use_3d2d) {
      auto f2d = g.constant(model_.encode_images(b.images, c.use_prompts));
      loss = pair_loss<float>(g, f3d, f2d, b.labels, tau, c.positive_mode);
    }
    if (c.use_3dtext) {
      auto ft = g.constant(b.text);
      auto lt = pair_loss<float>(g, f3d, ft, b.labels, tau, c.positive_mode);
      loss = loss.valid() ? nn::ops::add(g, loss, lt) : lt;
    }
    const float lv = scalar(g, loss);
    if (!std::isfinite(lv)) throw DivergenceError("L_3D is not finite", step_);
    model_.zero_grad();
    g.backward(loss);
    const double lr = cosine_lr(c.optimizer_3d, step_, c.steps);
    opt_3d_.step(groups(model_, {"enc_3d", "proj_3d"}), lr);
    row.loss_3d = lv;
    row.lr_3d = lr;
  } else if (c.use_prompts) {
    Batch b = make_batch(step_, false);
    nn::Graph<float> g;
    auto fi = model_.embed_images(g, b.images, true);
    auto ft = g.constant(b.text);
    auto loss = pair_loss<float>(g, fi, ft, b.labels, tau, c.positive_mode);
    const float lv = scalar(g, loss);
    if (!std::isfinite(lv)) throw DivergenceError("L_P is not finite", step_);
    model_.zero_grad();
    g.backward(loss);
    const double lr = cosine_lr(c.optimizer_prompt, step_, c.steps);
    opt_prompt_.step(model_.group("prompts"), lr);
    row.loss_p = lv;
    row.lr_p = lr;
  }
  ++step_;
  log_.rows.push_back(row);
  return row;
}

void Cg3dTrainer::run(long until, const std::function<void(const LogRow&)>& after_step) {
  until = std::min(until, total_steps());
  while (step_ < until) {
    const LogRow r = step();
    if (after_step) after_step(r);
  }
}

Checkpoint Cg3dTrainer::checkpoint() const {
  Checkpoint ck(model_);
  ck.classes = classes_;
  ck.step = step_;
  ck.stage = "cg3d";
  ck.config_digest = cfg_.digest();
  ck.optimizers.emplace("3d", opt_3d_);
  ck.optimizers.emplace("prompt", opt_prompt_);
  ck.meta = {{"seed", seed_},
             {"use_3d2d", cfg_.cg3d.use_3d2d},
             {"use_3dtext", cfg_.cg3d.use_3dtext},
             {"use_prompts", cfg_.cg3d.use_prompts}};
  return ck;
}

Checkpoint pretrain_cg3d(const Dataset& ds, std::span<const std::size_t> train, const Checkpoint& base,
                         const ExperimentConfig& cfg, std::uint64_t seed, TrainingLog* log) {
  Cg3dTrainer t(ds, {train.begin(), train.end()}, base, cfg, seed);
  t.run(t.total_steps());
  if (log) log->rows.insert(log->rows.end(), t.log().rows.begin(), t.log().rows.end());
  return t.checkpoint();
}

}  // namespace cg3d
