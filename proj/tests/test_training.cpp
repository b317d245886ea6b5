#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <set>

#include "cg3d/losses/nce.hpp"
#include "cg3d/training/checkpoint.hpp"
#include "cg3d/training/downstream.hpp"
#include "cg3d/training/grad_check.hpp"
#include "cg3d/training/log.hpp"
#include "cg3d/training/optim.hpp"
#include "cg3d/training/trainer.hpp"
#include "cg3d/util/error.hpp"
#include "fixture.hpp"

using namespace cg3d;
using nlohmann::json;

namespace {

std::vector<std::size_t> all_of(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  auto out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

const Checkpoint& tiny_base() {
  static const Checkpoint ck = [] {
    const auto& ds = fixture::tiny_dataset();
    const auto s = split_manifest(ds.manifest(), 0.2);
    return pretrain_bimodal(ds, all_of(s.train, s.unseen_base), fixture::tiny_config(), 1);
  }();
  return ck;
}

std::vector<std::size_t> tiny_train() { return split_manifest(fixture::tiny_dataset().manifest(), 0.2).train; }

std::map<std::string, std::uint64_t> sums(Model<float>& m) {
  std::map<std::string, std::uint64_t> out;
  for (auto g : kGroupNames) out[std::string(g)] = checksum(m, g);
  return out;
}

}  // namespace

TEST_CASE("cosine schedule") {
  OptimConfig c{OptimKind::sgd, 2e-3, 1e-4, 1e-6};
  CHECK(cosine_lr(c, 0, 100) == doctest::Approx(2e-3).epsilon(1e-12));
  CHECK(cosine_lr(c, 100, 100) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(cosine_lr(c, 500, 100) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(cosine_lr(c, 50, 100) == doctest::Approx(1e-6 + (2e-3 - 1e-6) / 2).epsilon(1e-12));
  double last = 1;
  for (long s = 0; s <= 100; ++s) {
    const double lr = cosine_lr(c, s, 100);
    CHECK(lr <= last);
    last = lr;
  }
}

TEST_CASE("optimizers: single-step updates against hand computation") {
  nn::Parameter<float> p{"p", nn::Tensor<float>(1, 2, std::vector<float>{1.0f, -2.0f}), {}, true};
  p.grad = nn::Tensor<float>(1, 2, std::vector<float>{0.5f, 0.25f});
  nn::Parameter<float> frozen{"f", nn::Tensor<float>(1, 1, 3.0f), nn::Tensor<float>(1, 1, 1.0f), false};
  const ParamList<float> params{&p, &frozen};

  OptimConfig ac{OptimKind::adamw, 0.1, 0.05, 0};
  Optimizer adam(ac);
  adam.step(params, 0.1);
  // First bias-corrected step moves each weight by lr * (sign(g) + wd * w).
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * (1.0 + 0.05 * 1.0)).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(-2.0 - 0.1 * (1.0 + 0.05 * -2.0)).epsilon(1e-6));
  CHECK(frozen.value[0] == 3.0f);
  CHECK(adam.slots().size() == 1);
  CHECK(adam.slots().contains("p"));

  nn::Parameter<float> q{"q", nn::Tensor<float>(1, 1, 1.0f), nn::Tensor<float>(1, 1, 1.0f), true};
  Optimizer sgd(OptimConfig{OptimKind::sgd, 0.1, 0.0, 0, 0.9});
  sgd.step({&q}, 0.1);
  CHECK(q.value[0] == doctest::Approx(0.9f));
  sgd.step({&q}, 0.1);  // velocity 0.9 * 1 + 1
  CHECK(q.value[0] == doctest::Approx(0.9f - 0.19f));
  CHECK(sgd.steps() == 2);
  CHECK_THROWS_AS(sgd.reconfigure(ac), ConfigError);
}

TEST_CASE("optimizer state survives header + payload") {
  nn::Parameter<float> p{"p", nn::Tensor<float>(2, 3, 0.5f), nn::Tensor<float>(2, 3, 0.1f), true};
  Optimizer o(OptimConfig{});
  o.step({&p}, 1e-3);
  o.step({&p}, 1e-3);
  std::vector<float> payload;
  o.append_payload(payload);
  std::size_t pos = 0;
  const auto r = Optimizer::restore(o.config(), o.header(), payload, pos);
  CHECK(pos == payload.size());
  CHECK(r.steps() == 2);
  CHECK(r.slots().at("p").m == o.slots().at("p").m);
  CHECK(r.slots().at("p").v == o.slots().at("p").v);
}

TEST_CASE("training log: csv round trip and window means") {
  TrainingLog log;
  for (long s = 0; s < 6; ++s) {
    LogRow r;
    r.step = s;
    if (s % 2 == 0) {
      r.loss_3d = static_cast<float>(1.0 / (s + 1));
      r.lr_3d = 1e-3;
    } else {
      r.loss_p = 0.123456789f;
    }
    log.rows.push_back(r);
  }
  const auto text = log.csv();
  CHECK(text.rfind("step,loss_3d,loss_p,lr_3d,lr_p\n", 0) == 0);
  const auto back = TrainingLog::parse(text);
  CHECK(back.csv() == text);
  REQUIRE(back.rows.size() == log.rows.size());
  for (std::size_t i = 0; i < log.rows.size(); ++i) {
    CHECK(back.rows[i].step == log.rows[i].step);
    CHECK(back.rows[i].loss_3d.has_value() == log.rows[i].loss_3d.has_value());
    if (log.rows[i].loss_3d) CHECK(static_cast<float>(*back.rows[i].loss_3d) == static_cast<float>(*log.rows[i].loss_3d));
    if (log.rows[i].loss_p) CHECK(static_cast<float>(*back.rows[i].loss_p) == static_cast<float>(*log.rows[i].loss_p));
    CHECK(!back.rows[i].lr_p.has_value());
  }
  CHECK_THROWS_AS(TrainingLog::parse("step,loss_3d,loss_p,lr_3d,lr_p\n0,abc,,,\n"), FormatError);
  CHECK(*log.head_mean(&LogRow::loss_3d, 2) == doctest::Approx((1.0 + 1.0 / 3) / 2).epsilon(1e-6));
  CHECK(*log.tail_mean(&LogRow::loss_3d, 1) == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(!log.head_mean(&LogRow::lr_p, 3).has_value());
}

TEST_CASE("experiment config: json round trip, unknown keys, digest") {
  const auto c = fixture::tiny_config();
  const auto back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.digest() == c.digest());
  auto other = c;
  other.cg3d.steps += 1;
  CHECK(other.digest() != c.digest());

  auto j = c.to_json();
  j["cg3d"]["stepz"] = 3;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  json partial = {{"cg3d", {{"steps", 7}}}};
  const auto p = ExperimentConfig::from_json(partial);
  CHECK(p.cg3d.steps == 7);
  CHECK(p.cg3d.batch_size == 32);
  CHECK(p.cg3d.optimizer_prompt.lr == 2e-3);
  CHECK(p.cg3d.optimizer_3d.lr == 5e-5);

  auto bad = c;
  bad.cg3d.use_3d2d = bad.cg3d.use_3dtext = false;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.cg3d.tau = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("sample_without_replacement") {
  const std::vector<std::size_t> pool{5, 6, 7, 8, 9};
  Rng rng(1);
  const auto s = sample_without_replacement(pool, 3, rng);
  CHECK(s.size() == 3);
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 3);
  Rng r2(1);
  CHECK(sample_without_replacement(pool, 99, r2).size() == 5);
}

TEST_CASE("stage-0: base groups frozen, 3D groups trainable, deterministic") {
  const auto& ck = tiny_base();
  auto m = ck.model;
  for (auto g : kBaseGroups) CHECK(!m.trainable(g));
  for (auto g : {"enc_3d", "proj_3d", "prompts"}) CHECK(m.trainable(g));
  CHECK(ck.stage == "bimodal");

  const auto& ds = fixture::tiny_dataset();
  const auto s = split_manifest(ds.manifest(), 0.2);
  TrainingLog l1, l2;
  auto cfg = fixture::tiny_config();
  cfg.bimodal.steps = 4;
  auto a = pretrain_bimodal(ds, s.train, cfg, 9, &l1);
  auto b = pretrain_bimodal(ds, s.train, cfg, 9, &l2);
  CHECK(l1 == l2);
  CHECK(l1.rows.size() == 4);
  CHECK(l1.rows[0].loss_p.has_value());
  CHECK(sums(a.model) == sums(b.model));
}

TEST_CASE("CG3D: frozen groups, alternation and unit-norm embeddings") {
  const auto& ds = fixture::tiny_dataset();
  const auto cfg = fixture::tiny_config();
  Cg3dTrainer t(ds, tiny_train(), tiny_base(), cfg, 2);
  auto before = sums(t.model());
  const auto base = before;
  while (t.next_step() < t.total_steps()) {
    const bool even = t.next_step() % 2 == 0;
    const LogRow r = t.step();
    auto after = sums(t.model());
    for (auto g : kBaseGroups) CHECK(after[std::string(g)] == base.at(std::string(g)));
    if (even) {
      CHECK(r.loss_3d.has_value());
      CHECK(!r.loss_p.has_value());
      CHECK(after["enc_3d"] != before["enc_3d"]);
      CHECK(after["proj_3d"] != before["proj_3d"]);
      CHECK(after["prompts"] == before["prompts"]);
    } else {
      CHECK(r.loss_p.has_value());
      CHECK(!r.loss_3d.has_value());
      CHECK(after["prompts"] != before["prompts"]);
      CHECK(after["enc_3d"] == before["enc_3d"]);
      CHECK(after["proj_3d"] == before["proj_3d"]);
    }
    before = after;
  }
  CHECK_THROWS_AS(t.step(), ConfigError);

  const auto ck = t.checkpoint();
  CHECK(ck.optimizers.at("3d").slots().size() == 10);  // w and b of 4 linears in enc_3d, 1 in proj_3d
  std::vector<PointCloud> clouds;
  for (auto i : tiny_train()) clouds.push_back(resample(ds.cloud(i), 64, nullptr));
  const auto e = t.model().encode_points(clouds);
  for (std::size_t r = 0; r < e.rows(); ++r) {
    double n = 0;
    for (float v : e.row(r)) n += static_cast<double>(v) * v;
    CHECK(std::abs(std::sqrt(n) - 1) <= 1e-5);
  }
}

TEST_CASE("CG3D without prompts: odd steps leave everything untouched but are logged") {
  auto cfg = fixture::tiny_config();
  cfg.cg3d.use_prompts = false;
  cfg.cg3d.steps = 4;
  Cg3dTrainer t(fixture::tiny_dataset(), tiny_train(), tiny_base(), cfg, 2);
  CHECK(!t.model().trainable("prompts"));
  t.step();
  const auto s = sums(t.model());
  const auto r = t.step();
  CHECK(r.step == 1);
  CHECK(!r.loss_3d.has_value());
  CHECK(!r.loss_p.has_value());
  CHECK(sums(t.model()) == s);
  CHECK(t.log().rows.size() == 2);
}

TEST_CASE("CG3D: start checkpoint checks") {
  const auto& ds = fixture::tiny_dataset();
  const auto cfg = fixture::tiny_config();
  Checkpoint unfrozen = tiny_base();
  unfrozen.model.set_trainable("base_text", true);
  CHECK_THROWS_AS(Cg3dTrainer(ds, tiny_train(), unfrozen, cfg, 0), ConfigError);
  Checkpoint wrong_classes = tiny_base();
  wrong_classes.classes.pop_back();
  CHECK_THROWS_AS(Cg3dTrainer(ds, tiny_train(), wrong_classes, cfg, 0), ConfigError);

  Cg3dTrainer t(ds, tiny_train(), tiny_base(), cfg, 0);
  t.run(2);
  auto other = cfg;
  other.cg3d.batch_size = 4;
  CHECK_THROWS_AS(Cg3dTrainer(ds, tiny_train(), t.checkpoint(), other, 0), ConfigError);
}

TEST_CASE("CG3D: identical seeds give identical logs; resume matches bitwise") {
  const auto& ds = fixture::tiny_dataset();
  const auto cfg = fixture::tiny_config();
  Cg3dTrainer a(ds, tiny_train(), tiny_base(), cfg, 5), b(ds, tiny_train(), tiny_base(), cfg, 5);
  a.run(cfg.cg3d.steps);
  b.run(cfg.cg3d.steps);
  CHECK(a.log().csv() == b.log().csv());

  Cg3dTrainer c(ds, tiny_train(), tiny_base(), cfg, 6);
  c.run(cfg.cg3d.steps);
  CHECK(c.log().csv() != a.log().csv());

  Cg3dTrainer first(ds, tiny_train(), tiny_base(), cfg, 5);
  first.run(5);
  const auto path = fixture::temp_dir("resume") + "/half.ckpt";
  save_checkpoint(path, first.checkpoint());
  Cg3dTrainer second(ds, tiny_train(), load_checkpoint(path), cfg, 5);
  CHECK(second.next_step() == 5);
  second.run(cfg.cg3d.steps);
  TrainingLog joined = first.log();
  joined.rows.insert(joined.rows.end(), second.log().rows.begin(), second.log().rows.end());
  CHECK(joined.csv() == a.log().csv());
  CHECK(sums(second.model()) == sums(a.model()));
}

TEST_CASE("checkpoint: round trip reproduces outputs, corruption is detected") {
  const auto& ds = fixture::tiny_dataset();
  Cg3dTrainer t(ds, tiny_train(), tiny_base(), fixture::tiny_config(), 1);
  t.run(3);
  auto ck = t.checkpoint();
  ck.extra.push_back({"head.w", nn::Tensor<float>(2, 2, 0.25f), {}, true});
  const auto bytes = encode_checkpoint(ck);
  auto back = decode_checkpoint(bytes);
  CHECK(back.step == 3);
  CHECK(back.stage == "cg3d");
  CHECK(back.classes == ck.classes);
  CHECK(back.config_digest == ck.config_digest);
  CHECK(back.extra.size() == 1);
  CHECK(back.extra[0].value == ck.extra[0].value);
  CHECK(sums(back.model) == sums(ck.model));
  for (auto g : kGroupNames) CHECK(back.model.trainable(g) == ck.model.trainable(g));
  CHECK(back.optimizers.at("3d").steps() == ck.optimizers.at("3d").steps());

  std::vector<PointCloud> clouds{resample(ds.cloud(0), 64, nullptr)};
  std::vector<DepthImage> images{ds.image(0)};
  CHECK(back.model.encode_points(clouds) == ck.model.encode_points(clouds));
  CHECK(back.model.encode_images(images, true) == ck.model.encode_images(images, true));

  auto flipped = bytes;
  flipped[flipped.size() - 7] ^= 0x10;
  CHECK_THROWS_AS(decode_checkpoint(flipped), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), FormatError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), IoError);

  const auto path = fixture::temp_dir("ckpt") + "/c.ckpt";
  save_checkpoint(path, ck);
  const auto h = read_checkpoint_header(path);
  CHECK(h.at("stage") == "cg3d");
  CHECK(h.at("step") == 3);
}

TEST_CASE("class_fraction keeps the first ceil(f * n) per class") {
  const auto& ds = fixture::tiny_dataset();
  const auto train = tiny_train();  // 8 per seen class
  const auto tenth = class_fraction(ds, train, 0.1);
  CHECK(tenth.size() == 3);
  const auto quarter = class_fraction(ds, train, 0.25);
  CHECK(quarter.size() == 6);
  CHECK(std::is_sorted(quarter.begin(), quarter.end()));
}

TEST_CASE("finetune: fits a two-class subset; label mismatch is an error") {
  const auto& ds = fixture::tiny_dataset();
  const auto s = split_manifest(ds.manifest(), 0.2);
  std::vector<std::size_t> train, test;
  for (auto i : s.train)
    if (ds.label(i) <= 1) train.push_back(i);
  for (auto i : s.test_seen)
    if (ds.label(i) <= 1) test.push_back(i);
  auto cfg = fixture::tiny_config();
  cfg.finetune.augment = AugmentConfig::identity();
  cfg.finetune.optimizer.lr = 3e-3;
  cfg.finetune.steps = 60;
  const auto r = finetune(ds, train, test, nullptr, cfg, 4);
  CHECK(r.labels == std::vector<int>{0, 1});
  CHECK(r.train_accuracy == 1.0);
  CHECK(r.losses.size() == 60);
  CHECK(r.checkpoint.stage == "finetune");

  std::vector<std::size_t> other_test;
  for (auto i : s.test_seen)
    if (ds.label(i) == 2) other_test.push_back(i);
  CHECK_THROWS_AS(finetune(ds, train, other_test, nullptr, cfg, 4), ConfigError);
  std::vector<std::size_t> one_class;
  for (auto i : s.train)
    if (ds.label(i) == 0) one_class.push_back(i);
  CHECK_THROWS_AS(finetune(ds, one_class, {}, nullptr, cfg, 4), ConfigError);
}

TEST_CASE("linear probe: separable blobs, shuffled labels, errors") {
  Rng rng(3);
  const std::size_t n = 300, d = 5;
  nn::Tensor<double> x(n, d);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 3) * 2;
    for (std::size_t k = 0; k < d; ++k) x(i, k) = normal01(rng) * 0.3 + (k == i % 3 ? 4.0 : 0.0);
  }
  const auto probe = fit_linear_probe(x, y, ProbeConfig{});
  CHECK(probe.labels == std::vector<int>{0, 2, 4});
  CHECK(probe.accuracy(x, y) == 1.0);

  // Random labels on random features: held-out accuracy near chance.
  nn::Tensor<double> xr(2 * n, d);
  std::vector<int> yr(2 * n);
  for (auto& v : xr.storage()) v = normal01(rng);
  for (auto& v : yr) v = static_cast<int>(uniform_index(rng, 3));
  nn::Tensor<double> xa(n, d), xb(n, d);
  std::copy(xr.storage().begin(), xr.storage().begin() + n * d, xa.storage().begin());
  std::copy(xr.storage().begin() + n * d, xr.storage().end(), xb.storage().begin());
  const std::vector<int> ya(yr.begin(), yr.begin() + n), yb(yr.begin() + n, yr.end());
  const auto rp = fit_linear_probe(xa, ya, ProbeConfig{});
  CHECK(std::abs(rp.accuracy(xb, yb) - 1.0 / 3) < 0.1);

  const std::vector<int> single(n, 1);
  CHECK_THROWS_AS(fit_linear_probe(x, single, ProbeConfig{}), ConfigError);
  CHECK_THROWS_AS(fit_linear_probe(x, std::vector<int>(3, 0), ProbeConfig{}), ConfigError);
}

TEST_CASE("grad_check: error stays small across step sizes for a smooth function") {
  double a = 0.7, b = -1.3;
  std::vector<double*> coords{&a, &b};
  auto f = [&] { return std::sin(a) * std::exp(b) + a * a * b; };
  const std::vector<double> grad{std::cos(a) * std::exp(b) + 2 * a * b, std::sin(a) * std::exp(b) + a * a};
  for (double eps : {1e-3, 1e-4, 1e-5, 1e-6}) CHECK(grad_check(f, coords, grad, eps).max_rel_error < 1e-5);
  const std::vector<double> wrong{grad[0] * 1.01, grad[1]};
  CHECK(grad_check(f, coords, wrong, 1e-5).max_rel_error > 5e-3);
}

TEST_CASE("grad_check: unresolvable gradients are compared against the rounding noise") {
  // f = 1 + 1e-12 x: the slope sits far below eps_mach / eps.
  double x = 0.3;
  std::vector<double*> coords{&x};
  auto f = [&] { return 1.0 + 1e-12 * x; };
  const double noise = std::numeric_limits<double>::epsilon() / 1e-5;
  CHECK(grad_check(f, coords, std::vector<double>{1e-12}, 1e-5).max_rel_error < 1e-4);
  // Off by many noise units: still caught.
  CHECK(grad_check(f, coords, std::vector<double>{1e-12 + 100 * noise}, 1e-5).max_rel_error > 1e-3);
}

TEST_CASE("grad_check: L_3D and L_P through every encoder stay below 1e-3") {
  const auto cfg = fixture::tiny_config();
  const auto& ds = fixture::tiny_dataset();
  Model<double> m(cfg.encoder, ds.vocab(), 12);
  const std::vector<std::size_t> idx{0, 11, 22, 31};
  BatchOptions opt;
  opt.n_points = 32;
  const auto batch = ds.batch(idx, opt);
  std::vector<PointCloud> clouds;
  std::vector<DepthImage> images;
  std::vector<TokenSeq> tokens;
  std::vector<int> labels;
  for (const auto& s : batch) {
    clouds.push_back(s.cloud);
    images.push_back(s.image);
    tokens.push_back(s.tokens);
    labels.push_back(s.label);
  }
  auto loss = [&](nn::Graph<double>& g) {
    auto f3 = m.embed_points(g, clouds);
    auto f2 = m.embed_images(g, images, true);
    auto ft = m.embed_texts(g, tokens);
    auto l3 = nn::ops::add(g, pair_loss(g, f3, f2, labels, 0.07), pair_loss(g, f3, ft, labels, 0.07));
    return nn::ops::add(g, l3, pair_loss(g, f2, ft, labels, 0.07));
  };
  for (auto name : kGroupNames) {
    CAPTURE(name);
    const auto r = grad_check(loss, m.group(name), 1e-6, 64, 3);
    CHECK(r.coords > 0);
    CHECK(r.max_rel_error < 1e-3);
  }
}
