#include "cg3d/training/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "cg3d/training/trainer.hpp"
#include "cg3d/util/error.hpp"

namespace cg3d {

std::vector<std::size_t> class_fraction(const Dataset& ds, std::span<const std::size_t> indices, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("train_fraction must be in (0, 1]");
  std::map<int, std::size_t> count, taken;
  for (auto i : indices) ++count[ds.label(i)];
  std::vector<std::size_t> out;
  for (auto i : indices) {
    const int c = ds.label(i);
    const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(count[c])));
    if (taken[c] < keep) {
      ++taken[c];
      out.push_back(i);
    }
  }
  return out;
}

namespace {

constexpr std::uint64_t kFinetuneTag = 0xF7;

double head_accuracy(Model<float>& model, const Dataset& ds, std::span<const std::size_t> idx,
                     const Linear<float>& head, const std::map<int, int>& col, int n_points) {
  if (idx.empty()) return 0.0;
  std::vector<PointCloud> clouds;
  for (auto i : idx) clouds.push_back(resample(ds.cloud(i), static_cast<std::size_t>(n_points), nullptr));
  const auto f = model.point_features(clouds);
  const std::size_t c_out = head.w.value.cols();
  std::size_t hit = 0;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::size_t best = 0;
    double bv = -1e300;
    for (std::size_t c = 0; c < c_out; ++c) {
      double v = head.b.value[c];
      for (std::size_t k = 0; k < f.cols(); ++k) v += static_cast<double>(f(r, k)) * head.w.value(k, c);
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    if (static_cast<int>(best) == col.at(ds.label(idx[r]))) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(idx.size());
}

}  // namespace

FinetuneResult finetune(const Dataset& ds, std::span<const std::size_t> train, std::span<const std::size_t> test,
                        const Checkpoint* init, const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const FinetuneConfig& fc = cfg.finetune;
  const auto& classes = ds.manifest().classes;
  if (init && init->classes != classes) throw ConfigError("finetune: checkpoint class list differs from the corpus");
  std::map<int, int> col;
  for (auto i : train) col.emplace(ds.label(i), 0);
  if (col.size() < 2) throw ConfigError("finetune: need at least two training classes");
  std::vector<int> labels;
  for (auto& [label, c] : col) {
    c = static_cast<int>(labels.size());
    labels.push_back(label);
  }
  for (auto i : test)
    if (!col.contains(ds.label(i)))
      throw ConfigError("finetune: label set mismatch, test class \"" +
                        classes[static_cast<std::size_t>(ds.label(i))] + "\" has no training records");

  Model<float> model = init ? init->model
                            : Model<float>(cfg.encoder, ds.vocab(), derive_seed(seed, {kFinetuneTag, 0}),
                                           cfg.point_encoder);
  for (auto g : kGroupNames) model.set_trainable(g, g == "enc_3d");
  Linear<float> head;
  Rng hr(derive_seed(seed, {kFinetuneTag, 1}));
  head.init("head", model.point->output_width(), labels.size(), hr);
  auto params = model.group("enc_3d");
  head.collect(params);
  Optimizer opt(fc.optimizer);

  FinetuneResult res{labels, 0, 0, {}, Checkpoint(model)};
  const BatchOptions bo{true, fc.n_points, fc.augment, cfg.encoder.text_len};
  for (long s = 0; s < fc.steps; ++s) {
    const auto us = static_cast<std::uint64_t>(s);
    Rng rng(derive_seed(seed, {kFinetuneTag, 2, us}));
    const auto idx = sample_without_replacement(train, static_cast<std::size_t>(fc.batch_size), rng);
    std::vector<PointCloud> clouds;
    std::vector<int> y;
    for (auto& smp : ds.batch(idx, bo, derive_seed(seed, {kFinetuneTag, 3, us}))) {
      clouds.push_back(std::move(smp.cloud));
      y.push_back(col.at(smp.label));
    }
    model.zero_grad();
    head.w.zero_grad();
    head.b.zero_grad();
    nn::Graph<float> g;
    auto feats = model.point->forward(g, stack_points<float>(clouds), clouds.size());
    auto loss = nn::ops::cross_entropy(g, head(g, feats), y);
    const float lv = g.value(loss)[0];
    if (!std::isfinite(lv)) throw DivergenceError("fine-tuning loss is not finite", s);
    g.backward(loss);
    opt.step(params, cosine_lr(fc.optimizer, s, fc.steps));
    res.losses.push_back(lv);
  }
  res.train_accuracy = head_accuracy(model, ds, train, head, col, fc.n_points);
  res.test_accuracy = head_accuracy(model, ds, test, head, col, fc.n_points);
  res.checkpoint = Checkpoint(std::move(model));
  res.checkpoint.classes = classes;
  res.checkpoint.step = fc.steps;
  res.checkpoint.stage = "finetune";
  res.checkpoint.config_digest = cfg.digest();
  res.checkpoint.extra = {head.w, head.b};
  res.checkpoint.meta = {{"seed", seed}, {"head_labels", labels}, {"from_checkpoint", init != nullptr}};
  return res;
}

int LinearProbe::predict(std::span<const double> x) const {
  const std::size_t d = mean.size(), c_out = b.size();
  std::size_t best = 0;
  double bv = -1e300;
  for (std::size_t c = 0; c < c_out; ++c) {
    double v = b[c];
    for (std::size_t k = 0; k < d; ++k) v += (x[k] - mean[k]) * inv_std[k] * w(k, c);
    if (v > bv) {
      bv = v;
      best = c;
    }
  }
  return labels[best];
}

double LinearProbe::accuracy(const nn::Tensor<double>& x, std::span<const int> y) const {
  if (x.rows() != y.size()) throw ConfigError("probe: feature and label counts differ");
  if (y.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t r = 0; r < y.size(); ++r) hit += predict(x.row(r)) == y[r];
  return static_cast<double>(hit) / static_cast<double>(y.size());
}

LinearProbe fit_linear_probe(const nn::Tensor<double>& x, std::span<const int> y, const ProbeConfig& cfg) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n != y.size()) throw ConfigError("probe: feature and label counts differ");
  if (!(cfg.l2 >= 0) || cfg.max_iter < 1 || !(cfg.tol > 0)) throw ConfigError("probe: bad l2/max_iter/tol");
  LinearProbe p;
  std::map<int, std::size_t> col;
  for (int v : y) col.emplace(v, 0);
  if (col.size() < 2) throw ConfigError("probe: need at least two classes, got " + std::to_string(col.size()));
  for (auto& [label, c] : col) {
    c = p.labels.size();
    p.labels.push_back(label);
  }
  const std::size_t k = p.labels.size();

  p.mean.assign(d, 0);
  p.inv_std.assign(d, 1);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) p.mean[j] += x(r, j);
  for (double& m : p.mean) m /= static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) {
    double var = 0;
    for (std::size_t r = 0; r < n; ++r) var += (x(r, j) - p.mean[j]) * (x(r, j) - p.mean[j]);
    var /= static_cast<double>(n);
    if (var > 1e-24) p.inv_std[j] = 1.0 / std::sqrt(var);
  }
  nn::Tensor<double> z(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) z(r, j) = (x(r, j) - p.mean[j]) * p.inv_std[j];

  // Largest eigenvalue of [z 1]^T [z 1] / n; the softmax Hessian is bounded
  // by half of it (plus l2).
  std::vector<double> v(d + 1, 1.0 / std::sqrt(static_cast<double>(d + 1))), av(d + 1);
  double lambda = 1;
  for (int it = 0; it < 100; ++it) {
    std::fill(av.begin(), av.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      double zr = v[d];
      for (std::size_t j = 0; j < d; ++j) zr += z(r, j) * v[j];
      for (std::size_t j = 0; j < d; ++j) av[j] += z(r, j) * zr;
      av[d] += zr;
    }
    double norm = 0;
    for (double& a : av) {
      a /= static_cast<double>(n);
      norm += a * a;
    }
    norm = std::sqrt(norm);
    if (norm == 0) break;
    lambda = norm;
    for (std::size_t j = 0; j <= d; ++j) v[j] = av[j] / norm;
  }
  const double lr = 1.0 / (0.5 * lambda * 1.05 + cfg.l2);

  p.w = nn::Tensor<double>(d, k);
  p.b.assign(k, 0);
  nn::Tensor<double> gw(d, k);
  std::vector<double> gb(k), prob(k);
  for (p.iterations = 0; p.iterations < cfg.max_iter; ++p.iterations) {
    gw.fill(0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      double mx = -1e300;
      for (std::size_t c = 0; c < k; ++c) {
        double s = p.b[c];
        for (std::size_t j = 0; j < d; ++j) s += z(r, j) * p.w(j, c);
        prob[c] = s;
        mx = std::max(mx, s);
      }
      double sum = 0;
      for (double& q : prob) sum += q = std::exp(q - mx);
      const std::size_t yc = col.at(y[r]);
      for (std::size_t c = 0; c < k; ++c) {
        const double gr = prob[c] / sum - (c == yc ? 1.0 : 0.0);
        gb[c] += gr;
        for (std::size_t j = 0; j < d; ++j) gw(j, c) += z(r, j) * gr;
      }
    }
    double g2 = 0;
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t c = 0; c < k; ++c) {
        gw(j, c) = gw(j, c) / static_cast<double>(n) + cfg.l2 * p.w(j, c);
        g2 += gw(j, c) * gw(j, c);
      }
    for (double& g : gb) {
      g /= static_cast<double>(n);
      g2 += g * g;
    }
    p.grad_norm = std::sqrt(g2);
    if (p.grad_norm < cfg.tol) break;
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t c = 0; c < k; ++c) p.w(j, c) -= lr * gw(j, c);
    for (std::size_t c = 0; c < k; ++c) p.b[c] -= lr * gb[c];
  }
  return p;
}

HeldOutProbe held_out_probe(Model<float>& model, const Dataset& ds, const Split& split, double fit_fraction,
                            bool use_prompts, const ProbeConfig& cfg) {
  std::vector<std::size_t> all = split.unseen_base;
  all.insert(all.end(), split.unseen.begin(), split.unseen.end());
  const auto fit = class_fraction(ds, all, fit_fraction);
  const std::set<std::size_t> in_fit(fit.begin(), fit.end());
  std::vector<std::size_t> eval;
  for (auto i : all)
    if (!in_fit.contains(i)) eval.push_back(i);
  if (eval.empty()) throw ConfigError("linear probe: no records left to evaluate");
  auto features = [&](const std::vector<std::size_t>& idx, std::vector<int>& y) {
    std::vector<DepthImage> imgs;
    for (auto i : idx) {
      imgs.push_back(ds.image(i));
      y.push_back(ds.label(i));
    }
    return model.image_features(imgs, use_prompts).cast<double>();
  };
  std::vector<int> ytr, yte;
  const auto xtr = features(fit, ytr), xte = features(eval, yte);
  const auto probe = fit_linear_probe(xtr, ytr, cfg);
  HeldOutProbe r;
  r.fit_records = fit.size();
  r.eval_records = eval.size();
  r.iterations = probe.iterations;
  r.train_accuracy = probe.accuracy(xtr, ytr);
  r.accuracy = probe.accuracy(xte, yte);
  return r;
}

}  // namespace cg3d
