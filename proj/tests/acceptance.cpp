// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Thresholds and the toy configuration are fixed
// here; --seeds only exists to shorten local runs.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cg3d/corpus/corpus.hpp"
#include "cg3d/geometry/scene.hpp"
#include "cg3d/geometry/shapes.hpp"
#include "cg3d/inference/inference.hpp"
#include "cg3d/losses/nce.hpp"
#include "cg3d/training/checkpoint.hpp"
#include "cg3d/training/downstream.hpp"
#include "cg3d/training/grad_check.hpp"
#include "cg3d/training/trainer.hpp"
#include "oracles.hpp"

using namespace cg3d;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kLossGradTol = 1e-4;
constexpr double kEncoderGradTol = 1e-3;
constexpr double kGradSuiteSeconds = 120;
constexpr long kFreezeSteps = 500;
constexpr double kNormTol = 1e-5;
constexpr double kNceTol2 = 1e-5;
constexpr double kNceTol4 = 1e-9;
constexpr double kZeroShotMin = 0.70;
constexpr double kAblationSlack = 0.01;
constexpr double kRetrievalMin = 0.8;
constexpr double kSceneAriMin = 0.9;
constexpr double kSceneMatchMin = 0.85;
constexpr int kScenes = 20;
constexpr int kDbPerClass = 50;

double now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

template <typename... A>
void note(const char* fmt, A... a) {
  std::fprintf(stderr, fmt, a...);
  std::fputc('\n', stderr);
  std::fflush(stderr);
}

ExperimentConfig toy_config() {
  ExperimentConfig c;
  c.encoder.image_size = 32;
  c.encoder.patch = 8;
  c.corpus.image_size = 32;
  c.corpus.per_class = 200;
  c.bimodal.steps = 1200;
  c.cg3d.steps = 1800;
  c.cg3d.optimizer_3d.lr = 1e-3;
  return c;
}

struct Verdict {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<Verdict> verdicts;

void report(const std::string& name, bool pass, const std::string& detail) {
  verdicts.push_back({name, pass, detail});
  note("[%s] %s: %s", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt("%.3f", v[i]);
  return s + "]";
}

// Norm bookkeeping for every projected embedding produced by the run.
struct NormAudit {
  std::size_t rows = 0, bad = 0;
  double worst = 0;
  void add(const nn::Tensor<float>& t) {
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double n = 0;
      for (float v : t.row(r)) n += static_cast<double>(v) * v;
      const double dev = std::abs(std::sqrt(n) - 1);
      worst = std::max(worst, dev);
      ++rows;
      bad += dev > kNormTol;
    }
  }
} norms;

std::map<std::string, std::uint64_t> group_sums(Model<float>& m) {
  std::map<std::string, std::uint64_t> out;
  for (auto g : kGroupNames) out[std::string(g)] = checksum(m, g);
  return out;
}

// ---------------------------------------------------------------- gradients

nn::Tensor<double> random_rows(std::size_t n, std::size_t d, Rng& rng) {
  nn::Tensor<double> t(n, d);
  for (auto& v : t.storage()) v = normal01(rng);
  return t;
}

void gradient_suite() {
  const double t0 = now();
  double worst_loss = 0, worst_enc = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(seed);
    const std::size_t b = 3 + seed % 4;
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(uniform_index(rng, 3));
    nn::Parameter<double> pa{"a", random_rows(b, 6, rng), {}, true}, pb{"b", random_rows(b, 6, rng), {}, true},
        pc{"c", random_rows(b, 6, rng), {}, true};
    const ParamList<double> ps{&pa, &pb, &pc};
    using nn::ops::l2_normalize;
    const std::vector<std::function<nn::Var(nn::Graph<double>&)>> losses = {
        // nce alone: one direction of the pair.
        [&](nn::Graph<double>& g) {
          const auto a = l2_normalize(g, g.param(pa)), c = l2_normalize(g, g.param(pb));
          const auto full = pair_loss(g, a, c, labels, 0.07);
          const auto self = pair_loss(g, a, a, labels, 0.07);
          return nn::ops::add(g, full, self);
        },
        [&](nn::Graph<double>& g) {
          return pair_loss(g, l2_normalize(g, g.param(pa)), l2_normalize(g, g.param(pb)), labels, 0.07,
                           PositiveMode::instance);
        },
        [&](nn::Graph<double>& g) {  // L_3D
          const auto a = l2_normalize(g, g.param(pa));
          return nn::ops::add(g, pair_loss(g, a, l2_normalize(g, g.param(pb)), labels, 0.07),
                              pair_loss(g, a, l2_normalize(g, g.param(pc)), labels, 0.07));
        },
        [&](nn::Graph<double>& g) {  // L_P
          return pair_loss(g, l2_normalize(g, g.param(pb)), l2_normalize(g, g.param(pc)), labels, 0.07);
        }};
    for (const auto& f : losses) worst_loss = std::max(worst_loss, grad_check(f, ps, 1e-6).max_rel_error);

    // nce on the similarity block directly.
    nn::Tensor<double> a = random_rows(3, 4, rng), c = random_rows(3, 4, rng);
    SimilarityBlock<double> blk{nn::Tensor<double>(3, 3), positive_mask(std::span(labels).first(3), PositiveMode::by_class),
                                0.07};
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) blk.sim(i, j) = std::tanh(a(i, 0) * c(j, 1));
    nn::Tensor<double> gs;
    nce(blk, &gs);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < 9; ++i) {
      coords.push_back(&blk.sim[i]);
      analytic.push_back(gs[i]);
    }
    for (double eps : {1e-4, 1e-5})
      worst_loss = std::max(worst_loss, grad_check([&] { return nce(blk); }, coords, analytic, eps).max_rel_error);
  }

  const auto cfg = toy_config();
  const std::vector<std::string> caps{"this is a cube", "a photo of a sphere", "a 3d model of a cone"};
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    Model<double> m(cfg.encoder, Vocab::build(caps), 100 + seed);
    Rng rng(seed);
    std::vector<PointCloud> clouds;
    std::vector<DepthImage> images;
    std::vector<TokenSeq> tokens;
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) {
      const int cls = static_cast<int>(uniform_index(rng, 3));
      const char* names[] = {"cube", "sphere", "cone"};
      clouds.push_back(generate_shape(names[cls], 32, rng));
      images.push_back(project_depth(clouds.back(), ViewPose::random(rng), 32, 32));
      tokens.push_back(tokenize(caps[static_cast<std::size_t>(cls)], m.vocab, cfg.encoder.text_len));
      labels.push_back(cls);
    }
    auto loss = [&](nn::Graph<double>& g) {
      auto f3 = m.embed_points(g, clouds);
      auto f2 = m.embed_images(g, images, true);
      auto ft = m.embed_texts(g, tokens);
      auto l3 = nn::ops::add(g, pair_loss(g, f3, f2, labels, 0.07), pair_loss(g, f3, ft, labels, 0.07));
      return nn::ops::add(g, l3, pair_loss(g, f2, ft, labels, 0.07));
    };
    for (auto name : kGroupNames)
      worst_enc = std::max(worst_enc, grad_check(loss, m.group(name), 1e-6, 48, seed).max_rel_error);
  }
  const double secs = now() - t0;
  report("gradient suite",
         worst_loss < kLossGradTol && worst_enc < kEncoderGradTol && secs < kGradSuiteSeconds,
         "losses " + fmt("%.2e", worst_loss) + " (< 1e-4), through encoders " + fmt("%.2e", worst_enc) +
             " (< 1e-3), " + fmt("%.1f s", secs));
}

// ---------------------------------------------------------------- closed forms

void nce_oracle() {
  auto blk = [](std::size_t n, std::vector<double> s, double tau) {
    std::vector<std::uint8_t> m(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 1;
    return SimilarityBlock<double>{nn::Tensor<double>(n, n, std::move(s)), nn::Tensor<std::uint8_t>(n, n, m), tau};
  };
  const double v1 = nce(blk(1, {1.0}, 1.0));
  const double v2 = nce(blk(2, {1, 0, 0, 1}, 1.0));
  const double o2 = oracle::nce({{1, 0}, {0, 1}}, {{1, 0}, {0, 1}}, 1.0);
  double worst4 = 0;
  for (double tau : {0.01, 0.07, 0.5, 1.0, 3.0})
    worst4 = std::max(worst4, std::abs(nce(blk(4, std::vector<double>(16, 0.2), tau)) - std::log(4.0)));
  const bool ok = v1 == 0.0 && std::abs(v2 - 0.31326) < kNceTol2 && std::abs(v2 - o2) < 1e-12 && worst4 < kNceTol4;
  report("closed-form loss oracle", ok,
         "1x1 " + fmt("%.3g", v1) + ", 2x2 " + fmt("%.7f", v2) + ", 4-way max |L - ln 4| " + fmt("%.1e", worst4));
}

void kmeans_oracle() {
  int exact = 0;
  for (std::uint64_t inst = 0; inst < 10; ++inst) {
    Rng rng(5000 + inst);
    std::vector<Vec3> pts(30);
    for (auto& p : pts) p = {normal01(rng), normal01(rng), normal01(rng)};
    const int k = 2 + static_cast<int>(inst % 4);
    const auto got = kmeans(pts, k, inst);
    const auto want = oracle::brute_force_lloyd(pts, k, inst);
    exact += got.assignment == want.assign && got.centroids == want.cent;
  }
  report("k-means oracle", exact == 10, std::to_string(exact) + "/10 instances identical");
}

// ---------------------------------------------------------------- per seed

struct SeedResult {
  double zs_unseen = 0;
  double abl_single = 0, abl_both = 0, abl_prompts = 0;
  bool freeze_ok = true;
  std::string freeze_detail;
  double retrieval_p1 = 0, self_p1 = 0;
  std::vector<double> scene_ari;
  int scene_hits = 0, scene_pairs = 0;
  double ft_scratch[2] = {0, 0}, ft_cg3d[2] = {0, 0};
  double probe_base = 0, probe_prompt = 0;
};

struct Variant {
  bool use_3dtext, use_prompts;
};

Dataset load_dataset(const CorpusConfig& cc, const std::string& dir, const std::vector<std::string>& templates,
                     const Vocab* vocab = nullptr) {
  Manifest m = build_corpus(cc, dir);
  Vocab v = vocab ? *vocab : corpus_vocab(m, templates);
  return Dataset(std::move(m), std::move(v));
}

std::vector<std::size_t> concat(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Runs the full CG3D schedule, checking the freezing and alternation contract
// after every step and the stored checksums at every checkpoint.
Checkpoint train_checked(const Dataset& ds, const Split& sp, const Checkpoint& base, const ExperimentConfig& cfg,
                         std::uint64_t seed, const std::string& dir, SeedResult& r) {
  Cg3dTrainer t(ds, sp.train, base, cfg, seed);
  auto frozen = group_sums(t.model());
  auto before = frozen;
  long violations = 0, checked = 0, ck_checked = 0;
  while (t.next_step() < t.total_steps()) {
    const bool even = t.next_step() % 2 == 0;
    t.step();
    auto after = group_sums(t.model());
    ++checked;
    for (auto g : kBaseGroups) violations += after[std::string(g)] != frozen[std::string(g)];
    const bool moved_3d = after["enc_3d"] != before["enc_3d"] || after["proj_3d"] != before["proj_3d"];
    const bool moved_p = after["prompts"] != before["prompts"];
    violations += even ? (moved_p || !moved_3d) : (moved_3d || !moved_p);
    before = after;
    if (t.next_step() % 100 == 0) {
      const auto path = dir + "/cg3d_" + std::to_string(t.next_step()) + ".ckpt";
      save_checkpoint(path, t.checkpoint());
      const auto h = read_checkpoint_header(path);
      auto loaded = load_checkpoint(path);
      for (auto g : kBaseGroups) {
        const auto& gj = h.at("groups").at(std::string(g));
        char hex[17];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(frozen[std::string(g)]));
        violations += gj.at("checksum").get<std::string>() != hex;
        violations += gj.at("trainable").get<bool>();
        violations += checksum(loaded.model, g) != frozen[std::string(g)];
      }
      ++ck_checked;
      fs::remove(path);
    }
  }
  r.freeze_ok = violations == 0 && checked >= kFreezeSteps;
  r.freeze_detail = std::to_string(checked) + " steps, " + std::to_string(ck_checked) + " checkpoints, " +
                    std::to_string(violations) + " violations";
  return t.checkpoint();
}

void scene_eval(Model<float>& model, const ExperimentConfig& cfg, const std::vector<std::string>& classes,
                std::uint64_t seed, SeedResult& r) {
  for (int s = 0; s < kScenes; ++s) {
    Rng rng(derive_seed(seed, {0x5CE, static_cast<std::uint64_t>(s)}));
    // Three distinct classes on a triangle, 4 units apart.
    std::vector<std::string> pool = classes;
    std::vector<std::string> picked;
    for (int o = 0; o < 3; ++o) {
      const auto j = uniform_index(rng, pool.size());
      picked.push_back(pool[j]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    }
    std::vector<Placement> objs;
    const double a0 = uniform(rng, 0, 2 * std::numbers::pi);
    for (int o = 0; o < 3; ++o) {
      const double a = a0 + o * 2 * std::numbers::pi / 3;
      objs.push_back({generate_shape(picked[o], 600, rng), {2.4 * std::cos(a), 2.4 * std::sin(a), 0}, 1.0});
    }
    const SceneCloud scene = compose_scene(objs, true);
    ClusterSet cs = cluster_scene(scene, 3, seed, true);
    embed_clusters(cs, scene, model, cfg.scene.n_points);
    norms.add(cs.embeddings);

    std::vector<int> got, truth;
    std::map<int, std::map<int, int>> votes;  // cluster -> object -> count
    for (std::size_t i = 0; i < scene.size(); ++i) {
      if (cs.assignment[i] < 0 || scene.object_ids[i] == kFloorId) continue;
      got.push_back(cs.assignment[i]);
      truth.push_back(scene.object_ids[i]);
      ++votes[cs.assignment[i]][scene.object_ids[i]];
    }
    // Stray floor points count against the clustering.
    for (std::size_t i = 0; i < scene.size(); ++i)
      if (cs.assignment[i] >= 0 && scene.object_ids[i] == kFloorId) {
        got.push_back(cs.assignment[i]);
        truth.push_back(kFloorId);
      }
    r.scene_ari.push_back(adjusted_rand_index(got, truth));
    for (int o = 0; o < 3; ++o) {
      const auto ranked = scene_query(cs, model, render_caption(cfg.scene.query_template, picked[o]));
      const auto& v = votes[ranked[0].cluster];
      int best = -1, n = -1;
      for (const auto& [obj, c] : v)
        if (c > n) {
          best = obj;
          n = c;
        }
      r.scene_hits += best == o;
      ++r.scene_pairs;
    }
  }
}

SeedResult run_seed(std::uint64_t seed, const std::string& root) {
  SeedResult r;
  const auto cfg = toy_config();
  const std::string dir = root + "/seed" + std::to_string(seed);
  fs::create_directories(dir);
  double t0 = now();
  auto cc = cfg.corpus;
  cc.seed = seed;
  const Dataset ds = load_dataset(cc, dir + "/corpus", cfg.corpus.templates);
  const Manifest& m = ds.manifest();
  const Split sp = split_manifest(m, cfg.test_fraction);
  note("seed %llu: corpus %.0f s", static_cast<unsigned long long>(seed), now() - t0);

  t0 = now();
  const Checkpoint base = pretrain_bimodal(ds, concat(sp.train, sp.unseen_base), cfg, seed);
  note("seed %llu: stage-0 %.0f s", static_cast<unsigned long long>(seed), now() - t0);

  std::vector<std::string> seen;
  for (const auto& c : m.classes)
    if (!m.is_unseen(c)) seen.push_back(c);
  const auto held = concat(sp.test_seen, sp.unseen);

  t0 = now();
  Checkpoint full = train_checked(ds, sp, base, cfg, seed, dir, r);
  note("seed %llu: CG3D %.0f s", static_cast<unsigned long long>(seed), now() - t0);
  Model<float>& model = full.model;

  r.zs_unseen = zero_shot_accuracy(model, ds, sp.unseen, m.unseen, cfg.cg3d.n_points);
  r.abl_prompts = zero_shot_accuracy(model, ds, held, m.classes, cfg.cg3d.n_points);
  for (Variant v : {Variant{true, false}, Variant{false, false}}) {
    auto c2 = cfg;
    c2.cg3d.use_3dtext = v.use_3dtext;
    c2.cg3d.use_prompts = v.use_prompts;
    t0 = now();
    auto ck = pretrain_cg3d(ds, sp.train, base, c2, seed);
    const double acc = zero_shot_accuracy(ck.model, ds, held, m.classes, cfg.cg3d.n_points);
    (v.use_3dtext ? r.abl_both : r.abl_single) = acc;
    note("seed %llu: ablation run %.0f s", static_cast<unsigned long long>(seed), now() - t0);
  }

  // Embedding norms over the evaluation pipelines.
  {
    std::vector<PointCloud> clouds;
    std::vector<DepthImage> imgs;
    std::vector<std::string> caps;
    for (auto i : held) {
      clouds.push_back(resample(ds.cloud(i), static_cast<std::size_t>(cfg.cg3d.n_points), nullptr));
      imgs.push_back(ds.image(i));
      caps.push_back(m.records[i].caption);
    }
    norms.add(model.encode_points(clouds));
    norms.add(model.encode_images(imgs, true));
    norms.add(model.encode_images(imgs, false));
    norms.add(model.encode_captions(caps));
    norms.add(build_text_bank(model, m.classes).embeddings);
  }

  // Retrieval over a fresh database of seen-class objects.
  {
    CorpusConfig dbc = cfg.corpus;
    dbc.classes = seen;
    dbc.unseen.clear();
    dbc.per_class = kDbPerClass;
    dbc.seed = 1000 + seed;
    const Dataset db = load_dataset(dbc, dir + "/db", cfg.corpus.templates, &ds.vocab());
    std::vector<std::size_t> all(db.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto index = build_point_index(model, db, all, cfg.cg3d.n_points);
    norms.add(index.embeddings);
    std::map<std::string, std::string> cls;
    for (std::size_t i = 0; i < index.ids.size(); ++i) cls[index.ids[i]] = index.classes[i];
    int hits = 0, queries = 0;
    for (const auto& t : cfg.corpus.templates)
      for (const auto& c : seen) {
        const std::vector<std::string> q{render_caption(t, c)};
        const auto e = model.encode_captions(q);
        norms.add(e);
        hits += cls.at(retrieve(e.row(0), index, 1).at(0).id) == c;
        ++queries;
      }
    int self = 0;
    for (std::size_t i = 0; i < index.ids.size(); ++i) self += retrieve(index.embeddings.row(i), index, 1)[0].id == index.ids[i];
    r.retrieval_p1 = static_cast<double>(hits) / queries;
    r.self_p1 = static_cast<double>(self) / static_cast<double>(index.ids.size());
  }

  scene_eval(model, cfg, seen, seed, r);

  t0 = now();
  const double fractions[2] = {0.1, 0.2};
  for (int f = 0; f < 2; ++f) {
    const auto train = class_fraction(ds, sp.train, fractions[f]);
    r.ft_scratch[f] = finetune(ds, train, sp.test_seen, nullptr, cfg, seed).test_accuracy;
    r.ft_cg3d[f] = finetune(ds, train, sp.test_seen, &full, cfg, seed).test_accuracy;
  }
  note("seed %llu: fine-tuning %.0f s", static_cast<unsigned long long>(seed), now() - t0);

  Model<float> base_model = base.model;
  r.probe_base = held_out_probe(base_model, ds, sp, 0.5, false, cfg.probe).accuracy;
  r.probe_prompt = held_out_probe(model, ds, sp, 0.5, true, cfg.probe).accuracy;

  note("seed %llu: zs %.3f ablation %.3f/%.3f/%.3f retrieval %.3f self %.3f scenes %d/%d ft10 %.3f/%.3f ft20 %.3f/%.3f "
       "probe %.3f/%.3f",
       static_cast<unsigned long long>(seed), r.zs_unseen, r.abl_single, r.abl_both, r.abl_prompts, r.retrieval_p1,
       r.self_p1, r.scene_hits, r.scene_pairs, r.ft_scratch[0], r.ft_cg3d[0], r.ft_scratch[1], r.ft_cg3d[1],
       r.probe_base, r.probe_prompt);
  return r;
}

// Identical seeds give identical logs; a resumed run matches bitwise.
void determinism(const std::string& root) {
  auto cfg = toy_config();
  cfg.corpus.per_class = 40;
  cfg.bimodal.steps = 40;
  cfg.cg3d.steps = 60;
  auto cc = cfg.corpus;
  cc.seed = 77;
  const Dataset ds = load_dataset(cc, root + "/determinism", cfg.corpus.templates);
  const Split sp = split_manifest(ds.manifest(), cfg.test_fraction);
  TrainingLog b1, b2;
  const auto base = pretrain_bimodal(ds, concat(sp.train, sp.unseen_base), cfg, 3, &b1);
  const auto base2 = pretrain_bimodal(ds, concat(sp.train, sp.unseen_base), cfg, 3, &b2);
  auto m1 = base.model, m2 = base2.model;
  const bool stage0_same = b1.csv() == b2.csv() && group_sums(m1) == group_sums(m2);

  Cg3dTrainer a(ds, sp.train, base, cfg, 3), b(ds, sp.train, base, cfg, 3);
  a.run(cfg.cg3d.steps);
  b.run(cfg.cg3d.steps);
  const bool same = a.log().csv() == b.log().csv();

  Cg3dTrainer first(ds, sp.train, base, cfg, 3);
  first.run(31);
  const auto path = root + "/determinism/half.ckpt";
  save_checkpoint(path, first.checkpoint());
  Cg3dTrainer second(ds, sp.train, load_checkpoint(path), cfg, 3);
  second.run(cfg.cg3d.steps);
  TrainingLog joined = first.log();
  joined.rows.insert(joined.rows.end(), second.log().rows.begin(), second.log().rows.end());
  const bool resumed = joined.csv() == a.log().csv() && group_sums(second.model()) == group_sums(a.model());
  report("determinism & resume", stage0_same && same && resumed,
         std::string("stage-0 logs ") + (stage0_same ? "equal" : "differ") + ", CG3D logs " +
             (same ? "equal" : "differ") + ", resume at step 31 " + (resumed ? "bitwise equal" : "differs"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CG3D acceptance run"};
  int n_seeds = 3;
  std::string work = (fs::temp_directory_path() / "cg3d_acceptance").string();
  app.add_option("--seeds", n_seeds, "number of seeds (3 for the real run)")->check(CLI::Range(1, 3));
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);
  const double start = now();

  gradient_suite();
  nce_oracle();
  kmeans_oracle();

  std::vector<SeedResult> rs;
  for (int s = 0; s < n_seeds; ++s) rs.push_back(run_seed(static_cast<std::uint64_t>(s), work));
  auto col = [&](auto pick) {
    std::vector<double> v;
    for (const auto& r : rs) v.push_back(pick(r));
    return v;
  };

  {
    bool ok = true;
    std::string d;
    for (const auto& r : rs) {
      ok = ok && r.freeze_ok;
      d += (d.empty() ? "" : "; ") + r.freeze_detail;
    }
    report("freezing contract", ok, d);
  }
  report("unit-hypersphere contract", norms.bad == 0 && norms.rows > 0,
         std::to_string(norms.rows - norms.bad) + "/" + std::to_string(norms.rows) + " rows, worst |norm - 1| " +
             fmt("%.1e", norms.worst));

  const auto zs = col([](const SeedResult& r) { return r.zs_unseen; });
  report("toy zero-shot (unseen classes)", mean(zs) >= kZeroShotMin,
         "mean " + fmt("%.3f", mean(zs)) + " >= 0.70, per seed " + list(zs));

  const auto s1 = col([](const SeedResult& r) { return r.abl_single; });
  const auto s2 = col([](const SeedResult& r) { return r.abl_both; });
  const auto s3 = col([](const SeedResult& r) { return r.abl_prompts; });
  report("ablation ordering",
         mean(s1) <= mean(s2) + kAblationSlack && mean(s2) <= mean(s3) + kAblationSlack,
         "3D-2D only " + fmt("%.3f", mean(s1)) + " <= both " + fmt("%.3f", mean(s2)) + " <= both+prompts " +
             fmt("%.3f", mean(s3)) + " (1-point slack); per seed " + list(s1) + " " + list(s2) + " " + list(s3));

  const auto p1 = col([](const SeedResult& r) { return r.retrieval_p1; });
  const auto self = col([](const SeedResult& r) { return r.self_p1; });
  report("retrieval", mean(p1) >= kRetrievalMin && mean(self) == 1.0,
         "text P@1 " + fmt("%.3f", mean(p1)) + " >= 0.8 " + list(p1) + ", self P@1 " + fmt("%.3f", mean(self)));

  {
    std::vector<double> ari;
    int hits = 0, pairs = 0;
    for (const auto& r : rs) {
      ari.insert(ari.end(), r.scene_ari.begin(), r.scene_ari.end());
      hits += r.scene_hits;
      pairs += r.scene_pairs;
    }
    const double match = static_cast<double>(hits) / pairs;
    const double worst = *std::min_element(ari.begin(), ari.end());
    report("scene querying", worst >= kSceneAriMin && match >= kSceneMatchMin,
           "ARI >= 0.9 in every scene (min " + fmt("%.3f", worst) + ", mean " + fmt("%.3f", mean(ari)) +
               "), top cluster matches " + std::to_string(hits) + "/" + std::to_string(pairs) + " = " +
               fmt("%.3f", match) + " >= 0.85");
  }
  {
    const auto sc10 = col([](const SeedResult& r) { return r.ft_scratch[0]; });
    const auto cg10 = col([](const SeedResult& r) { return r.ft_cg3d[0]; });
    const auto sc20 = col([](const SeedResult& r) { return r.ft_scratch[1]; });
    const auto cg20 = col([](const SeedResult& r) { return r.ft_cg3d[1]; });
    report("data-scarcity trend", mean(cg10) >= mean(sc10) && mean(cg20) >= mean(sc20),
           "10%: CG3D " + fmt("%.3f", mean(cg10)) + " vs scratch " + fmt("%.3f", mean(sc10)) + "; 20%: CG3D " +
               fmt("%.3f", mean(cg20)) + " vs scratch " + fmt("%.3f", mean(sc20)));
  }
  {
    const auto pb = col([](const SeedResult& r) { return r.probe_base; });
    const auto pp = col([](const SeedResult& r) { return r.probe_prompt; });
    report("linear-probe trend", mean(pp) >= mean(pb),
           "prompt-tuned " + fmt("%.3f", mean(pp)) + " " + list(pp) + " vs stage-0 " + fmt("%.3f", mean(pb)) + " " +
               list(pb));
  }
  determinism(work);

  fs::remove_all(work);
  std::printf("CG3D acceptance (%d seed%s, %.0f s)\n", n_seeds, n_seeds == 1 ? "" : "s", now() - start);
  int failed = 0;
  for (const auto& v : verdicts) {
    std::printf("%s  %-32s %s\n", v.pass ? "PASS" : "FAIL", v.name.c_str(), v.detail.c_str());
    failed += !v.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(verdicts.size()) - failed, verdicts.size());
  return failed == 0 ? 0 : 1;
}
