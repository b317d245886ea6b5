#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cg3d/corpus/corpus.hpp"
#include "cg3d/geometry/pc_io.hpp"
#include "cg3d/inference/inference.hpp"
#include "cg3d/service/service.hpp"
#include "cg3d/training/checkpoint.hpp"
#include "cg3d/training/downstream.hpp"
#include "cg3d/training/trainer.hpp"
#include "cg3d/util/binary_io.hpp"
#include "cg3d/util/error.hpp"

using namespace cg3d;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string data;
  std::string ckpt;

  ExperimentConfig load() const { return config.empty() ? ExperimentConfig{} : ExperimentConfig::load(config); }
};

void add_common(CLI::App* sub, Common& c, bool data, bool ckpt) {
  sub->add_option("--config", c.config, "experiment config (JSON)");
  sub->add_option("--seed", c.seed, "random seed");
  if (data) sub->add_option("--data", c.data, "corpus directory (manifest.jsonl)")->required();
  if (ckpt) sub->add_option("--ckpt", c.ckpt, "checkpoint")->required();
}

Manifest manifest_in(const std::string& dir) { return read_manifest((fs::path(dir) / "manifest.jsonl").string()); }

std::vector<std::size_t> concat(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<std::size_t> pick_split(const Split& sp, const std::string& name) {
  if (name == "train") return sp.train;
  if (name == "test_seen") return sp.test_seen;
  if (name == "unseen") return sp.unseen;
  if (name == "held_out") return concat(sp.test_seen, sp.unseen);
  throw ConfigError("unknown split \"" + name + "\" (train, test_seen, unseen, held_out)");
}

std::vector<std::string> seen_classes(const Manifest& m) {
  std::vector<std::string> out;
  for (const auto& c : m.classes)
    if (!m.is_unseen(c)) out.push_back(c);
  return out;
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive 3D-image-text pre-training toolkit"};
  app.require_subcommand(1);

  Common gen;
  std::string gen_out;
  auto* s_gen = app.add_subcommand("gen-data", "generate the procedural triplet corpus");
  add_common(s_gen, gen, false, false);
  s_gen->add_option("--out", gen_out, "output directory")->required();

  Common bim;
  std::string bim_out, bim_log;
  auto* s_bim = app.add_subcommand("pretrain-bimodal", "image-text pre-training of the frozen base");
  add_common(s_bim, bim, true, false);
  s_bim->add_option("--out", bim_out, "checkpoint to write")->required();
  s_bim->add_option("--log", bim_log, "training log CSV");

  Common pre;
  std::string pre_base, pre_out, pre_log, pre_resume;
  long pre_until = -1;
  auto* s_pre = app.add_subcommand("pretrain", "CG3D pre-training of the 3D encoder and prompts");
  add_common(s_pre, pre, true, false);
  auto* o_base = s_pre->add_option("--base", pre_base, "stage-0 checkpoint");
  auto* o_resume = s_pre->add_option("--resume", pre_resume, "CG3D checkpoint to continue from");
  o_base->excludes(o_resume);
  s_pre->add_option("--out", pre_out, "checkpoint to write")->required();
  s_pre->add_option("--log", pre_log, "training log CSV (steps run by this invocation)");
  s_pre->add_option("--until", pre_until, "stop after this global step count");

  Common zs;
  std::string zs_split = "unseen", zs_pc;
  std::vector<std::string> zs_classes;
  auto* s_zs = app.add_subcommand("zeroshot", "zero-shot classification against class prompts");
  add_common(s_zs, zs, false, true);
  s_zs->add_option("--data", zs.data, "corpus directory");
  s_zs->add_option("--split", zs_split, "train | test_seen | unseen | held_out");
  s_zs->add_option("--classes", zs_classes, "class names for the bank (default: split's classes)")->delimiter(',');
  s_zs->add_option("--pc", zs_pc, "classify one point cloud file instead");

  Common ret;
  std::string ret_text, ret_pc, ret_image, ret_split = "test_seen";
  std::size_t ret_topk = 5;
  auto* s_ret = app.add_subcommand("retrieve", "rank corpus point clouds for a text, image or point query");
  add_common(s_ret, ret, true, true);
  auto* q_text = s_ret->add_option("--text", ret_text, "text query");
  auto* q_pc = s_ret->add_option("--pc", ret_pc, "point cloud query file");
  auto* q_img = s_ret->add_option("--image", ret_image, "depth image query file (.dpth)");
  q_text->excludes(q_pc)->excludes(q_img);
  q_pc->excludes(q_img);
  s_ret->add_option("--split", ret_split, "database split");
  s_ret->add_option("--topk", ret_topk, "number of hits");

  Common sq;
  std::string sq_scene, sq_text;
  int sq_k = -1;
  bool sq_keep_floor = false;
  auto* s_sq = app.add_subcommand("scene-query", "cluster a scene and rank clusters for a text query");
  add_common(s_sq, sq, false, true);
  s_sq->add_option("--scene", sq_scene, "scene point cloud (.pcld or .xyz)")->required();
  s_sq->add_option("--text", sq_text, "query text")->required();
  s_sq->add_option("--k", sq_k, "number of clusters (default from config)");
  s_sq->add_flag("--keep-floor", sq_keep_floor, "do not strip floor/ceiling points");

  Common ft;
  double ft_fraction = -1;
  std::string ft_out;
  auto* s_ft = app.add_subcommand("finetune", "supervised fine-tuning of the 3D encoder on seen classes");
  add_common(s_ft, ft, true, false);
  s_ft->add_option("--ckpt", ft.ckpt, "start from this checkpoint (default: from scratch)");
  s_ft->add_option("--fraction", ft_fraction, "fraction of each class's training records");
  s_ft->add_option("--out", ft_out, "write the fine-tuned checkpoint");

  Common lp;
  bool lp_prompts = false;
  double lp_train = 0.5;
  auto* s_lp = app.add_subcommand("linear-probe", "logistic regression on image features of held-out classes");
  add_common(s_lp, lp, true, true);
  s_lp->add_flag("--prompts", lp_prompts, "use the prompt-tuned image pathway");
  s_lp->add_option("--train-fraction", lp_train, "per-class share of records used to fit");

  Common ex;
  std::string ex_out;
  std::vector<std::string> ex_mod{"3d"};
  bool ex_prompts = false;
  auto* s_ex = app.add_subcommand("export-embeddings", "write projected embeddings as CSV");
  add_common(s_ex, ex, true, true);
  s_ex->add_option("--out", ex_out, "CSV path")->required();
  s_ex->add_option("--modality", ex_mod, "3d, image, text")->delimiter(',');
  s_ex->add_flag("--prompts", ex_prompts, "image embeddings through the prompt pathway");

  Common sv;
  int sv_port = 8080;
  std::string sv_host = "0.0.0.0";
  std::size_t sv_max = 2'000'000;
  auto* s_sv = app.add_subcommand("serve", "HTTP scene query service");
  add_common(s_sv, sv, false, true);
  s_sv->add_option("--port", sv_port, "port")->required();
  s_sv->add_option("--host", sv_host, "bind address");
  s_sv->add_option("--max-points", sv_max, "largest accepted scene");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*s_gen) {
      auto cfg = gen.load();
      cfg.corpus.seed = gen.seed;
      const Manifest m = build_corpus(cfg.corpus, gen_out);
      print({{"records", m.records.size()}, {"classes", m.classes}, {"unseen", m.unseen}, {"dir", gen_out}});
    } else if (*s_bim) {
      const auto cfg = bim.load();
      const Manifest m = manifest_in(bim.data);
      Dataset ds(m, corpus_vocab(m, cfg.corpus.templates));
      const Split sp = split_manifest(m, cfg.test_fraction);
      TrainingLog log;
      const Checkpoint ck = pretrain_bimodal(ds, concat(sp.train, sp.unseen_base), cfg, bim.seed, &log);
      save_checkpoint(bim_out, ck);
      if (!bim_log.empty()) log.write(bim_log);
      print({{"checkpoint", bim_out},
             {"steps", ck.step},
             {"loss_first20", *log.head_mean(&LogRow::loss_p, 20)},
             {"loss_last20", *log.tail_mean(&LogRow::loss_p, 20)}});
    } else if (*s_pre) {
      const auto cfg = pre.load();
      if (pre_base.empty() == pre_resume.empty()) throw ConfigError("pretrain needs exactly one of --base, --resume");
      Checkpoint start = load_checkpoint(pre_base.empty() ? pre_resume : pre_base);
      const Manifest m = manifest_in(pre.data);
      Dataset ds(m, start.model.vocab);
      const Split sp = split_manifest(m, cfg.test_fraction);
      Cg3dTrainer tr(ds, sp.train, std::move(start), cfg, pre.seed);
      tr.run(pre_until < 0 ? tr.total_steps() : pre_until);
      save_checkpoint(pre_out, tr.checkpoint());
      if (!pre_log.empty()) tr.log().write(pre_log);
      json out{{"checkpoint", pre_out}, {"step", tr.next_step()}};
      if (auto v = tr.log().tail_mean(&LogRow::loss_3d, 20)) out["loss_3d_last20"] = *v;
      if (auto v = tr.log().tail_mean(&LogRow::loss_p, 20)) out["loss_p_last20"] = *v;
      out["zero_shot_unseen"] = zero_shot_accuracy(tr.model(), ds, sp.unseen, m.unseen, cfg.cg3d.n_points);
      print(out);
    } else if (*s_zs) {
      const auto cfg = zs.load();
      Checkpoint ck = load_checkpoint(zs.ckpt);
      if (!zs_pc.empty()) {
        std::vector<std::string> classes = zs_classes.empty() ? ck.classes : zs_classes;
        const auto bank = build_text_bank(ck.model, classes);
        const PointCloud pc = normalize_unit_sphere(read_point_cloud(zs_pc));
        const auto r = zero_shot_classify(ck.model, std::span<const PointCloud>(&pc, 1), bank, cfg.cg3d.n_points)[0];
        print({{"label", classes[static_cast<std::size_t>(r.label)]}, {"classes", classes}, {"scores", r.scores}});
      } else {
        if (zs.data.empty()) throw ConfigError("zeroshot needs --data or --pc");
        const Manifest m = manifest_in(zs.data);
        Dataset ds(m, ck.model.vocab);
        const auto idx = pick_split(split_manifest(m, cfg.test_fraction), zs_split);
        std::vector<std::string> classes = zs_classes;
        if (classes.empty()) {
          if (zs_split == "unseen") classes = m.unseen;
          else if (zs_split == "held_out") classes = m.classes;
          else classes = seen_classes(m);
        }
        print({{"split", zs_split},
               {"records", idx.size()},
               {"classes", classes},
               {"accuracy", zero_shot_accuracy(ck.model, ds, idx, classes, cfg.cg3d.n_points)}});
      }
    } else if (*s_ret) {
      const auto cfg = ret.load();
      Checkpoint ck = load_checkpoint(ret.ckpt);
      const Manifest m = manifest_in(ret.data);
      Dataset ds(m, ck.model.vocab);
      const auto idx = pick_split(split_manifest(m, cfg.test_fraction), ret_split);
      const auto index = build_point_index(ck.model, ds, idx, cfg.cg3d.n_points);
      nn::Tensor<float> q;
      if (!ret_text.empty()) {
        q = ck.model.encode_captions(std::span<const std::string>(&ret_text, 1));
      } else if (!ret_pc.empty()) {
        const PointCloud pc = resample(normalize_unit_sphere(read_point_cloud(ret_pc)),
                                       static_cast<std::size_t>(cfg.cg3d.n_points), nullptr);
        q = ck.model.encode_points(std::span<const PointCloud>(&pc, 1));
      } else if (!ret_image.empty()) {
        const DepthImage img = read_depth_image(ret_image);
        q = ck.model.encode_images(std::span<const DepthImage>(&img, 1), ck.meta.value("use_prompts", false));
      } else {
        throw ConfigError("retrieve needs one of --text, --pc, --image");
      }
      json hits = json::array();
      for (const auto& h : retrieve(q.row(0), index, ret_topk))
        hits.push_back({{"rank", h.rank}, {"id", h.id}, {"similarity", h.similarity}});
      print({{"database", ret_split}, {"size", index.ids.size()}, {"hits", hits}});
    } else if (*s_sq) {
      const auto cfg = sq.load();
      Checkpoint ck = load_checkpoint(sq.ckpt);
      SceneService svc(std::move(ck.model), {std::numeric_limits<std::size_t>::max(), cfg.scene.n_points});
      const auto bytes = io::read_file(sq_scene);
      auto up = svc.upload(std::string_view(bytes.data(), bytes.size()));
      if (up.status != 200) throw FormatError(sq_scene + ": " + json::parse(up.body)["error"].get<std::string>(), 0);
      const auto id = json::parse(up.body)["scene_id"].get<std::string>();
      const json creq{{"k", sq_k < 0 ? cfg.scene.k : sq_k},
                      {"seed", sq.seed},
                      {"strip_floor", sq_keep_floor ? false : cfg.scene.strip_floor}};
      auto cl = svc.cluster(id, creq.dump());
      if (cl.status != 200) throw ConfigError(json::parse(cl.body)["error"].get<std::string>());
      auto qr = svc.query(id, json{{"text", sq_text}}.dump());
      if (qr.status != 200) throw ConfigError(json::parse(qr.body)["error"].get<std::string>());
      print({{"clusters", json::parse(cl.body)["clusters"]}, {"ranking", json::parse(qr.body)}});
    } else if (*s_ft) {
      auto cfg = ft.load();
      if (ft_fraction > 0) cfg.finetune.train_fraction = ft_fraction;
      std::optional<Checkpoint> init;
      if (!ft.ckpt.empty()) init = load_checkpoint(ft.ckpt);
      const Manifest m = manifest_in(ft.data);
      Dataset ds(m, init ? init->model.vocab : corpus_vocab(m, cfg.corpus.templates));
      const Split sp = split_manifest(m, cfg.test_fraction);
      const auto train = class_fraction(ds, sp.train, cfg.finetune.train_fraction);
      const auto r = finetune(ds, train, sp.test_seen, init ? &*init : nullptr, cfg, ft.seed);
      if (!ft_out.empty()) save_checkpoint(ft_out, r.checkpoint);
      print({{"from_checkpoint", init.has_value()},
             {"train_records", train.size()},
             {"train_accuracy", r.train_accuracy},
             {"test_accuracy", r.test_accuracy}});
    } else if (*s_lp) {
      const auto cfg = lp.load();
      Checkpoint ck = load_checkpoint(lp.ckpt);
      const Manifest m = manifest_in(lp.data);
      Dataset ds(m, ck.model.vocab);
      const Split sp = split_manifest(m, cfg.test_fraction);
      const auto r = held_out_probe(ck.model, ds, sp, lp_train, lp_prompts, cfg.probe);
      print({{"prompts", lp_prompts},
             {"fit_records", r.fit_records},
             {"eval_records", r.eval_records},
             {"iterations", r.iterations},
             {"train_accuracy", r.train_accuracy},
             {"accuracy", r.accuracy}});
    } else if (*s_ex) {
      const auto cfg = ex.load();
      Checkpoint ck = load_checkpoint(ex.ckpt);
      const Manifest m = manifest_in(ex.data);
      Dataset ds(m, ck.model.vocab);
      export_embeddings(ck.model, ds, ex_mod, ex_out, cfg.cg3d.n_points, ex_prompts);
      print({{"out", ex_out}, {"records", ds.size()}, {"modalities", ex_mod}});
    } else if (*s_sv) {
      const auto cfg = sv.load();
      Checkpoint ck = load_checkpoint(sv.ckpt);
      SceneService svc(std::move(ck.model), {sv_max, cfg.scene.n_points});
      std::fprintf(stderr, "serving %s on %s:%d\n", sv.ckpt.c_str(), sv_host.c_str(), sv_port);
      run_server(svc, sv_host, sv_port);
    }
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
