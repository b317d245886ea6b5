#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <unistd.h>

#include "cg3d/corpus/corpus.hpp"
#include "cg3d/training/config.hpp"

namespace fixture {

// Small enough that a few dozen training steps run in well under a second.
inline cg3d::ExperimentConfig tiny_config() {
  cg3d::ExperimentConfig c;
  c.encoder.embed_dim = 16;
  c.encoder.image_size = 16;
  c.encoder.patch = 8;
  c.encoder.layers = 2;
  c.encoder.heads = 2;
  c.encoder.width = 32;
  c.encoder.n_prompt_tokens = 3;
  c.corpus.classes = {"sphere", "cube", "cone", "torus"};
  c.corpus.unseen = {"torus"};
  c.corpus.per_class = 10;
  c.corpus.n_points = 128;
  c.corpus.image_size = 16;
  c.corpus.seed = 3;
  c.bimodal.steps = 16;
  c.bimodal.batch_size = 8;
  c.cg3d.steps = 12;
  c.cg3d.batch_size = 8;
  c.cg3d.n_points = 64;
  c.cg3d.optimizer_3d.lr = 1e-3;
  c.finetune.steps = 40;
  c.finetune.batch_size = 8;
  c.finetune.n_points = 64;
  c.scene.n_points = 64;
  return c;
}

inline std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cg3d_test_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::create_directories(p);
  return p.string();
}

// Built once per test process.
inline const cg3d::Dataset& tiny_dataset() {
  static const std::unique_ptr<cg3d::Dataset> ds = [] {
    const auto cfg = tiny_config();
    const auto dir = temp_dir("tiny_corpus");
    auto m = cg3d::build_corpus(cfg.corpus, dir);
    auto vocab = cg3d::corpus_vocab(m, cfg.corpus.templates);
    return std::make_unique<cg3d::Dataset>(std::move(m), std::move(vocab));
  }();
  return *ds;
}

}  // namespace fixture
