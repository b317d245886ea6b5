#pragma once

#include <string>

#include <json.hpp>

#include "cg3d/corpus/corpus.hpp"
#include "cg3d/losses/nce.hpp"
#include "cg3d/model/config.hpp"

namespace cg3d {

enum class OptimKind { adamw, sgd };

struct OptimConfig {
  OptimKind kind = OptimKind::adamw;
  double lr = 5e-5;
  double weight_decay = 0.05;
  double min_lr = 1e-6;  // cosine floor
  double momentum = 0.9;  // sgd only
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // adamw only

  void validate(const std::string& where) const;
};

// Image-text pre-training of the stand-in frozen base.
struct BimodalConfig {
  int steps = 600;
  int batch_size = 32;
  double tau = 0.07;
  PositiveMode positive_mode = PositiveMode::by_class;
  OptimConfig optimizer{OptimKind::adamw, 1e-3, 0.05, 1e-6};
  // Re-render each sample from a random view every step instead of using
  // the stored image, with a random caption template.
  bool fresh_views = true;
  // Rendering used for fresh views; shaded splats stand in for photos.
  ImageMode image_mode = ImageMode::render;
};

struct Cg3dConfig {
  int steps = 1000;
  int batch_size = 32;
  double tau = 0.07;
  PositiveMode positive_mode = PositiveMode::by_class;
  int n_points = 256;
  AugmentConfig augment{};
  OptimConfig optimizer_3d{OptimKind::adamw, 5e-5, 0.05, 1e-6};
  OptimConfig optimizer_prompt{OptimKind::sgd, 2e-3, 1e-4, 1e-6};
  bool use_3d2d = true;
  bool use_3dtext = true;
  bool use_prompts = true;
  bool fresh_views = true;
};

struct FinetuneConfig {
  int steps = 300;
  int batch_size = 32;
  int n_points = 256;
  double train_fraction = 0.1;  // of each class's training records
  AugmentConfig augment{};
  OptimConfig optimizer{OptimKind::adamw, 1e-3, 0.05, 1e-6};
};

struct ProbeConfig {
  double l2 = 1e-3;
  int max_iter = 5000;
  double tol = 1e-5;
};

struct SceneConfig {
  int k = 3;
  bool strip_floor = true;
  int n_points = 256;  // per encoded cluster
  std::string query_template = "this is a {OBJECT}";
};

struct ExperimentConfig {
  EncoderConfig encoder{};
  std::string point_encoder = "pointnet";
  CorpusConfig corpus{};
  double test_fraction = 0.2;
  BimodalConfig bimodal{};
  Cg3dConfig cg3d{};
  FinetuneConfig finetune{};
  ProbeConfig probe{};
  SceneConfig scene{};

  void validate() const;
  nlohmann::json to_json() const;
  // Missing sections and keys keep defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  // Hex FNV-1a of the canonical JSON dump.
  std::string digest() const;
};

std::string to_string(PositiveMode m);
std::string to_string(OptimKind k);

}  // namespace cg3d
