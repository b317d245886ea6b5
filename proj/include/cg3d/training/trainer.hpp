#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cg3d/corpus/corpus.hpp"
#include "cg3d/training/checkpoint.hpp"
#include "cg3d/training/config.hpp"
#include "cg3d/training/log.hpp"

namespace cg3d {

// The four groups that stand in for the frozen image-text model.
inline constexpr std::array<std::string_view, 4> kBaseGroups = {"base_2d", "base_text", "proj_2d", "proj_text"};

// Up to k distinct items of `pool` by partial Fisher-Yates; all of them when
// k >= pool.size().
std::vector<std::size_t> sample_without_replacement(std::span<const std::size_t> pool, std::size_t k, Rng& rng);

// Images of the given records from a fresh random view each, drawn from
// derive_seed(seed, {record index}).
std::vector<DepthImage> render_views(const Dataset& ds, std::span<const std::size_t> indices, ImageMode mode,
                                     int image_size, std::uint64_t seed);

// Trains base_2d, base_text, proj_2d and proj_text on image-caption pairs of
// `indices` with the symmetric pair loss, then marks them frozen. Throws
// DivergenceError on a non-finite loss.
Checkpoint pretrain_bimodal(const Dataset& ds, std::span<const std::size_t> indices, const ExperimentConfig& cfg,
                            std::uint64_t seed, TrainingLog* log = nullptr);

// Alternating CG3D optimisation over a fixed set of training records. Even
// global steps minimise L_3D with the 3D optimiser on {enc_3d, proj_3d}; odd
// steps minimise L_P with the prompt optimiser on {prompts}, or do nothing
// when prompts are off.
class Cg3dTrainer {
 public:
  // `start` is either a stage-0 checkpoint (fresh run) or a CG3D checkpoint
  // written by checkpoint() (resume).
  Cg3dTrainer(const Dataset& ds, std::vector<std::size_t> train, Checkpoint start, const ExperimentConfig& cfg,
              std::uint64_t seed);

  long next_step() const noexcept { return step_; }
  long total_steps() const noexcept { return cfg_.cg3d.steps; }
  Model<float>& model() noexcept { return model_; }
  const TrainingLog& log() const noexcept { return log_; }

  // Runs global step next_step() and advances.
  LogRow step();
  // Steps until next_step() == until (capped at total_steps()).
  void run(long until, const std::function<void(const LogRow&)>& after_step = {});
  Checkpoint checkpoint() const;

 private:
  struct Batch {
    std::vector<std::size_t> indices;
    std::vector<int> labels;
    std::vector<PointCloud> clouds;
    std::vector<DepthImage> images;
    nn::Tensor<float> text;  // cached caption embeddings
  };
  Batch make_batch(long step, bool need_clouds) const;

  const Dataset& ds_;
  std::vector<std::size_t> train_;
  ExperimentConfig cfg_;
  std::uint64_t seed_;
  Model<float> model_;
  std::vector<std::string> classes_;
  Optimizer opt_3d_, opt_prompt_;
  long step_ = 0;
  TrainingLog log_;
  std::vector<std::size_t> text_row_;  // record index -> row in text_cache_
  nn::Tensor<float> text_cache_;
};

// Convenience: a full run from a stage-0 checkpoint.
Checkpoint pretrain_cg3d(const Dataset& ds, std::span<const std::size_t> train, const Checkpoint& base,
                         const ExperimentConfig& cfg, std::uint64_t seed, TrainingLog* log = nullptr);

}  // namespace cg3d
