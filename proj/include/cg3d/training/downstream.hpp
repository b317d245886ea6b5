#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cg3d/corpus/corpus.hpp"
#include "cg3d/training/checkpoint.hpp"
#include "cg3d/training/config.hpp"

namespace cg3d {

// The first ceil(fraction * n_c) entries of `indices` for each class c, in
// their original order.
std::vector<std::size_t> class_fraction(const Dataset& ds, std::span<const std::size_t> indices, double fraction);

struct FinetuneResult {
  std::vector<int> labels;  // dataset label of each head output
  double train_accuracy = 0;
  double test_accuracy = 0;
  std::vector<double> losses;  // per step
  Checkpoint checkpoint;       // stage "finetune"; head in `extra`
};

// Linear head on the point encoder features, trained jointly with enc_3d by
// cross-entropy. `init` == nullptr trains from scratch (point encoder drawn
// from `seed`); otherwise enc_3d starts from the checkpoint. Head init and
// batch order depend only on `seed`, so both arms see the same stream.
// Throws ConfigError when test labels are missing from the training labels,
// when fewer than two classes train, or when the checkpoint's class list
// differs from the corpus.
FinetuneResult finetune(const Dataset& ds, std::span<const std::size_t> train, std::span<const std::size_t> test,
                        const Checkpoint* init, const ExperimentConfig& cfg, std::uint64_t seed);

// Multinomial logistic regression on standardized features by full-batch
// gradient descent on mean cross-entropy + l2/2 |W|^2 (bias unpenalized).
// Step size 1/L from a power-iteration bound on the Hessian. Stops when the
// gradient norm drops below tol or after max_iter steps.
struct LinearProbe {
  std::vector<int> labels;  // original label per class column
  std::vector<double> mean, inv_std;
  nn::Tensor<double> w;  // d x classes
  std::vector<double> b;
  int iterations = 0;
  double grad_norm = 0;

  int predict(std::span<const double> x) const;
  double accuracy(const nn::Tensor<double>& x, std::span<const int> y) const;
};

// Throws ConfigError for fewer than two distinct labels or a size mismatch.
LinearProbe fit_linear_probe(const nn::Tensor<double>& x, std::span<const int> y, const ProbeConfig& cfg);

struct HeldOutProbe {
  std::size_t fit_records = 0, eval_records = 0;
  int iterations = 0;
  double train_accuracy = 0;
  double accuracy = 0;
};

// Probe on image-encoder features of the stored images of the unseen
// classes (unseen_base and unseen records). The first fit_fraction of each
// class is fitted, the rest evaluated.
HeldOutProbe held_out_probe(Model<float>& model, const Dataset& ds, const Split& split, double fit_fraction,
                            bool use_prompts, const ProbeConfig& cfg);

}  // namespace cg3d
