#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cg3d/nn/graph.hpp"

namespace cg3d {

// Which in-batch pairs count as positives: same class label, or only the
// sample's own counterpart.
enum class PositiveMode { by_class, instance };

// Inner products between two modality batches with the positive pattern and
// temperature. mask(i, j) != 0 marks a positive.
template <typename T>
struct SimilarityBlock {
  nn::Tensor<T> sim;
  nn::Tensor<std::uint8_t> mask;
  T tau = T(0.07);
};

// NCE with multiple positives per anchor row:
//   mean_i  1/|P(i)| * sum_{p in P(i)} -log( exp(s_ip/tau) / sum_a exp(s_ia/tau) )
// with the denominator over every column. Throws ParameterError for tau <= 0
// and ContractError for a row without positives, a non-finite entry, or an
// entry outside [-1-1e-5, 1+1e-5]. When grad is non-null it receives dL/dsim.
template <typename T>
T nce(const SimilarityBlock<T>& block, nn::Tensor<T>* grad = nullptr);

nn::Tensor<std::uint8_t> positive_mask(std::span<const int> labels, PositiveMode mode);

// Symmetric two-direction loss nce(A->B) + nce(B->A) over S = A * B^T.
// Optional outputs receive the gradient w.r.t. each embedding batch.
template <typename T>
T pair_loss(const nn::Tensor<T>& fa, const nn::Tensor<T>& fb, std::span<const int> labels, T tau,
            PositiveMode mode = PositiveMode::by_class, nn::Tensor<T>* grad_a = nullptr,
            nn::Tensor<T>* grad_b = nullptr);

// 3D encoder objective: L(3D,2D) + L(3D,text).
template <typename T>
T loss_3d(const nn::Tensor<T>& f3d, const nn::Tensor<T>& f2d, const nn::Tensor<T>& ftext, std::span<const int> labels,
          T tau, PositiveMode mode = PositiveMode::by_class);

// Prompt objective: symmetric image-text loss.
template <typename T>
T loss_prompt(const nn::Tensor<T>& f2d, const nn::Tensor<T>& ftext, std::span<const int> labels, T tau,
              PositiveMode mode = PositiveMode::by_class);

// Graph node form of pair_loss; either input may be a constant.
template <typename T>
nn::Var pair_loss(nn::Graph<T>& g, nn::Var fa, nn::Var fb, std::span<const int> labels, T tau,
                  PositiveMode mode = PositiveMode::by_class);

}  // namespace cg3d
