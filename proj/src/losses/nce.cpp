#include "cg3d/losses/nce.hpp"

#include <cmath>
#include <string>

#include "cg3d/nn/kernels.hpp"

namespace cg3d {

template <typename T>
T nce(const SimilarityBlock<T>& block, nn::Tensor<T>* grad) {
  const nn::Tensor<T>& s = block.sim;
  const std::size_t rows = s.rows(), cols = s.cols();
  if (!(block.tau > T(0)) || !std::isfinite(block.tau)) throw ParameterError("nce: temperature must be positive");
  if (block.mask.rows() != rows || block.mask.cols() != cols)
    throw ContractError("nce: mask shape does not match similarity " + s.shape_string());
  if (rows == 0 || cols == 0) throw ContractError("nce: empty block");
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!std::isfinite(s[i]) || s[i] < T(-1 - 1e-5) || s[i] > T(1 + 1e-5))
      throw ContractError("nce: similarity entry " + std::to_string(i) + " outside [-1,1]");

  const T inv_tau = T(1) / block.tau;
  if (grad) *grad = nn::Tensor<T>(rows, cols);
  T total = 0;
  std::vector<T> prob(cols);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t npos = 0;
    T pos_sum = 0;
    T mx = s(i, 0) * inv_tau;
    for (std::size_t j = 0; j < cols; ++j) {
      mx = std::max(mx, s(i, j) * inv_tau);
      if (block.mask(i, j)) {
        ++npos;
        pos_sum += s(i, j) * inv_tau;
      }
    }
    if (npos == 0) throw ContractError("nce: row " + std::to_string(i) + " has no positive");
    T z = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      prob[j] = std::exp(s(i, j) * inv_tau - mx);
      z += prob[j];
    }
    const T lse = mx + std::log(z);
    total += lse - pos_sum / static_cast<T>(npos);
    if (grad) {
      const T w = inv_tau / static_cast<T>(rows);
      for (std::size_t j = 0; j < cols; ++j)
        (*grad)(i, j) = w * (prob[j] / z - (block.mask(i, j) ? T(1) / static_cast<T>(npos) : T(0)));
    }
  }
  return total / static_cast<T>(rows);
}

nn::Tensor<std::uint8_t> positive_mask(std::span<const int> labels, PositiveMode mode) {
  const std::size_t n = labels.size();
  nn::Tensor<std::uint8_t> m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m(i, j) = mode == PositiveMode::instance ? (i == j) : (labels[i] == labels[j]);
  return m;
}

namespace {

template <typename T>
nn::Tensor<T> transpose(const nn::Tensor<T>& a) {
  nn::Tensor<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace

template <typename T>
T pair_loss(const nn::Tensor<T>& fa, const nn::Tensor<T>& fb, std::span<const int> labels, T tau, PositiveMode mode,
            nn::Tensor<T>* grad_a, nn::Tensor<T>* grad_b) {
  if (fa.rows() != fb.rows() || fa.cols() != fb.cols() || labels.size() != fa.rows())
    throw ContractError("pair_loss: batches " + fa.shape_string() + " and " + fb.shape_string() + " with " +
                        std::to_string(labels.size()) + " labels");
  const std::size_t n = fa.rows(), d = fa.cols();
  SimilarityBlock<T> ab{nn::Tensor<T>(n, n), positive_mask(labels, mode), tau};
  nn::kernels::gemm(false, true, n, n, d, fa.data(), fb.data(), ab.sim.data(), false);
  SimilarityBlock<T> ba{transpose(ab.sim), transpose(ab.mask), tau};

  const bool want = grad_a || grad_b;
  nn::Tensor<T> g_ab, g_ba;
  const T loss = nce(ab, want ? &g_ab : nullptr) + nce(ba, want ? &g_ba : nullptr);
  if (want) {
    // dL/dS = G_ab + G_ba^T
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) g_ab(i, j) += g_ba(j, i);
    if (grad_a) {
      *grad_a = nn::Tensor<T>(n, d);
      nn::kernels::gemm(false, false, n, d, n, g_ab.data(), fb.data(), grad_a->data(), false);
    }
    if (grad_b) {
      *grad_b = nn::Tensor<T>(n, d);
      nn::kernels::gemm(true, false, n, d, n, g_ab.data(), fa.data(), grad_b->data(), false);
    }
  }
  return loss;
}

template <typename T>
T loss_3d(const nn::Tensor<T>& f3d, const nn::Tensor<T>& f2d, const nn::Tensor<T>& ftext, std::span<const int> labels,
          T tau, PositiveMode mode) {
  return pair_loss(f3d, f2d, labels, tau, mode) + pair_loss(f3d, ftext, labels, tau, mode);
}

template <typename T>
T loss_prompt(const nn::Tensor<T>& f2d, const nn::Tensor<T>& ftext, std::span<const int> labels, T tau,
              PositiveMode mode) {
  return pair_loss(f2d, ftext, labels, tau, mode);
}

template <typename T>
nn::Var pair_loss(nn::Graph<T>& g, nn::Var fa, nn::Var fb, std::span<const int> labels, T tau, PositiveMode mode) {
  const bool want = g.needs_grad(fa) || g.needs_grad(fb);
  nn::Tensor<T> ga, gb;
  const T loss = pair_loss(g.value(fa), g.value(fb), labels, tau, mode, want ? &ga : nullptr, want ? &gb : nullptr);
  nn::Var y = g.emit(nn::Tensor<T>(1, 1, loss), want);
  if (g.needs_grad(y))
    g.set_backward(y, [&g, fa, fb, y, ga = std::move(ga), gb = std::move(gb)] {
      const T s = g.grad(y)[0];
      if (g.needs_grad(fa)) {
        nn::Tensor<T>& d = g.grad(fa);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * ga[i];
      }
      if (g.needs_grad(fb)) {
        nn::Tensor<T>& d = g.grad(fb);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * gb[i];
      }
    });
  return y;
}

#define CG3D_INSTANTIATE_LOSSES(T)                                                                              \
  template T nce<T>(const SimilarityBlock<T>&, nn::Tensor<T>*);                                                 \
  template T pair_loss<T>(const nn::Tensor<T>&, const nn::Tensor<T>&, std::span<const int>, T, PositiveMode,    \
                          nn::Tensor<T>*, nn::Tensor<T>*);                                                      \
  template T loss_3d<T>(const nn::Tensor<T>&, const nn::Tensor<T>&, const nn::Tensor<T>&, std::span<const int>, \
                        T, PositiveMode);                                                                       \
  template T loss_prompt<T>(const nn::Tensor<T>&, const nn::Tensor<T>&, std::span<const int>, T, PositiveMode); \
  template nn::Var pair_loss<T>(nn::Graph<T>&, nn::Var, nn::Var, std::span<const int>, T, PositiveMode);

CG3D_INSTANTIATE_LOSSES(float)
CG3D_INSTANTIATE_LOSSES(double)

}  // namespace cg3d
