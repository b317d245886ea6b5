#include "cg3d/nn/ops.hpp"

#include <cmath>
#include <memory>

#include "cg3d/nn/fastmath.hpp"
#include "cg3d/nn/kernels.hpp"

namespace cg3d::nn::ops {

namespace {

using idx = std::ptrdiff_t;

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ConfigError(std::string(op) + ": " + detail);
}

}  // namespace

template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& W = g.value(w);
  require(X.cols() == W.rows(), "linear", "input " + X.shape_string() + " vs weight " + W.shape_string());
  const std::size_t n = X.rows(), in = W.rows(), out = W.cols();
  Tensor<T> Y(n, out);
  kernels::gemm(false, false, n, out, in, X.data(), W.data(), Y.data(), false);
  if (b.valid()) {
    const Tensor<T>& B = g.value(b);
    require(B.rows() == 1 && B.cols() == out, "linear", "bias " + B.shape_string());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < out; ++c) Y(r, c) += B[c];
  }
  Var y = g.emit(std::move(Y), g.needs_grad(x) || g.needs_grad(w) || g.needs_grad(b));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, x, w, b, y, n, in, out] {
      const Tensor<T>& dY = g.grad(y);
      if (g.needs_grad(x))
        kernels::gemm(false, true, n, in, out, dY.data(), g.value(w).data(), g.grad(x).data(), true);
      if (g.needs_grad(w))
        kernels::gemm(true, false, in, out, n, g.value(x).data(), dY.data(), g.grad(w).data(), true);
      if (g.needs_grad(b)) {
        Tensor<T>& dB = g.grad(b);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < out; ++c) dB[c] += dY(r, c);
      }
    });
  return y;
}

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  return linear(g, a, b, Var{});
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  require(A.same_shape(B), "add", A.shape_string() + " vs " + B.shape_string());
  Tensor<T> Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += B[i];
  Var y = g.emit(std::move(Y), g.needs_grad(a) || g.needs_grad(b));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, a, b, y] {
      const Tensor<T>& dY = g.grad(y);
      for (Var v : {a, b})
        if (g.needs_grad(v)) {
          Tensor<T>& d = g.grad(v);
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += dY[i];
        }
    });
  return y;
}

template <typename T>
Var add_tiled(Graph<T>& g, Var x, Var p) {
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& P = g.value(p);
  require(P.cols() == X.cols() && P.rows() > 0 && X.rows() % P.rows() == 0, "add_tiled",
          X.shape_string() + " vs " + P.shape_string());
  Tensor<T> Y = X;
  const std::size_t s = P.rows(), c = P.cols();
  for (std::size_t r = 0; r < Y.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) Y(r, j) += P(r % s, j);
  Var y = g.emit(std::move(Y), g.needs_grad(x) || g.needs_grad(p));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, x, p, y, s, c] {
      const Tensor<T>& dY = g.grad(y);
      if (g.needs_grad(x)) {
        Tensor<T>& dX = g.grad(x);
        for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += dY[i];
      }
      if (g.needs_grad(p)) {
        Tensor<T>& dP = g.grad(p);
        for (std::size_t r = 0; r < dY.rows(); ++r)
          for (std::size_t j = 0; j < c; ++j) dP(r % s, j) += dY(r, j);
      }
    });
  return y;
}

template <typename T>
Var scale(Graph<T>& g, Var x, T s) {
  Tensor<T> Y = g.value(x);
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= s;
  Var y = g.emit(std::move(Y), g.needs_grad(x));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, x, y, s] {
      const Tensor<T>& dY = g.grad(y);
      Tensor<T>& dX = g.grad(x);
      for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += s * dY[i];
    });
  return y;
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> Y = g.value(x);
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = Y[i] > T{0} ? Y[i] : T{0};
  Var y = g.emit(std::move(Y), g.needs_grad(x));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, x, y] {
      const Tensor<T>& X = g.value(x);
      const Tensor<T>& dY = g.grad(y);
      Tensor<T>& dX = g.grad(x);
      for (std::size_t i = 0; i < dX.size(); ++i)
        if (X[i] > T{0}) dX[i] += dY[i];
    });
  return y;
}

template <typename T>
Var gelu(Graph<T>& g, Var x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  Tensor<T> Y = g.value(x);
  T* yp = Y.data();
  for (std::size_t i = 0; i < Y.size(); ++i) {
    const T v = yp[i];
    yp[i] = T(0.5) * v * (T(1) + tanh_fast(c * (v + a * v * v * v)));
  }
  Var y = g.emit(std::move(Y), g.needs_grad(x));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, x, y] {
      const Tensor<T>& X = g.value(x);
      const Tensor<T>& dY = g.grad(y);
      Tensor<T>& dX = g.grad(x);
      const T* __restrict xp = X.data();
      const T* __restrict gp = dY.data();
      T* __restrict dp = dX.data();
      const std::size_t n = dX.size();
      for (std::size_t i = 0; i < n; ++i) {
        const T v = xp[i];
        const T t = tanh_fast(c * (v + a * v * v * v));
        const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
        dp[i] += gp[i] * d;
      }
    });
  return y;
}

template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps) {
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& G = g.value(gamma);
  const Tensor<T>& B = g.value(beta);
  const std::size_t n = X.rows(), c = X.cols();
  require(G.size() == c && B.size() == c, "layer_norm", "affine size vs " + X.shape_string());
  Tensor<T> Y(n, c);
  Tensor<T> xhat(n, c);
  std::vector<T> rstd(n);
#pragma omp parallel for schedule(static) if (n * c >= (1 << 15))
  for (idx ri = 0; ri < static_cast<idx>(n); ++ri) {
    const std::size_t r = static_cast<std::size_t>(ri);
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += X(r, j);
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (X(r, j) - mean) * (X(r, j) - mean);
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      xhat(r, j) = (X(r, j) - mean) * rs;
      Y(r, j) = G[j] * xhat(r, j) + B[j];
    }
  }
  Var y = g.emit(std::move(Y), g.needs_grad(x) || g.needs_grad(gamma) || g.needs_grad(beta));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, x, gamma, beta, y, n, c, xhat = std::move(xhat), rstd = std::move(rstd)] {
      const Tensor<T>& dY = g.grad(y);
      const Tensor<T>& G = g.value(gamma);
      if (g.needs_grad(gamma)) {
        Tensor<T>& dG = g.grad(gamma);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) dG[j] += dY(r, j) * xhat(r, j);
      }
      if (g.needs_grad(beta)) {
        Tensor<T>& dB = g.grad(beta);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) dB[j] += dY(r, j);
      }
      if (g.needs_grad(x)) {
        Tensor<T>& dX = g.grad(x);
#pragma omp parallel for schedule(static) if (n * c >= (1 << 15))
        for (idx ri = 0; ri < static_cast<idx>(n); ++ri) {
          const std::size_t r = static_cast<std::size_t>(ri);
          T m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const T dxh = dY(r, j) * G[j];
            m1 += dxh;
            m2 += dxh * xhat(r, j);
          }
          m1 /= static_cast<T>(c);
          m2 /= static_cast<T>(c);
          for (std::size_t j = 0; j < c; ++j) dX(r, j) += rstd[r] * (dY(r, j) * G[j] - m1 - xhat(r, j) * m2);
        }
      }
    });
  return y;
}

template <typename T>
Var attention(Graph<T>& g, Var qkv, std::size_t batch, std::size_t seq, std::size_t heads, bool causal) {
  const Tensor<T>& QKV = g.value(qkv);
  require(QKV.rows() == batch * seq && QKV.cols() % 3 == 0, "attention",
          "qkv " + QKV.shape_string() + " for batch " + std::to_string(batch) + " seq " + std::to_string(seq));
  const std::size_t w = QKV.cols() / 3;
  require(heads > 0 && w % heads == 0, "attention", "width not divisible by heads");
  const std::size_t dh = w / heads, ld = 3 * w, ss = seq * seq;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  Tensor<T> O(batch * seq, w);
  auto probs = std::vector<T>(batch * heads * ss, T{0});
  const T* base = QKV.data();

  // Each (batch, head) pair works on packed seq x dh copies of its Q, K, V.
#pragma omp parallel for schedule(static)
  for (idx bhi = 0; bhi < static_cast<idx>(batch * heads); ++bhi) {
    const std::size_t bh = static_cast<std::size_t>(bhi), b = bh / heads, h = bh % heads;
    std::vector<T> q(seq * dh), k(seq * dh), v(seq * dh), o(seq * dh);
    for (std::size_t i = 0; i < seq; ++i) {
      const T* row = base + (b * seq + i) * ld + h * dh;
      std::copy_n(row, dh, q.data() + i * dh);
      std::copy_n(row + w, dh, k.data() + i * dh);
      std::copy_n(row + 2 * w, dh, v.data() + i * dh);
    }
    T* p = probs.data() + bh * ss;
    kernels::gemm(false, true, seq, seq, dh, q.data(), k.data(), p, false);
    for (std::size_t i = 0; i < seq; ++i) {
      T* prow = p + i * seq;
      const std::size_t jmax = causal ? i + 1 : seq;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < jmax; ++j) {
        prow[j] *= sc;
        mx = std::max(mx, prow[j]);
      }
      for (std::size_t j = 0; j < jmax; ++j) prow[j] = exp_fast(prow[j] - mx);
      T sum = 0;
      for (std::size_t j = 0; j < jmax; ++j) sum += prow[j];
      const T inv = T(1) / sum;
      for (std::size_t j = 0; j < jmax; ++j) prow[j] *= inv;
      for (std::size_t j = jmax; j < seq; ++j) prow[j] = T{0};
    }
    kernels::gemm(false, false, seq, dh, seq, p, v.data(), o.data(), false);
    for (std::size_t i = 0; i < seq; ++i) std::copy_n(o.data() + i * dh, dh, O.data() + (b * seq + i) * w + h * dh);
  }

  Var y = g.emit(std::move(O), g.needs_grad(qkv));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, qkv, y, batch, seq, heads, w, dh, ld, ss, sc, probs = std::move(probs)] {
      const T* base = g.value(qkv).data();
      const Tensor<T>& dO = g.grad(y);
      T* dbase = g.grad(qkv).data();
#pragma omp parallel for schedule(static)
      for (idx bhi = 0; bhi < static_cast<idx>(batch * heads); ++bhi) {
        const std::size_t bh = static_cast<std::size_t>(bhi), b = bh / heads, h = bh % heads;
        std::vector<T> q(seq * dh), k(seq * dh), v(seq * dh), go(seq * dh);
        std::vector<T> dq(seq * dh), dk(seq * dh), dv(seq * dh), ds(ss);
        for (std::size_t i = 0; i < seq; ++i) {
          const T* row = base + (b * seq + i) * ld + h * dh;
          std::copy_n(row, dh, q.data() + i * dh);
          std::copy_n(row + w, dh, k.data() + i * dh);
          std::copy_n(row + 2 * w, dh, v.data() + i * dh);
          std::copy_n(dO.data() + (b * seq + i) * w + h * dh, dh, go.data() + i * dh);
        }
        const T* p = probs.data() + bh * ss;
        kernels::gemm(true, false, seq, dh, seq, p, go.data(), dv.data(), false);
        kernels::gemm(false, true, seq, seq, dh, go.data(), v.data(), ds.data(), false);
        // Masked entries have p = 0, so their ds vanishes as well.
        for (std::size_t i = 0; i < seq; ++i) {
          const T* prow = p + i * seq;
          T* drow = ds.data() + i * seq;
          T dot = 0;
          for (std::size_t j = 0; j < seq; ++j) dot += prow[j] * drow[j];
          for (std::size_t j = 0; j < seq; ++j) drow[j] = prow[j] * (drow[j] - dot) * sc;
        }
        kernels::gemm(false, false, seq, dh, seq, ds.data(), k.data(), dq.data(), false);
        kernels::gemm(true, false, seq, dh, seq, ds.data(), q.data(), dk.data(), false);
        for (std::size_t i = 0; i < seq; ++i) {
          T* row = dbase + (b * seq + i) * ld + h * dh;
          for (std::size_t d = 0; d < dh; ++d) {
            row[d] += dq[i * dh + d];
            row[w + d] += dk[i * dh + d];
            row[2 * w + d] += dv[i * dh + d];
          }
        }
      }
    });
  return y;
}

template <typename T>
Var max_pool(Graph<T>& g, Var x, std::size_t groups) {
  const Tensor<T>& X = g.value(x);
  require(groups > 0 && X.rows() % groups == 0 && X.rows() > 0, "max_pool",
          X.shape_string() + " into " + std::to_string(groups) + " groups");
  const std::size_t c = X.cols();
  Tensor<T> Y(groups, c);
  std::vector<std::size_t> arg(groups * c);
  kernels::max_pool_groups(X.data(), groups, X.rows() / groups, c, Y.data(), arg.data());
  Var y = g.emit(std::move(Y), g.needs_grad(x));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, x, y, c, arg = std::move(arg)] {
      const Tensor<T>& dY = g.grad(y);
      Tensor<T>& dX = g.grad(x);
      for (std::size_t i = 0; i < arg.size(); ++i) dX(arg[i], i % c) += dY[i];
    });
  return y;
}

template <typename T>
Var gather_rows(Graph<T>& g, Var x, std::vector<std::size_t> index) {
  const Tensor<T>& X = g.value(x);
  const std::size_t c = X.cols();
  Tensor<T> Y(index.size(), c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= X.rows())
      require(false, "gather_rows", "row " + std::to_string(index[i]) + " of " + X.shape_string());
    std::copy_n(X.data() + index[i] * c, c, Y.data() + i * c);
  }
  Var y = g.emit(std::move(Y), g.needs_grad(x));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, x, y, c, index = std::move(index)] {
      const Tensor<T>& dY = g.grad(y);
      Tensor<T>& dX = g.grad(x);
      for (std::size_t i = 0; i < index.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) dX(index[i], j) += dY(i, j);
    });
  return y;
}

template <typename T>
Var concat_rows(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  require(A.cols() == B.cols(), "concat_rows", A.shape_string() + " vs " + B.shape_string());
  Tensor<T> Y(A.rows() + B.rows(), A.cols());
  std::copy(A.storage().begin(), A.storage().end(), Y.data());
  std::copy(B.storage().begin(), B.storage().end(), Y.data() + A.size());
  const std::size_t split = A.size();
  Var y = g.emit(std::move(Y), g.needs_grad(a) || g.needs_grad(b));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, a, b, y, split] {
      const Tensor<T>& dY = g.grad(y);
      if (g.needs_grad(a)) {
        Tensor<T>& dA = g.grad(a);
        for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += dY[i];
      }
      if (g.needs_grad(b)) {
        Tensor<T>& dB = g.grad(b);
        for (std::size_t i = 0; i < dB.size(); ++i) dB[i] += dY[split + i];
      }
    });
  return y;
}

template <typename T>
Var l2_normalize(Graph<T>& g, Var x) {
  Tensor<T> Y = g.value(x);
  std::vector<T> norms(Y.rows());
  for (std::size_t r = 0; r < Y.rows(); ++r) {
    T s = 0;
    for (T v : Y.row(r)) s += v * v;
    const T n = std::sqrt(s);
    if (!(n >= T(1e-12))) throw ContractError("degenerate feature: row " + std::to_string(r) + " has norm < 1e-12");
    norms[r] = n;
    for (T& v : Y.row(r)) v /= n;
  }
  Var y = g.emit(std::move(Y), g.needs_grad(x));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, x, y, norms = std::move(norms)] {
      const Tensor<T>& Yv = g.value(y);
      const Tensor<T>& dY = g.grad(y);
      Tensor<T>& dX = g.grad(x);
      for (std::size_t r = 0; r < Yv.rows(); ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < Yv.cols(); ++j) dot += Yv(r, j) * dY(r, j);
        for (std::size_t j = 0; j < Yv.cols(); ++j) dX(r, j) += (dY(r, j) - Yv(r, j) * dot) / norms[r];
      }
    });
  return y;
}

template <typename T>
Var cross_entropy(Graph<T>& g, Var logits, const std::vector<int>& labels) {
  const Tensor<T>& L = g.value(logits);
  require(labels.size() == L.rows() && L.rows() > 0, "cross_entropy", "label count vs " + L.shape_string());
  Tensor<T> P = L;
  kernels::softmax_rows(P.data(), P.rows(), P.cols());
  T loss = 0;
  for (std::size_t r = 0; r < P.rows(); ++r) {
    require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < P.cols(), "cross_entropy", "label out of range");
    // log-softmax from the logits directly keeps tiny probabilities exact
    const auto row = L.row(r);
    T mx = row[0];
    for (T v : row) mx = std::max(mx, v);
    T s = 0;
    for (T v : row) s += std::exp(v - mx);
    loss += mx + std::log(s) - row[static_cast<std::size_t>(labels[r])];
  }
  const T n = static_cast<T>(P.rows());
  Tensor<T> out(1, 1, loss / n);
  Var y = g.emit(std::move(out), g.needs_grad(logits));
  if (g.needs_grad(y))
    g.set_backward(y, [&g, logits, y, labels, n, P = std::move(P)] {
      const T s = g.grad(y)[0] / n;
      Tensor<T>& dL = g.grad(logits);
      for (std::size_t r = 0; r < P.rows(); ++r)
        for (std::size_t j = 0; j < P.cols(); ++j)
          dL(r, j) += s * (P(r, j) - (static_cast<int>(j) == labels[r] ? T(1) : T(0)));
    });
  return y;
}

#define CG3D_INSTANTIATE_OPS(T)                                                              \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                                          \
  template Var matmul<T>(Graph<T>&, Var, Var);                                               \
  template Var add<T>(Graph<T>&, Var, Var);                                                  \
  template Var add_tiled<T>(Graph<T>&, Var, Var);                                            \
  template Var scale<T>(Graph<T>&, Var, T);                                                  \
  template Var relu<T>(Graph<T>&, Var);                                                      \
  template Var gelu<T>(Graph<T>&, Var);                                                      \
  template Var layer_norm<T>(Graph<T>&, Var, Var, Var, T);                                   \
  template Var attention<T>(Graph<T>&, Var, std::size_t, std::size_t, std::size_t, bool);    \
  template Var max_pool<T>(Graph<T>&, Var, std::size_t);                                     \
  template Var gather_rows<T>(Graph<T>&, Var, std::vector<std::size_t>);                     \
  template Var concat_rows<T>(Graph<T>&, Var, Var);                                          \
  template Var l2_normalize<T>(Graph<T>&, Var);                                              \
  template Var cross_entropy<T>(Graph<T>&, Var, const std::vector<int>&);

CG3D_INSTANTIATE_OPS(float)
CG3D_INSTANTIATE_OPS(double)

#undef CG3D_INSTANTIATE_OPS

}  // namespace cg3d::nn::ops
