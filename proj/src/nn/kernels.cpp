#include "cg3d/nn/kernels.hpp"

#include "cg3d/nn/fastmath.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cg3d::nn {

namespace {

using idx = std::ptrdiff_t;

constexpr std::size_t kPanel = 256;       // rows of op(B) kept hot per pass
constexpr std::size_t kParallelWork = 1 << 15;

template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, std::vector<T>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}


// Two 64-byte vectors per row of the 4-row block.
template <typename T>
constexpr std::size_t kCols = 128 / sizeof(T);

template <typename T>
inline void block4(const T* __restrict a, std::size_t lda, const T* __restrict b, std::size_t n, T* __restrict c,
                   std::size_t j0, std::size_t p0, std::size_t p1) {
  typedef T vec __attribute__((vector_size(64)));
  constexpr std::size_t w = 64 / sizeof(T);
  vec acc[4][2];
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t v = 0; v < 2; ++v) std::memcpy(&acc[r][v], c + r * n + j0 + v * w, 64);
  for (std::size_t p = p0; p < p1; ++p) {
    vec bv[2];
    std::memcpy(&bv[0], b + p * n + j0, 64);
    std::memcpy(&bv[1], b + p * n + j0 + w, 64);
    const T s0 = a[p], s1 = a[lda + p], s2 = a[2 * lda + p], s3 = a[3 * lda + p];
    for (std::size_t v = 0; v < 2; ++v) {
      acc[0][v] += s0 * bv[v];
      acc[1][v] += s1 * bv[v];
      acc[2][v] += s2 * bv[v];
      acc[3][v] += s3 * bv[v];
    }
  }
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t v = 0; v < 2; ++v) std::memcpy(c + r * n + j0 + v * w, &acc[r][v], 64);
}

template <typename T>
inline void block_tail(const T* a, std::size_t lda, std::size_t rows, const T* b, std::size_t n, T* c, std::size_t j0,
                       std::size_t j1, std::size_t p0, std::size_t p1) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* __restrict cr = c + r * n;
    for (std::size_t p = p0; p < p1; ++p) {
      const T v = a[r * lda + p];
      const T* __restrict br = b + p * n;
      for (std::size_t j = j0; j < j1; ++j) cr[j] += v * br[j];
    }
  }
}

}  // namespace

namespace kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  std::vector<T> at, bt;
  if (trans_a) {
    transpose(a, k, m, at);
    a = at.data();
  }
  if (trans_b) {
    transpose(b, n, k, bt);
    b = bt.data();
  }
  if (!accumulate) std::fill(c, c + m * n, T{0});
  if (m == 0 || n == 0) return;

  // 4 x kCols blocks of C stay in registers across a k-panel.
  const idx row_quads = static_cast<idx>((m + 3) / 4);
  for (std::size_t p0 = 0; p0 < k; p0 += kPanel) {
    const std::size_t p1 = std::min(k, p0 + kPanel);
    const bool par = m * n * (p1 - p0) >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
    for (idx q = 0; q < row_quads; ++q) {
      const std::size_t i = static_cast<std::size_t>(q) * 4;
      const std::size_t rows = std::min<std::size_t>(4, m - i);
      if (rows == 4) {
        std::size_t j0 = 0;
        for (; j0 + kCols<T> <= n; j0 += kCols<T>) block4<T>(a + i * k, k, b, n, c + i * n, j0, p0, p1);
        if (j0 < n) block_tail<T>(a + i * k, k, 4, b, n, c + i * n, j0, n, p0, p1);
      } else {
        block_tail<T>(a + i * k, k, rows, b, n, c + i * n, 0, n, p0, p1);
      }
    }
  }
}

template <typename T>
void softmax_rows(T* x, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelWork)
  for (idx r = 0; r < static_cast<idx>(rows); ++r) {
    T* row = x + static_cast<std::size_t>(r) * cols;
    T mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    for (std::size_t j = 0; j < cols; ++j) row[j] = exp_fast(row[j] - mx);
    T sum = 0;
    for (std::size_t j = 0; j < cols; ++j) sum += row[j];
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < cols; ++j) row[j] *= inv;
  }
}

template <typename T>
void max_pool_groups(const T* x, std::size_t groups, std::size_t per, std::size_t cols, T* out, std::size_t* argmax) {
#pragma omp parallel for schedule(static) if (groups * per * cols >= kParallelWork)
  for (idx g = 0; g < static_cast<idx>(groups); ++g) {
    const std::size_t base = static_cast<std::size_t>(g) * per;
    T* o = out + static_cast<std::size_t>(g) * cols;
    std::size_t* am = argmax + static_cast<std::size_t>(g) * cols;
    std::copy(x + base * cols, x + (base + 1) * cols, o);
    std::fill(am, am + cols, base);
    for (std::size_t r = base + 1; r < base + per; ++r) {
      const T* xr = x + r * cols;
      for (std::size_t j = 0; j < cols; ++j)
        if (xr[j] > o[j]) {
          o[j] = xr[j];
          am[j] = r;
        }
    }
  }
}

void assign_nearest(const double* points, std::size_t m, const double* centroids, std::size_t k, int* assign,
                    double* sq_dist) {
#pragma omp parallel for schedule(static) if (m * k >= kParallelWork)
  for (idx i = 0; i < static_cast<idx>(m); ++i) {
    const double* p = points + 3 * static_cast<std::size_t>(i);
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double dx = p[0] - centroids[3 * c], dy = p[1] - centroids[3 * c + 1], dz = p[2] - centroids[3 * c + 2];
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    assign[i] = arg;
    if (sq_dist) sq_dist[i] = best;
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*, const double*, double*,
                           bool);
template void softmax_rows<float>(float*, std::size_t, std::size_t);
template void softmax_rows<double>(double*, std::size_t, std::size_t);
template void max_pool_groups<float>(const float*, std::size_t, std::size_t, std::size_t, float*, std::size_t*);
template void max_pool_groups<double>(const double*, std::size_t, std::size_t, std::size_t, double*, std::size_t*);

}  // namespace kernels

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b ? b[j * k + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
}

template <typename T>
void softmax_rows(T* x, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = x + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T sum = 0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < cols; ++j) row[j] = std::exp(row[j] - mx) / sum;
  }
}

template <typename T>
void max_pool_groups(const T* x, std::size_t groups, std::size_t per, std::size_t cols, T* out, std::size_t* argmax) {
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t j = 0; j < cols; ++j) {
      std::size_t best = g * per;
      for (std::size_t r = g * per + 1; r < (g + 1) * per; ++r)
        if (x[r * cols + j] > x[best * cols + j]) best = r;
      out[g * cols + j] = x[best * cols + j];
      argmax[g * cols + j] = best;
    }
}

void assign_nearest(const double* points, std::size_t m, const double* centroids, std::size_t k, int* assign,
                    double* sq_dist) {
  for (std::size_t i = 0; i < m; ++i) {
    int arg = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double d = 0;
      for (int a = 0; a < 3; ++a) {
        const double t = points[3 * i + a] - centroids[3 * c + a];
        d += t * t;
      }
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    assign[i] = arg;
    if (sq_dist) sq_dist[i] = best;
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*, const float*, float*, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*, const double*, double*,
                           bool);
template void softmax_rows<float>(float*, std::size_t, std::size_t);
template void softmax_rows<double>(double*, std::size_t, std::size_t);
template void max_pool_groups<float>(const float*, std::size_t, std::size_t, std::size_t, float*, std::size_t*);
template void max_pool_groups<double>(const double*, std::size_t, std::size_t, std::size_t, double*, std::size_t*);

}  // namespace reference

}  // namespace cg3d::nn
