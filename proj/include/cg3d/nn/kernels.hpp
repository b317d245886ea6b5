#pragma once

#include <cstddef>

// Hot loops shared by the layers. Each kernel has an OpenMP-parallel version
// (namespace kernels) and a plain serial version (namespace reference) that
// the tests and benchmarks compare against. Parallel versions split work over
// output rows only, so every output element is reduced in a fixed order and
// results do not depend on the thread count.
namespace cg3d::nn {

namespace kernels {

// C[m x n] = op(A) * op(B), or C += ... when accumulate. op(A) is m x k and
// A is stored k x m when trans_a; op(B) is k x n and B is stored n x k when
// trans_b. All matrices are dense row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);

// In-place numerically stable softmax of each row.
template <typename T>
void softmax_rows(T* x, std::size_t rows, std::size_t cols);

// Per-group column max over consecutive row blocks: x is (groups*per) x cols,
// out is groups x cols, argmax holds the winning row index (first on ties).
template <typename T>
void max_pool_groups(const T* x, std::size_t groups, std::size_t per, std::size_t cols, T* out, std::size_t* argmax);

// For each of m points (xyz rows) find the nearest of k centroids by squared
// Euclidean distance, lowest index on ties.
void assign_nearest(const double* points, std::size_t m, const double* centroids, std::size_t k, int* assign,
                    double* sq_dist);

int max_threads();

}  // namespace kernels

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);

template <typename T>
void softmax_rows(T* x, std::size_t rows, std::size_t cols);

template <typename T>
void max_pool_groups(const T* x, std::size_t groups, std::size_t per, std::size_t cols, T* out, std::size_t* argmax);

void assign_nearest(const double* points, std::size_t m, const double* centroids, std::size_t k, int* assign,
                    double* sq_dist);

}  // namespace reference

}  // namespace cg3d::nn
