#pragma once

#include <cstddef>
#include <vector>

#include "cg3d/nn/graph.hpp"

// Differentiable operations on Graph nodes. Shapes are (rows x cols); a
// batch of sequences is stored as (batch*seq x width).
namespace cg3d::nn::ops {

// x * W (+ b). x: n x in, W: in x out, b: 1 x out or invalid Var.
template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b);

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b);

template <typename T>
Var add(Graph<T>& g, Var a, Var b);

// x + tile(p): p (s x c) is repeated down the rows of x (batch*s x c).
template <typename T>
Var add_tiled(Graph<T>& g, Var x, Var p);

template <typename T>
Var scale(Graph<T>& g, Var x, T s);

template <typename T>
Var relu(Graph<T>& g, Var x);

// tanh approximation.
template <typename T>
Var gelu(Graph<T>& g, Var x);

// Row-wise layer normalization with affine gamma, beta (1 x c).
template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-5));

// Multi-head scaled dot-product self-attention. qkv is (batch*seq x 3w) with
// Q, K, V blocks side by side; output is (batch*seq x w). With `causal`,
// position i attends to positions <= i.
template <typename T>
Var attention(Graph<T>& g, Var qkv, std::size_t batch, std::size_t seq, std::size_t heads, bool causal);

// Column max over each block of rows/groups consecutive rows.
template <typename T>
Var max_pool(Graph<T>& g, Var x, std::size_t groups);

// out[i] = x[index[i]]; backward scatters (adds) into x.
template <typename T>
Var gather_rows(Graph<T>& g, Var x, std::vector<std::size_t> index);

template <typename T>
Var concat_rows(Graph<T>& g, Var a, Var b);

// Rows divided by their Euclidean norm. Throws ContractError when a row norm
// is below 1e-12.
template <typename T>
Var l2_normalize(Graph<T>& g, Var x);

// Mean softmax cross-entropy of logits (n x classes) against labels.
template <typename T>
Var cross_entropy(Graph<T>& g, Var logits, const std::vector<int>& labels);

}  // namespace cg3d::nn::ops
