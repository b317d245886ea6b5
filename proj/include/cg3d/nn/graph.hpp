#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cg3d/nn/tensor.hpp"
#include "cg3d/util/error.hpp"

namespace cg3d::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool trainable = true;

  void zero_grad() {
    if (!grad.empty()) grad.fill(T{0});
  }
};

// Handle to a node of a Graph.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
};

// Single-use reverse-mode tape. Build the forward pass with the ops in
// ops.hpp, then call backward() once on a 1x1 loss. Gradients of parameter
// leaves are added into Parameter::grad. A graph built with grad disabled
// records values only.
template <typename T>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  // Leaf bound to a parameter. Frozen parameters (trainable == false) behave
  // as constants unless force_grad is set, which the gradient checker uses.
  Var param(Parameter<T>& p) { return push(p.value, grad_enabled_ && (p.trainable || force_grad_), &p); }

  void set_force_grad(bool on) noexcept { force_grad_ = on; }

  // Used by ops: a new node. When the result needs a gradient the op attaches
  // its backward step with set_backward().
  Var emit(Tensor<T> value, bool needs_grad) { return push(std::move(value), needs_grad && grad_enabled_, nullptr); }
  void set_backward(Var v, std::function<void()> backward) { nodes_.at(v.id).backward = std::move(backward); }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var v) const { return v.valid() && nodes_.at(v.id).needs_grad; }

  // Gradient buffer of a node, zero-initialized on first use.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

  void backward(Var loss) {
    if (!grad_enabled_) throw ConfigError("backward() on a graph built without gradients");
    const Tensor<T>& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw ConfigError("backward() needs a 1x1 loss, got " + lv.shape_string());
    grad(loss)[0] = T{1};
    for (std::int64_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) n.backward();
      if (n.param != nullptr) {
        Parameter<T>& p = *n.param;
        if (p.grad.empty()) p.grad = Tensor<T>(p.value.rows(), p.value.cols());
        for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += n.grad[k];
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    std::function<void()> backward;
  };

  Var push(Tensor<T> value, bool needs_grad, Parameter<T>* p) {
    nodes_.push_back(Node{std::move(value), {}, needs_grad, p, {}});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool grad_enabled_;
  bool force_grad_ = false;
  std::vector<Node> nodes_;
};

}  // namespace cg3d::nn
