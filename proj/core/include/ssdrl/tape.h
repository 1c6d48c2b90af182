#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ssdrl/param_store.h"
#include "ssdrl/tensor.h"

namespace ssdrl {

// Handle to a value recorded on a Tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
// walking them backwards is a reverse topological order. Gradients
// accumulate additively into each node. Nodes live in a deque, so references
// returned by value() stay valid while further nodes are recorded.
template <typename T>
class Tape {
 public:
  // Receives the gradient flowing into the node's output and pushes
  // contributions to its inputs through Tape::accumulate.
  using Backward = std::function<void(Tape&, const Tensor<T>&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor<T> value) { return push(std::move(value), false, {}, {}); }

  // Leaf that receives a gradient; `name` ties it back to a ParamStore entry.
  Var leaf(Tensor<T> value, std::string name = {}) {
    return push(std::move(value), grad_enabled_, {}, std::move(name));
  }

  // Leaf bound to a stored parameter.
  Var param(const ParamStore<T>& store, const std::string& name) {
    return leaf(store.value(name), name);
  }

  // Records an op output. `backward` is kept only if some input needs a
  // gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{}, {});
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() root with respect to v; nullptr when no
  // gradient reached v.
  const Tensor<T>* grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? &n.grad : nullptr;
  }

  void accumulate(Var v, const Tensor<T>& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
      throw DimensionError("gradient shape " + shape_string(g.shape()) +
                           " does not match value shape " +
                           shape_string(n.value.shape()));
    }
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
      return;
    }
    T* dst = n.grad.ptr();
    const T* src = g.ptr();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
  }

  // Seeds d(root)/d(root) = 1 for a single-element root and replays the tape.
  void backward(Var root) {
    if (value(root).size() != 1) {
      throw DimensionError("backward root must be a scalar, got " +
                           shape_string(value(root).shape()));
    }
    Tensor<T> seed(value(root).shape(), T(1));
    backward(root, seed);
  }

  void backward(Var root, const Tensor<T>& seed) {
    for (Node& n : nodes_) {
      n.has_grad = false;
    }
    accumulate(root, seed);
    for (std::int32_t id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  // Adds every named leaf's gradient into the matching store entry.
  void accumulate_into(ParamStore<T>& store) const {
    for (const Node& n : nodes_) {
      if (n.name.empty() || !n.has_grad) continue;
      Tensor<T>& dst = store.entry(n.name).grad;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    std::string name;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Var push(Tensor<T> value, bool requires_grad, Backward backward, std::string name) {
    nodes_.push_back(Node{std::move(value), {}, std::move(backward), std::move(name),
                          requires_grad, false});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  std::deque<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace ssdrl
