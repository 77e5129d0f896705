#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "satt/tensor.hpp"

namespace satt::grad {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

// Reverse-mode record of one forward pass. Leaves hold inputs and
// parameters; every other entry is an op that owns a closure mapping its
// output gradient onto its inputs' gradients. backward() walks the ops in
// exact reverse execution order.
template <std::floating_point T>
class Tape {
 public:
  using Backward = std::function<void(const Tensor4<T>& out_grad, Tape& tape)>;

  Var leaf(Tensor4<T> value, std::string name = "leaf") {
    nodes_.push_back(Node{std::move(name), std::move(value), std::nullopt, nullptr});
    return Var{nodes_.size() - 1};
  }

  Var record(std::string op, Tensor4<T> value, Backward backward) {
    nodes_.push_back(Node{std::move(op), std::move(value), std::nullopt, std::move(backward)});
    ++op_count_;
    return Var{nodes_.size() - 1};
  }

  const Tensor4<T>& value(Var v) const { return node(v).value; }
  const Shape4& shape(Var v) const { return node(v).value.shape(); }
  const std::string& name(Var v) const { return node(v).name; }

  bool has_grad(Var v) const { return node(v).grad.has_value(); }

  // Gradient of v; zeros if nothing flowed into it.
  Tensor4<T> grad(Var v) const {
    const Node& nd = node(v);
    return nd.grad ? *nd.grad : Tensor4<T>(nd.value.shape());
  }

  // Adds g into v's gradient buffer (allocating it on first use).
  void accumulate(Var v, const Tensor4<T>& g) {
    Node& nd = node(v);
    if (g.shape() != nd.value.shape()) {
      throw ShapeError("gradient shape " + g.shape().str() + " does not match value shape " +
                       nd.value.shape().str() + " for '" + nd.name + "'");
    }
    if (!nd.grad) {
      nd.grad = g;
      return;
    }
    auto dst = nd.grad->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  // Mutable access to v's gradient buffer, zero-initialised on first use.
  Tensor4<T>& grad_buffer(Var v) {
    Node& nd = node(v);
    if (!nd.grad) nd.grad = Tensor4<T>(nd.value.shape());
    return *nd.grad;
  }

  // Seeds d(out) = out_grad and propagates to every node recorded before out.
  void backward(Var out, const Tensor4<T>& out_grad) {
    if (op_count_ == 0) throw StateError("backward called on a tape with no recorded ops");
    Node& top = node(out);
    if (out_grad.shape() != top.value.shape()) {
      throw ShapeError("backward: output gradient shape " + out_grad.shape().str() +
                       " does not match output shape " + top.value.shape().str());
    }
    for (auto& nd : nodes_) nd.grad.reset();
    trace_.clear();
    top.grad = out_grad;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& nd = nodes_[i];
      if (!nd.backward) continue;
      trace_.push_back(i);
      if (!nd.grad) continue;
      // The closure may append to other nodes' gradients; hold a copy so the
      // reference stays valid.
      const Tensor4<T> g = *nd.grad;
      nd.backward(g, *this);
    }
  }

  // Node ids of the ops visited by the last backward(), in visit order.
  const std::vector<std::size_t>& trace() const { return trace_; }

  std::size_t size() const { return nodes_.size(); }
  std::size_t op_count() const { return op_count_; }

 private:
  struct Node {
    std::string name;
    Tensor4<T> value;
    std::optional<Tensor4<T>> grad;
    Backward backward;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw StateError("Var does not belong to this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw StateError("Var does not belong to this tape");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> trace_;
  std::size_t op_count_ = 0;
};

}  // namespace satt::grad
