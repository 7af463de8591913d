#pragma once

#include <functional>
#include <utility>

#include "motionalign/tensor.hpp"

namespace ma {

template <typename S>
class Graph;

// Handle to a node on a Graph. Cheap to copy; valid until the graph is reset.
template <typename S>
struct Var {
  Graph<S>* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor<S>& val() const;
  const std::vector<int>& dims() const { return val().dims; }
  int dim(int i) const { return val().dims[size_t(i)]; }
  int64_t numel() const { return val().numel(); }
  bool needs_grad() const;
  S item() const {
    MA_CHECK(numel() == 1, "item() on non-scalar");
    return val().v[0];
  }
};

// Reverse-mode autodiff tape. Nodes are appended in execution order, which is
// a topological order, so backward() is a single reverse sweep. Ops skip
// closure registration when no input requires gradients, so momentum-encoder
// passes cost only their forward arithmetic.
template <typename S>
class Graph {
 public:
  struct Node {
    Tensor<S> val;
    Tensor<S> grad;  // allocated on first touch during backward
    std::function<void(Graph&)> back;
    bool needs = false;
  };

  Var<S> leaf(Tensor<S> t, bool needs_grad) {
    nodes_.push_back(Node{std::move(t), {}, nullptr, needs_grad && grad_enabled_});
    return Var<S>{this, int(nodes_.size()) - 1};
  }

  Var<S> constant(Tensor<S> t) { return leaf(std::move(t), false); }

  // For ops: append a result node; `needs` must already account for
  // grad_enabled via want_grad().
  Var<S> push(Tensor<S> t, bool needs) {
    nodes_.push_back(Node{std::move(t), {}, nullptr, needs});
    return Var<S>{this, int(nodes_.size()) - 1};
  }

  bool want_grad(std::initializer_list<Var<S>> inputs) const {
    if (!grad_enabled_) return false;
    for (const auto& x : inputs)
      if (nodes_[size_t(x.id)].needs) return true;
    return false;
  }

  void set_back(Var<S> out, std::function<void(Graph&)> fn) {
    nodes_[size_t(out.id)].back = std::move(fn);
  }

  const Tensor<S>& val(int id) const { return nodes_[size_t(id)].val; }
  Tensor<S>& mutable_val(int id) { return nodes_[size_t(id)].val; }
  bool needs(int id) const { return nodes_[size_t(id)].needs; }

  // Gradient buffer, zero-allocated on demand.
  Tensor<S>& grad(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.empty() && n.val.numel() > 0) n.grad = Tensor<S>::zeros(n.val.dims);
    return n.grad;
  }
  bool grad_touched(int id) const { return !nodes_[size_t(id)].grad.empty(); }

  // Accumulates d(loss)/d(node) for every reachable node below `loss`.
  void backward(Var<S> loss) {
    MA_CHECK(loss.g == this, "var belongs to another graph");
    MA_CHECK(val(loss.id).numel() == 1, "backward needs a scalar loss");
    grad(loss.id).v[0] = S(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (n.back && !n.grad.empty()) n.back(*this);
    }
  }

  void zero_grads() {
    for (auto& n : nodes_) n.grad = Tensor<S>{};
  }

  void reset() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

 private:
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

// Scoped no-grad region (key-encoder forwards, evaluation).
template <typename S>
class NoGrad {
 public:
  explicit NoGrad(Graph<S>& g) : g_(g), prev_(g.grad_enabled()) { g_.set_grad_enabled(false); }
  ~NoGrad() { g_.set_grad_enabled(prev_); }

 private:
  Graph<S>& g_;
  bool prev_;
};

template <typename S>
const Tensor<S>& Var<S>::val() const {
  return g->val(id);
}

template <typename S>
bool Var<S>::needs_grad() const {
  return g->needs(id);
}

}  // namespace ma
