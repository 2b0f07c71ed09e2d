#pragma once

#include <deque>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tide/param.hpp"
#include "tide/tensor.hpp"

namespace tide {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Every forward records one node per op; backward walks
// the nodes in reverse creation order, so gradient accumulation order is
// deterministic and two backward passes over the same recording are
// bit-identical.
class Tape {
 public:
  using PullFn = std::function<void(Tape&, Var)>;

  Var leaf(Tensor value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr, {});
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var param(Parameter& p) { return push(p.value, p.trainable, &p, {}); }

  // Records an op node. `pull` reads this node's grad and accumulates into
  // parents; it is only invoked when the node's grad is non-empty.
  Var op(Tensor value, std::vector<Var> parents, PullFn pull) {
    bool req = false;
    for (Var v : parents) req = req || node(v).requires_grad;
    Var out = push(std::move(value), req, nullptr, std::move(pull));
    return out;
  }

  const Tensor& val(Var v) const { return node(v).value; }

  bool requires_grad(Var v) const { return node(v).requires_grad; }

  bool has_grad(Var v) const { return !node(v).grad.empty(); }

  const Tensor& grad(Var v) const { return node(v).grad; }

  // Accumulates `delta` into v's gradient, honoring the requires-grad flag.
  void accum(Var v, const Tensor& delta) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = delta;
      return;
    }
    check_same_shape(n.grad, delta, "grad accum");
    double* g = n.grad.data();
    const double* d = delta.data();
    for (int64_t i = 0; i < delta.size(); ++i) g[i] += d[i];
  }

  Tensor& grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void backward(Var loss) {
    Node& ln = node(loss);
    if (ln.value.size() != 1) throw std::logic_error("backward: loss must be scalar");
    if (!ln.requires_grad) return;
    ln.grad = Tensor::scalar(1.0);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.pull) n.pull(*this, Var{i});
      if (n.param) {
        if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
        double* g = n.param->grad.data();
        const double* d = n.grad.data();
        for (int64_t j = 0; j < n.grad.size(); ++j) g[j] += d[j];
      }
    }
  }

  void clear() { nodes_.clear(); }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    PullFn pull;
  };

  Node& node(Var v) { return nodes_.at(static_cast<size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<size_t>(v.id)); }

  Var push(Tensor value, bool req, Parameter* p, PullFn pull) {
    Node n;
    n.value = std::move(value);
    n.param = p;
    n.requires_grad = req;
    n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::deque<Node> nodes_;
};

}  // namespace tide
