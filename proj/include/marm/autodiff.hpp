#pragma once

// Reverse-mode differentiation over whole-tensor ops. Each forward op records
// a node holding its value, its parents and a closure that pushes the node's
// gradient into the parents. Graphs are rebuilt every training iteration;
// parameters are long-lived leaves whose gradients accumulate until cleared.

#include <cmath>
#include <functional>
#include <memory>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "marm/tensor.hpp"

namespace marm::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  Tensor<T>& ensure_grad() {
    if (grad.size() != value.size() || grad.shape() != value.shape())
      grad = Tensor<T>(value.shape(), T(0));
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Creates a result node. `fn` runs during backward only when some parent
  // requires a gradient.
  static Var make(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> fn) {
    Var out(std::move(value));
    bool any = false;
    for (auto& p : parents) {
      any = any || p.requires_grad();
      out.node_->parents.push_back(p.node_);
    }
    out.node_->requires_grad = any;
    if (any) out.node_->backward_fn = std::move(fn);
    else out.node_->parents.clear();
    return out;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> t) { return Var<T>(std::move(t), false); }

// Propagates d(loss)/d(node) to every reachable node that requires a gradient.
// Gradients accumulate: calling twice without clearing doubles leaf grads.
template <typename T>
void backward(const Var<T>& loss) {
  MARM_REQUIRE(loss.defined() && loss.size() == 1, "backward() needs a scalar loss, got shape ",
               loss.defined() ? loss.shape() : Shape{});
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS; graphs can be a few hundred nodes deep.
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Intermediate grads are scratch; leaves (no backward_fn) keep accumulating.
  for (Node<T>* n : order)
    if (n->backward_fn) n->grad = Tensor<T>();
  Node<T>& root = *loss.node();
  root.ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
  }
  for (Node<T>* n : order)
    if (n->backward_fn) n->grad = Tensor<T>();
}

enum class Group { psi, phi, theta, latent };

inline std::string_view to_string(Group g) {
  switch (g) {
    case Group::psi: return "psi";
    case Group::phi: return "phi";
    case Group::theta: return "theta";
    case Group::latent: return "latent";
  }
  return "?";
}

// A trainable leaf plus its Adam moments.
template <typename T>
struct Parameter {
  Var<T> var;
  Group group = Group::psi;
  Tensor<T> m, v;
  long step = 0;

  Parameter() = default;
  Parameter(Tensor<T> init, Group g) : var(std::move(init), true), group(g) {
    m = Tensor<T>(var.shape(), T(0));
    v = Tensor<T>(var.shape(), T(0));
  }

  const Tensor<T>& value() const { return var.value(); }
  Tensor<T>& mutable_value() { return var.mutable_value(); }
  const Shape& shape() const { return var.shape(); }
  std::size_t size() const { return var.size(); }
};

struct AdamOptions {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update for every parameter, then clears grads.
// A parameter that received no gradient at all is a contract violation unless
// `allow_missing` is set (unused sub-networks, e.g. ARM weights when M = 0).
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamOptions& opt, bool allow_missing = false) {
  for (Parameter<T>* p : params) {
    if (!p->var.has_grad()) {
      MARM_REQUIRE(allow_missing, "adam_step: parameter without gradient");
      continue;
    }
    ++p->step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(p->step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(p->step));
    const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
    const T step_size = static_cast<T>(opt.lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(opt.eps);
    T* w = p->var.mutable_value().data();
    const T* g = p->var.grad().data();
    T* m = p->m.data();
    T* v = p->v.data();
    const std::size_t n = p->var.size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
    p->var.zero_grad();
  }
}

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (Parameter<T>* p : params) p->var.zero_grad();
}

}  // namespace marm::ad
