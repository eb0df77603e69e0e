#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "raincast/tensor.hpp"

namespace raincast {

// Define-by-run reverse-mode autodiff. Values are computed eagerly; each op
// records its parents and a vector-Jacobian-product that is itself built
// from ops, so gradients are ordinary graph values and can be differentiated
// again (as the gradient-penalty objective requires). vjp closures may
// capture parent variables but never the op's own output, which keeps the
// graph acyclic and lets shared_ptr reclaim it.

template <class T>
class Var;

namespace detail {
// Thread-local "grad mode": when disabled, newly created ops do not record
// the graph. The reverse pass runs with it disabled unless create_graph.
inline thread_local int no_grad_depth = 0;
inline bool grad_enabled() { return no_grad_depth == 0; }
}  // namespace detail

struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  std::vector<Var<T>> parents;
  // Maps the gradient at this node to gradients at each parent (one entry
  // per parent; entries for non-differentiable parents stay empty).
  std::function<std::vector<Var<T>>(const Var<T>&)> vjp;
  const char* op = "leaf";
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  // Leaf constructors.
  static Var constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    return Var(std::move(n));
  }
  static Var param(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& handle() const { return node_; }

  // Same value, detached from the graph.
  Var detach() const { return constant(node_->value); }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Registers an op node. `parents` may include non-grad variables; the node
// requires grad iff any parent does and grad mode is on.
template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<std::vector<Var<T>>(const Var<T>&)> vjp,
               const char* op_name) {
  if (!detail::grad_enabled()) return Var<T>::constant(std::move(value));
  bool needs_grad = false;
  for (const Var<T>& p : parents) {
    if (p.defined() && p.requires_grad()) {
      needs_grad = true;
      break;
    }
  }
  if (!needs_grad) return Var<T>::constant(std::move(value));
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->vjp = std::move(vjp);
  n->op = op_name;
  return Var<T>(std::move(n));
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);  // defined in ops.hpp

// Gradients of a scalar output with respect to `inputs`. When create_graph
// is true the returned variables carry their own graph and can be
// differentiated again; otherwise the reverse pass runs detached. Inputs the
// output does not reach get zero gradients.
template <class T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs,
                         bool create_graph = false) {
  require_shape(output.defined() && output.shape().numel() == 1,
                "grad: output must be a defined scalar");

  // Reverse reachability: a node matters iff it can reach one of `inputs`.
  std::unordered_set<const Node<T>*> targets;
  for (const Var<T>& v : inputs) {
    require_shape(v.defined(), "grad: undefined input");
    targets.insert(v.node());
  }
  std::unordered_map<const Node<T>*, bool> reaches;
  std::function<bool(const Node<T>*)> mark = [&](const Node<T>* n) -> bool {
    if (auto it = reaches.find(n); it != reaches.end()) return it->second;
    reaches[n] = false;  // placeholder; DAG, so no true cycles
    bool r = targets.count(n) > 0;
    for (const Var<T>& p : n->parents) {
      if (p.defined() && p.requires_grad() && mark(p.node())) r = true;
    }
    return reaches[n] = r;
  };
  mark(output.node());

  // Topological order over the relevant subgraph.
  std::vector<Node<T>*> order;
  std::unordered_set<const Node<T>*> seen;
  std::function<void(Node<T>*)> topo = [&](Node<T>* n) {
    if (!reaches[n] || seen.count(n)) return;
    seen.insert(n);
    for (const Var<T>& p : n->parents) {
      if (p.defined() && p.requires_grad()) topo(p.node());
    }
    order.push_back(n);
  };
  topo(output.node());

  std::unordered_map<const Node<T>*, Var<T>> grads;
  grads[output.node()] = Var<T>::constant(Tensor<T>::scalar(T(1)));

  std::unique_ptr<NoGradGuard> guard;
  if (!create_graph) guard = std::make_unique<NoGradGuard>();

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    auto git = grads.find(n);
    if (git == grads.end() || !n->vjp) continue;
    const std::vector<Var<T>> parent_grads = n->vjp(git->second);
    require_shape(parent_grads.size() == n->parents.size(),
                  "grad: vjp arity mismatch");
    for (std::size_t i = 0; i < parent_grads.size(); ++i) {
      const Var<T>& p = n->parents[i];
      const Var<T>& g = parent_grads[i];
      if (!p.defined() || !p.requires_grad() || !reaches[p.node()] || !g.defined()) {
        continue;
      }
      require_shape(g.shape() == p.shape(), "grad: vjp shape mismatch");
      auto acc = grads.find(p.node());
      if (acc == grads.end()) {
        grads.emplace(p.node(), g);
      } else {
        acc->second = add(acc->second, g);
      }
    }
  }

  std::vector<Var<T>> out;
  out.reserve(inputs.size());
  for (const Var<T>& v : inputs) {
    auto it = grads.find(v.node());
    if (it != grads.end()) {
      out.push_back(it->second);
    } else {
      out.push_back(Var<T>::constant(Tensor<T>(v.shape())));
    }
  }
  return out;
}

}  // namespace raincast
