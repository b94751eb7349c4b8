#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "matwm/core/tensor.hpp"

namespace matwm {

// Reverse-mode tape. Each op builds a Node holding its forward value and a
// closure that routes the node's cotangent to its parents. Graphs are built
// per training step and dropped afterwards; parameter leaves persist and
// accumulate gradients until the optimizer clears them.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& ensure_grad() {
    if (!grad_ready) {
      grad = Tensor<T>(value.shape());
      grad_ready = true;
    }
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& val() const { return node_->value; }
  Tensor<T>& val() { return node_->value; }
  Tensor<T>& grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_ && node_->grad_ready; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad() {
    if (node_ && node_->grad_ready) node_->grad.fill(T(0));
  }

  std::shared_ptr<Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Node factory used by every op.
template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backward) {
  bool req = false;
  Var<T> out(std::move(value), false);
  auto& n = *out.node();
  n.parents.reserve(parents.size());
  for (auto& p : parents) {
    if (!p.defined()) throw std::invalid_argument("make_node: undefined parent");
    req = req || p.node()->requires_grad;
    n.parents.push_back(p.node());
  }
  n.requires_grad = req;
  if (req) n.backward = std::move(backward);
  return out;
}

// Runs reverse accumulation from a scalar loss. Iterative topological order;
// graphs for 64-step sequence batches are deep enough to overflow a recursive
// DFS.
template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.node()->value.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (!loss.node()->requires_grad) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  struct Frame {
    Node<T>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<T>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad_ready) n->backward(*n);
  }
}

}  // namespace matwm
