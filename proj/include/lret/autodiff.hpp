#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "lret/tensor.hpp"

namespace lret {

struct Node;
using Value = std::shared_ptr<Node>;

/// One recorded operation in the forward graph. `backprop` reads this node's
/// gradient and accumulates into the inputs' gradients.
struct Node {
  Tensor val;
  Tensor grad;  // allocated lazily during backward
  bool needs_grad = false;
  bool grad_ready = false;
  bool backward_done = false;
  std::string tag;  // parameter name or layer label, for diagnostics
  std::vector<Value> inputs;
  std::function<void(Node&)> backprop;

  Tensor& ensure_grad() {
    if (!grad_ready) {
      grad = Tensor::zeros(val.shape());
      grad_ready = true;
    }
    return grad;
  }
};

inline Value make_constant(Tensor t, std::string tag = {}) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->tag = std::move(tag);
  return n;
}

inline Value make_leaf(Tensor t, bool needs_grad = true, std::string tag = {}) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->needs_grad = needs_grad;
  n->tag = std::move(tag);
  return n;
}

inline Value make_node(Tensor val, std::vector<Value> inputs,
                       std::function<void(Node&)> backprop, std::string tag = {}) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs) {
    if (in && in->needs_grad) {
      n->needs_grad = true;
      break;
    }
  }
  if (n->needs_grad) n->backprop = std::move(backprop);
  n->tag = std::move(tag);
  return n;
}

/// Reverse-mode sweep from a scalar root. Visits each reachable node exactly
/// once in reverse topological order; gradients of shared inputs accumulate.
inline void backward(const Value& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->val.size() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (root->backward_done) throw std::logic_error("backward: already run on this graph; re-run forward first");

  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  if (root->needs_grad) {
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
  }
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node* in = node->inputs[idx++].get();
      if (in && in->needs_grad && seen.insert(in).second) {
        stack.emplace_back(in, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->backward_done = true;
  if (order.empty()) return;
  root->ensure_grad()[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad_ready) n->backprop(*n);
  }
}

}  // namespace lret
