#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lret/autodiff.hpp"
#include "lret/ops.hpp"
#include "lret/rng.hpp"
#include "lret/tensor.hpp"

namespace lret {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

/// Ordered, uniquely named parameter registry. Insertion order defines the
/// initialization and checkpoint ordering.
class ParamStore {
 public:
  Param& add(const std::string& name, Tensor init, bool trainable = true) {
    if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->grad = Tensor::zeros(init.shape());
    p->value = std::move(init);
    p->trainable = trainable;
    Param* raw = p.get();
    by_name_[name] = raw;
    order_.push_back(std::move(p));
    return *raw;
  }

  Param& get(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *it->second;
  }
  const Param& get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *it->second;
  }
  bool has(const std::string& name) const { return by_name_.count(name) != 0; }

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& p : order_) fn(*p);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& p : order_) fn(*p);
  }

  size_t count() const { return order_.size(); }

  int64_t trainable_size() const {
    int64_t n = 0;
    for (const auto& p : order_) {
      if (p->trainable) n += p->value.size();
    }
    return n;
  }

  void zero_grads() {
    for (auto& p : order_) std::fill(p->grad.vec().begin(), p->grad.vec().end(), 0.0f);
  }

 private:
  std::vector<std::unique_ptr<Param>> order_;
  std::unordered_map<std::string, Param*> by_name_;
};

/// Per-forward bookkeeping: mode, dropout RNG, and the leaf nodes created for
/// each parameter so gradients can be harvested after backward().
struct Tape {
  Mode mode = Mode::Train;
  Rng* rng = nullptr;
  std::vector<std::pair<Param*, Value>> leaves;

  Value use(Param& p) {
    Value v = make_leaf(p.value, p.trainable, p.name);
    leaves.emplace_back(&p, v);
    return v;
  }

  /// Copies leaf gradients back into the store. Parameters whose leaves were
  /// never reached by backward keep zero gradient.
  void harvest() {
    for (auto& [p, v] : leaves) {
      if (v->grad_ready) accumulate(p->grad, v->grad);
    }
  }
};

/// Kaiming-uniform fan-in init: U(-b, b) with b = sqrt(6 / fan_in).
inline Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / fan_in);
  for (int64_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<float>(rng.uniform(-bound, bound));
  }
  return t;
}

}  // namespace lret
