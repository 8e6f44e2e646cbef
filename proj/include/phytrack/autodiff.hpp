#pragma once

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "phytrack/tensor.hpp"

namespace phytrack {

// Reverse-mode automatic differentiation over Tensor.
// Graphs are built eagerly by the ops in ops.hpp; backward() walks the tape.
struct Node {
  Tensor val;
  Tensor grad;                       // allocated lazily, same shape as val
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // scatters this->grad into parents

  Tensor& ensure_grad() {
    if (!grad.size()) {
      grad.reshape(val.shape());
    }
    return grad;
  }
};

using Var = std::shared_ptr<Node>;

inline Var make_constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = false;
  return n;
}

inline Var make_parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = true;
  return n;
}

inline Var make_result(Tensor t, std::vector<Var> parents,
                       std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

// Accumulates d(root)/d(param) into every reachable parameter's grad.
// root must be scalar.
inline void backward(const Var& root) {
  if (root->val.size() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!root->requires_grad) return;

  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size()) n->backprop(*n);
  }
}

// Named parameter registry. Layers fetch (and on first use create) their
// weights here; the optimizer and checkpoint I/O iterate it by sorted name.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  Var create(const std::string& name, Tensor init) {
    auto [it, inserted] = params_.emplace(name, make_parameter(std::move(init)));
    if (!inserted)
      throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    return it->second;
  }

  Var get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
      throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Var>& all() const { return params_; }

  void zero_grads() {
    for (auto& [name, p] : params_) p->grad = Tensor();
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::map<std::string, Var> params_;
  std::mt19937_64 rng_;
};

// Adam with optional learning-rate schedule handled by the caller.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(ParamStore& store) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [name, p] : store.all()) {
      if (!p->grad.size()) continue;
      auto& m = m_[name];
      auto& v = v_[name];
      if (!m.size()) m.reshape(p->val.shape());
      if (!v.size()) v.reshape(p->val.shape());
      for (std::size_t i = 0; i < p->val.size(); ++i) {
        const double g = p->grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        p->val[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

}  // namespace phytrack
