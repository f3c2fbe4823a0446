// Copyright 2026 The Petrosam Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "petrosam/core/tensor.hpp"

namespace petrosam {

/// One value in a reverse-mode autodiff graph. A node owns strong references
/// to its parents, so dropping the final output releases the whole graph;
/// parameters are leaves and outlive every graph built from them.
template <typename Scalar>
class Node {
 public:
  using BackwardFn = std::function<void(Node&)>;

  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;

  bool has_grad() const { return !grad.empty(); }

  Tensor<Scalar>& grad_buffer() {
    if (grad.empty()) grad = Tensor<Scalar>::zeros_like(value);
    return grad;
  }

  void accumulate(const Tensor<Scalar>& g) { grad_buffer().array() += g.array(); }

  const Shape& shape() const { return value.shape(); }
  Index dim(int i) const { return value.dim(i); }
};

template <typename Scalar>
using Var = std::shared_ptr<Node<Scalar>>;

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> value) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  return n;
}

template <typename Scalar>
Var<Scalar> leaf(Tensor<Scalar> value) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

/// Wraps an op result. Parents and the backward closure are kept only when
/// some parent needs a gradient and recording is enabled.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::vector<Var<Scalar>> parents,
                        typename Node<Scalar>::BackwardFn fn) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  if (!grad_enabled()) return n;
  for (const auto& p : parents) {
    if (p && p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

/// Back-propagates from a scalar root. Gradients accumulate into leaves.
template <typename Scalar>
void backward(const Var<Scalar>& root) {
  if (root->value.size() != 1) throw ShapeError("backward() needs a scalar root");
  if (!root->requires_grad) return;

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer().array().setConstant(Scalar(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
  }
  // Interior gradients are no longer needed; leaves keep theirs.
  for (Node<Scalar>* node : order)
    if (!node->parents.empty()) node->grad = Tensor<Scalar>();
}

/// kTruncNormal uses the store's fixed std; kHeNormal uses sqrt(2 / fan_in).
/// Both are truncated at two standard deviations.
enum class Init { kTruncNormal, kHeNormal, kZeros, kOnes };

/// Named, ordered parameter registry shared by every block of a model.
template <typename Scalar>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0, double init_std = 0.02)
      : rng_(seed), init_std_(init_std) {}

  Var<Scalar> add(const std::string& name, Shape shape, Init init = Init::kTruncNormal, double fan_in = 0) {
    for (const auto& [existing, _] : entries_)
      if (existing == name) throw ValidationError("duplicate parameter name: " + name);
    Tensor<Scalar> t(std::move(shape));
    if (init == Init::kOnes) t.array().setOnes();
    if (init == Init::kHeNormal && !(fan_in > 0))
      throw ValidationError("He init for " + name + " needs a positive fan-in");
    if (init == Init::kTruncNormal || init == Init::kHeNormal) {
      const double std = init == Init::kHeNormal ? std::sqrt(2.0 / fan_in) : init_std_;
      std::normal_distribution<double> normal(0.0, std);
      for (Index i = 0; i < t.size(); ++i) {
        double v;
        do v = normal(rng_);
        while (std::abs(v) > 2.0 * std);
        t[i] = static_cast<Scalar>(v);
      }
    }
    auto var = leaf(std::move(t));
    entries_.emplace_back(name, var);
    return var;
  }

  const std::vector<std::pair<std::string, Var<Scalar>>>& entries() const { return entries_; }

  Var<Scalar> find(const std::string& name) const {
    for (const auto& [n, v] : entries_)
      if (n == name) return v;
    return nullptr;
  }

  Var<Scalar> get(const std::string& name) const {
    auto v = find(name);
    if (!v) throw ValidationError("unknown parameter: " + name);
    return v;
  }

  std::vector<std::pair<std::string, Var<Scalar>>> with_prefix(const std::string& prefix) const {
    std::vector<std::pair<std::string, Var<Scalar>>> out;
    for (const auto& e : entries_)
      if (e.first.compare(0, prefix.size(), prefix) == 0) out.push_back(e);
    return out;
  }

  Index count() const {
    Index total = 0;
    for (const auto& [_, v] : entries_) total += v->value.size();
    return total;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v->grad = Tensor<Scalar>();
  }

 private:
  std::vector<std::pair<std::string, Var<Scalar>>> entries_;
  std::mt19937_64 rng_;
  double init_std_;
};

}  // namespace petrosam
