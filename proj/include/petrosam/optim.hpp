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
#include <numbers>
#include <vector>

#include "petrosam/core/autograd.hpp"
#include "petrosam/error.hpp"

namespace petrosam {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 2e-4;  ///< L2 penalty added to the gradient
};

/// Adam with coupled L2 weight decay. Parameters without a gradient in a step
/// are left untouched, including their moment estimates, so ablated parts
/// keep their exact values.
template <typename Scalar>
class Adam {
 public:
  Adam(ParamStore<Scalar>& store, AdamOptions opts) : store_(store), opts_(opts) {
    for (const auto& [_, v] : store_.entries()) {
      m_.push_back(Eigen::ArrayXd::Zero(v->value.size()));
      v_.push_back(Eigen::ArrayXd::Zero(v->value.size()));
      steps_.push_back(0);
    }
  }

  void set_lr(double lr) { opts_.lr = lr; }
  double lr() const { return opts_.lr; }

  void step() {
    const auto& entries = store_.entries();
    if (entries.size() != m_.size()) throw RuntimeFailure("Adam: parameter store changed after construction");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& p = *entries[i].second;
      if (!p.has_grad()) continue;
      const int t = ++steps_[i];
      Eigen::ArrayXd value = p.value.array().template cast<double>();
      const Eigen::ArrayXd g = p.grad.array().template cast<double>() + opts_.weight_decay * value;
      m_[i] = opts_.beta1 * m_[i] + (1 - opts_.beta1) * g;
      v_[i] = opts_.beta2 * v_[i] + (1 - opts_.beta2) * g.square();
      const double c1 = 1 - std::pow(opts_.beta1, t);
      const double c2 = 1 - std::pow(opts_.beta2, t);
      value -= (opts_.lr / c1) * m_[i] / ((v_[i] / c2).sqrt() + opts_.eps);
      p.value.array() = value.template cast<Scalar>();
    }
  }

 private:
  ParamStore<Scalar>& store_;
  AdamOptions opts_;
  std::vector<Eigen::ArrayXd> m_, v_;
  std::vector<int> steps_;
};

/// Cosine annealing with warm restarts, evaluated at a (possibly fractional)
/// epoch. Restart periods grow by t_mult.
inline double cosine_warm_restart_lr(double epoch, double base_lr, double min_lr, double t0, double t_mult = 1) {
  if (t0 <= 0) throw ValidationError("cosine schedule: T_0 must be positive");
  if (t_mult < 1) throw ValidationError("cosine schedule: T_mult must be >= 1");
  double t = epoch, period = t0;
  while (t >= period) {
    t -= period;
    period *= t_mult;
  }
  return min_lr + 0.5 * (base_lr - min_lr) * (1 + std::cos(std::numbers::pi * t / period));
}

}  // namespace petrosam
