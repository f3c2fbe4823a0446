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

#include "petrosam/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace petrosam::losses {
namespace {

template <typename Scalar>
void require_same(const Grid<Scalar>& a, const Grid<Scalar>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}

// One-dimensional squared distance transform (lower envelope of parabolas).
void squared_edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // k == 0: replace the only parabola.
      v[0] = q;
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double diff = q - v[k];
    d[q] = diff * diff + f[v[k]];
  }
}

template <typename Scalar>
void check_labels(const Tensor<Scalar>& y_s, const LabelGrid& y_g, int classes) {
  if (y_s.rank() != 3 || y_s.dim(0) != classes || y_s.dim(1) != y_g.rows() ||
      y_s.dim(2) != y_g.cols())
    throw ShapeError("semantic loss: prediction " + shape_str(y_s.shape()) + " vs labels " +
                     std::to_string(y_g.rows()) + "x" + std::to_string(y_g.cols()));
  if ((y_g < 0).any() || (y_g >= classes).any())
    throw ValidationError("semantic loss: class index outside [0, " + std::to_string(classes) +
                          ")");
}

// Class-balanced BCE against a soft or binary target t in [0,1].
template <typename Scalar>
LossValue<Scalar> balanced_bce(const Grid<Scalar>& m, const Grid<Scalar>& t, const LossConfig& cfg) {
  require_same(m, t, "edge_bce");
  if (m.size() == 0) throw ValidationError("edge_bce: empty mask");
  const double pos = static_cast<double>(t.template cast<double>().sum());
  const double total = static_cast<double>(t.size());
  const double beta0 = pos / total, beta1 = (total - pos) / total;
  const Scalar lo = static_cast<Scalar>(cfg.prob_clamp), hi = Scalar(1) - lo;

  LossValue<Scalar> out;
  out.grad = Grid<Scalar>::Zero(m.rows(), m.cols());
  double acc = 0;
  for (Index i = 0; i < m.size(); ++i) {
    const Scalar raw = m.data()[i];
    const Scalar p = std::clamp(raw, lo, hi);
    const double tv = static_cast<double>(t.data()[i]);
    acc -= beta1 * tv * std::log(static_cast<double>(p)) +
           beta0 * (1.0 - tv) * std::log(1.0 - static_cast<double>(p));
    if (raw > lo && raw < hi)
      out.grad.data()[i] = static_cast<Scalar>(-beta1 * tv / p + beta0 * (1.0 - tv) / (1.0 - p));
  }
  out.value = static_cast<Scalar>(acc);
  if (pos == 0 || pos == total) {
    out.degenerate = true;
    out.warning = pos == 0 ? "edge target has no positive pixels"
                           : "edge target has no negative pixels";
  }
  return out;
}

template <typename Scalar>
Grid<Scalar> binarized(const Grid<Scalar>& m) {
  return (m >= Scalar(0.5)).template cast<Scalar>();
}

template <typename Scalar>
void add_into(LossValue<Scalar>& acc, const LossValue<Scalar>& term, double weight) {
  acc.value += static_cast<Scalar>(weight) * term.value;
  acc.grad += static_cast<Scalar>(weight) * term.grad;
  if (term.degenerate) {
    acc.degenerate = true;
    if (!acc.warning.empty()) acc.warning += "; ";
    acc.warning += term.warning;
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(eps_distance > 0)) throw ValidationError("eps_distance must be positive");
  if (!(eps_dice > 0)) throw ValidationError("eps_dice must be positive");
  if (!(lambda_e >= 0)) throw ValidationError("lambda_e must be non-negative");
  if (!(lambda_t0 >= 0)) throw ValidationError("lambda_t0 must be non-negative");
  if (!(prob_clamp > 0 && prob_clamp < 0.5)) throw ValidationError("prob_clamp must lie in (0, 0.5)");
  if (class_count < 2) throw ValidationError("class_count must be at least 2");
}

template <typename Scalar>
BalanceWeights class_balance_weights(const Grid<Scalar>& m_g) {
  if (m_g.size() == 0) throw ValidationError("class_balance_weights: empty mask");
  const double total = static_cast<double>(m_g.size());
  const double pos = static_cast<double>((m_g > Scalar(0.5)).count());
  BalanceWeights w;
  w.beta0 = pos / total;
  w.beta1 = (total - pos) / total;
  w.degenerate = (pos == 0 || pos == total);
  return w;
}

template <typename Scalar>
LossValue<Scalar> edge_bce(const Grid<Scalar>& m, const Grid<Scalar>& m_g, const LossConfig& cfg) {
  return balanced_bce(m, m_g, cfg);
}

template <typename Scalar>
Grid<double> distance_map(const Grid<Scalar>& m_g) {
  const Index h = m_g.rows(), w = m_g.cols();
  if (!(m_g > Scalar(0.5)).any()) throw ValidationError("distance map undefined: mask has no positive pixel");
  const double inf = 1e20;
  Grid<double> sq(h, w);
  std::vector<double> f, d;
  f.resize(static_cast<std::size_t>(h));
  d.resize(static_cast<std::size_t>(h));
  for (Index x = 0; x < w; ++x) {
    for (Index y = 0; y < h; ++y) f[y] = m_g(y, x) > Scalar(0.5) ? 0.0 : inf;
    squared_edt_1d(f, d);
    for (Index y = 0; y < h; ++y) sq(y, x) = d[y];
  }
  f.resize(static_cast<std::size_t>(w));
  d.resize(static_cast<std::size_t>(w));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) f[x] = sq(y, x);
    squared_edt_1d(f, d);
    for (Index x = 0; x < w; ++x) sq(y, x) = d[x];
  }
  return sq.sqrt();
}

template <typename Scalar>
LossValue<Scalar> edge_distance_loss_with_map(const Grid<Scalar>& m, const Grid<double>& distance,
                                              const LossConfig& cfg) {
  if (m.rows() != distance.rows() || m.cols() != distance.cols())
    throw ShapeError("edge_distance_loss: distance map shape mismatch");
  const Scalar lo = static_cast<Scalar>(cfg.prob_clamp), hi = Scalar(1) - lo;
  LossValue<Scalar> out;
  out.grad = Grid<Scalar>::Zero(m.rows(), m.cols());
  double acc = 0;
  for (Index i = 0; i < m.size(); ++i) {
    const Scalar raw = m.data()[i];
    const Scalar p = std::clamp(raw, lo, hi);
    const double weight = 1.0 / (distance.data()[i] + cfg.eps_distance);
    acc -= weight * std::log(static_cast<double>(p));
    if (raw > lo && raw < hi) out.grad.data()[i] = static_cast<Scalar>(-weight / p);
  }
  out.value = static_cast<Scalar>(acc);
  return out;
}

template <typename Scalar>
LossValue<Scalar> edge_distance_loss(const Grid<Scalar>& m, const Grid<Scalar>& m_g,
                                     const LossConfig& cfg) {
  require_same(m, m_g, "edge_distance_loss");
  return edge_distance_loss_with_map(m, distance_map(m_g), cfg);
}

template <typename Scalar>
LossValue<Scalar> stage1_loss(const Grid<Scalar>& m, const Grid<Scalar>& m_g, const LossConfig& cfg) {
  LossValue<Scalar> out = edge_bce(m, m_g, cfg);
  const LossValue<Scalar> dist = edge_distance_loss(m, m_g, cfg);
  out.value += dist.value;
  out.grad += dist.grad;
  return out;
}

double lambda_t(int epoch, int total_epochs, double lambda_t0) {
  if (total_epochs <= 0) throw ValidationError("lambda_t: total_epochs must be positive");
  if (epoch < 0 || epoch >= total_epochs)
    throw ValidationError("lambda_t: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(total_epochs) + ")");
  return lambda_t0 * (1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs));
}

template <typename Scalar>
LossValue<Scalar> stage2_edge_loss(const Grid<Scalar>& m_s, const Grid<Scalar>& m_g,
                                   const Grid<Scalar>& m_t, double lambda, const LossConfig& cfg) {
  LossValue<Scalar> out = stage1_loss(m_s, m_g, cfg);
  if (lambda == 0.0) return out;
  require_same(m_s, m_t, "stage2_edge_loss");
  const Grid<Scalar> pseudo = binarized(m_t);
  add_into(out, balanced_bce(m_s, cfg.binarize_teacher ? pseudo : m_t, cfg), lambda);
  if ((pseudo > Scalar(0.5)).any()) {
    add_into(out, edge_distance_loss_with_map(m_s, distance_map(pseudo), cfg), lambda);
  } else {
    out.degenerate = true;
    if (!out.warning.empty()) out.warning += "; ";
    out.warning += "teacher pseudo-label has no positive pixels; distance term skipped";
  }
  return out;
}

template <typename Scalar>
SemanticLossValue<Scalar> semantic_ce(const Tensor<Scalar>& y_s, const LabelGrid& y_g,
                                      const LossConfig& cfg) {
  check_labels(y_s, y_g, cfg.class_count);
  const Index hw = y_g.size();
  const Scalar lo = static_cast<Scalar>(cfg.prob_clamp);
  SemanticLossValue<Scalar> out{0, Tensor<Scalar>(y_s.shape())};
  double acc = 0;
  for (Index i = 0; i < hw; ++i) {
    const Index k = y_g.data()[i] * hw + i;
    const Scalar raw = y_s[k];
    const Scalar p = std::max(raw, lo);
    acc -= std::log(static_cast<double>(p));
    if (raw > lo) out.grad[k] = static_cast<Scalar>(-1.0 / (static_cast<double>(p) * hw));
  }
  out.value = static_cast<Scalar>(acc / static_cast<double>(hw));
  return out;
}

template <typename Scalar>
SemanticLossValue<Scalar> dice_loss(const Tensor<Scalar>& y_s, const LabelGrid& y_g,
                                    const LossConfig& cfg) {
  check_labels(y_s, y_g, cfg.class_count);
  const int classes = cfg.class_count;
  const Index hw = y_g.size();
  SemanticLossValue<Scalar> out{0, Tensor<Scalar>(y_s.shape())};
  double mean_ratio = 0;
  for (int c = 0; c < classes; ++c) {
    double inter = 0, sq = 0;
    for (Index i = 0; i < hw; ++i) {
      const double p = static_cast<double>(y_s[c * hw + i]);
      const double y = y_g.data()[i] == c ? 1.0 : 0.0;
      inter += y * p;
      sq += y * y + p * p + cfg.eps_dice;
    }
    const double ratio = 2.0 * inter / sq;
    mean_ratio += ratio / classes;
    for (Index i = 0; i < hw; ++i) {
      const double p = static_cast<double>(y_s[c * hw + i]);
      const double y = y_g.data()[i] == c ? 1.0 : 0.0;
      const double d_ratio = (2.0 * y * sq - 2.0 * inter * 2.0 * p) / (sq * sq);
      out.grad[c * hw + i] = static_cast<Scalar>(-d_ratio / classes);
    }
  }
  out.value = static_cast<Scalar>(1.0 - mean_ratio);
  return out;
}

template <typename Scalar>
SemanticLossValue<Scalar> semantic_loss(const Tensor<Scalar>& y_s, const LabelGrid& y_g,
                                        const LossConfig& cfg) {
  SemanticLossValue<Scalar> out = semantic_ce(y_s, y_g, cfg);
  const SemanticLossValue<Scalar> dice = dice_loss(y_s, y_g, cfg);
  out.value += dice.value;
  out.grad.array() += dice.grad.array();
  return out;
}

#define PETROSAM_INSTANTIATE_LOSSES(S)                                                        \
  template BalanceWeights class_balance_weights(const Grid<S>&);                             \
  template LossValue<S> edge_bce(const Grid<S>&, const Grid<S>&, const LossConfig&);         \
  template Grid<double> distance_map(const Grid<S>&);                                        \
  template LossValue<S> edge_distance_loss(const Grid<S>&, const Grid<S>&, const LossConfig&); \
  template LossValue<S> edge_distance_loss_with_map(const Grid<S>&, const Grid<double>&,     \
                                                    const LossConfig&);                      \
  template LossValue<S> stage1_loss(const Grid<S>&, const Grid<S>&, const LossConfig&);      \
  template LossValue<S> stage2_edge_loss(const Grid<S>&, const Grid<S>&, const Grid<S>&,     \
                                         double, const LossConfig&);                         \
  template SemanticLossValue<S> semantic_ce(const Tensor<S>&, const LabelGrid&,              \
                                            const LossConfig&);                              \
  template SemanticLossValue<S> dice_loss(const Tensor<S>&, const LabelGrid&,                \
                                          const LossConfig&);                                \
  template SemanticLossValue<S> semantic_loss(const Tensor<S>&, const LabelGrid&,            \
                                              const LossConfig&);

PETROSAM_INSTANTIATE_LOSSES(float)
PETROSAM_INSTANTIATE_LOSSES(double)

#undef PETROSAM_INSTANTIATE_LOSSES

}  // namespace petrosam::losses
