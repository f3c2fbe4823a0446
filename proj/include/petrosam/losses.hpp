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

#include <string>

#include "petrosam/core/tensor.hpp"
#include "petrosam/grid.hpp"

// Edge and semantic objectives. Edge losses take probabilities (after the
// sigmoid) and are sums over pixels; semantic losses take per-pixel class
// probabilities laid out [C, H, W]. Every loss returns its value together
// with the gradient with respect to the prediction.
namespace petrosam::losses {

struct LossConfig {
  double eps_distance = 1.0;
  double eps_dice = 1e-6;
  double lambda_e = 4e-4;
  double lambda_t0 = 1.0;
  double prob_clamp = 1e-7;
  int class_count = kClassCount;
  /// Binarize teacher maps at 0.5 before computing weights and distances.
  bool binarize_teacher = true;

  void validate() const;
};

struct BalanceWeights {
  double beta0 = 0;  ///< positive ratio; weights the negative-pixel term
  double beta1 = 0;  ///< negative ratio; weights the positive-pixel term
  bool degenerate = false;
};

template <typename Scalar>
struct LossValue {
  Scalar value = 0;
  Grid<Scalar> grad;
  bool degenerate = false;
  std::string warning;
};

template <typename Scalar>
struct SemanticLossValue {
  Scalar value = 0;
  Tensor<Scalar> grad;  ///< [C, H, W]
};

/// Positive/negative pixel ratios of a binary mask.
template <typename Scalar>
BalanceWeights class_balance_weights(const Grid<Scalar>& m_g);

/// Class-balanced cross entropy, summed over pixels.
template <typename Scalar>
LossValue<Scalar> edge_bce(const Grid<Scalar>& m, const Grid<Scalar>& m_g,
                           const LossConfig& cfg = {});

/// Exact Euclidean distance from every pixel to the nearest positive pixel.
/// Throws if the mask has no positive pixel.
template <typename Scalar>
Grid<double> distance_map(const Grid<Scalar>& m_g);

/// Inverse-distance weighted log loss over all pixels.
template <typename Scalar>
LossValue<Scalar> edge_distance_loss(const Grid<Scalar>& m, const Grid<Scalar>& m_g,
                                     const LossConfig& cfg = {});

/// Same, with a precomputed distance map.
template <typename Scalar>
LossValue<Scalar> edge_distance_loss_with_map(const Grid<Scalar>& m, const Grid<double>& distance,
                                              const LossConfig& cfg);

/// edge_bce + edge_distance_loss.
template <typename Scalar>
LossValue<Scalar> stage1_loss(const Grid<Scalar>& m, const Grid<Scalar>& m_g,
                              const LossConfig& cfg = {});

/// Linearly decaying teacher weight; epoch must lie in [0, total_epochs).
double lambda_t(int epoch, int total_epochs, double lambda_t0 = 1.0);

/// Ground-truth term plus lambda_t times the teacher term. The teacher map is
/// binarized at 0.5 unless cfg.binarize_teacher is false.
template <typename Scalar>
LossValue<Scalar> stage2_edge_loss(const Grid<Scalar>& m_s, const Grid<Scalar>& m_g,
                                   const Grid<Scalar>& m_t, double lambda,
                                   const LossConfig& cfg = {});

/// Mean over pixels of -ln p[true class].
template <typename Scalar>
SemanticLossValue<Scalar> semantic_ce(const Tensor<Scalar>& y_s, const LabelGrid& y_g,
                                      const LossConfig& cfg = {});

/// Squared-denominator dice loss averaged over classes.
template <typename Scalar>
SemanticLossValue<Scalar> dice_loss(const Tensor<Scalar>& y_s, const LabelGrid& y_g,
                                    const LossConfig& cfg = {});

/// semantic_ce + dice_loss.
template <typename Scalar>
SemanticLossValue<Scalar> semantic_loss(const Tensor<Scalar>& y_s, const LabelGrid& y_g,
                                        const LossConfig& cfg = {});

inline double total_loss(double edge_loss, double sem_loss, double lambda_e) {
  return lambda_e * edge_loss + sem_loss;
}

}  // namespace petrosam::losses
