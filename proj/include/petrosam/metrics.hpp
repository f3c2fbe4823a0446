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

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "petrosam/error.hpp"
#include "petrosam/grid.hpp"

namespace petrosam::metrics {

template <typename Scalar>
Grid<Scalar> binarize(const Grid<Scalar>& m, double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ValidationError("binarize: threshold must lie in (0, 1)");
  return (m >= static_cast<Scalar>(threshold)).template cast<Scalar>();
}

/// Pixel counts for the edge (foreground) class. Merging is associative.
struct EdgeCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  EdgeCounts& operator+=(const EdgeCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const EdgeCounts&) const = default;
};

template <typename Scalar>
EdgeCounts count_edges(const Grid<Scalar>& pred, const Grid<Scalar>& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ShapeError("edge metrics: prediction and ground truth shapes differ");
  EdgeCounts c;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const bool p = pred.data()[i] > Scalar(0.5), g = gt.data()[i] > Scalar(0.5);
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Column order mirrors the boundary-detection table: mIoU, F1, precision,
/// recall, accuracy. "mIoU" is the edge-class IoU.
struct EdgeMetrics {
  double miou = 0, f1 = 0, precision = 0, recall = 0, accuracy = 0;
  bool degenerate = false;
};

EdgeMetrics edge_metrics(const EdgeCounts& counts);

template <typename Scalar>
EdgeMetrics edge_metrics(const Grid<Scalar>& pred, const Grid<Scalar>& gt) {
  return edge_metrics(count_edges(pred, gt));
}

/// Foreground IoU implied by an F1 score computed from the same counts.
inline double iou_from_f1(double f1) { return f1 / (2.0 - f1); }

/// C x C confusion matrix, rows = ground truth, columns = prediction.
class SemanticCounts {
 public:
  explicit SemanticCounts(int classes = kClassCount);

  void add(const LabelGrid& pred, const LabelGrid& gt);
  void add(int gt_class, int pred_class, std::int64_t count = 1);
  SemanticCounts& operator+=(const SemanticCounts& o);

  int classes() const { return static_cast<int>(matrix_.rows()); }
  const Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>& matrix() const { return matrix_; }
  std::int64_t total() const { return matrix_.sum(); }

 private:
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> matrix_;
};

struct SemanticMetrics {
  std::vector<double> per_class_iou;
  std::vector<bool> class_present;  ///< false: absent from both pred and gt, excluded from mIoU
  double miou = 0;
  double accuracy = 0;
  bool degenerate = false;
};

SemanticMetrics semantic_metrics(const SemanticCounts& counts);
SemanticMetrics semantic_metrics(const LabelGrid& pred, const LabelGrid& gt, int classes = kClassCount);

extern const std::array<const char*, kClassCount> kClassNames;

/// Flat "key = value" report lines.
std::map<std::string, double> edge_report(const EdgeMetrics& m);
std::map<std::string, double> semantic_report(const SemanticMetrics& m);

/// Human-readable tables in the column order of the published tables.
std::string format_edge_table(const EdgeMetrics& m);
std::string format_semantic_table(const SemanticMetrics& m);

}  // namespace petrosam::metrics
