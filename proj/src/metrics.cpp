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

#include "petrosam/metrics.hpp"

#include <cstdio>

namespace petrosam::metrics {
namespace {

double ratio(std::int64_t num, std::int64_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

const std::array<const char*, kClassCount> kClassNames = {"background", "feldspar", "debris",
                                                          "quartz"};

EdgeMetrics edge_metrics(const EdgeCounts& c) {
  EdgeMetrics m;
  m.precision = ratio(c.tp, c.tp + c.fp, m.degenerate);
  m.recall = ratio(c.tp, c.tp + c.fn, m.degenerate);
  m.miou = ratio(c.tp, c.tp + c.fp + c.fn, m.degenerate);
  m.accuracy = ratio(c.tp + c.tn, c.total(), m.degenerate);
  // F1 from counts: 2tp / (2tp + fp + fn), equal to 2PR/(P+R) when defined.
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, m.degenerate);
  return m;
}

SemanticCounts::SemanticCounts(int classes)
    : matrix_(Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(classes, classes)) {
  if (classes < 1) throw ValidationError("semantic metrics: class count must be positive");
}

void SemanticCounts::add(int gt_class, int pred_class, std::int64_t count) {
  const int c = classes();
  if (gt_class < 0 || gt_class >= c || pred_class < 0 || pred_class >= c)
    throw ValidationError("semantic metrics: class index outside [0, " + std::to_string(c) + ")");
  matrix_(gt_class, pred_class) += count;
}

void SemanticCounts::add(const LabelGrid& pred, const LabelGrid& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ShapeError("semantic metrics: prediction and ground truth shapes differ");
  for (Eigen::Index i = 0; i < pred.size(); ++i) add(gt.data()[i], pred.data()[i]);
}

SemanticCounts& SemanticCounts::operator+=(const SemanticCounts& o) {
  if (o.classes() != classes()) throw ValidationError("semantic metrics: class count mismatch");
  matrix_ += o.matrix_;
  return *this;
}

SemanticMetrics semantic_metrics(const SemanticCounts& counts) {
  const auto& cm = counts.matrix();
  const int c = counts.classes();
  SemanticMetrics m;
  m.per_class_iou.assign(c, 0.0);
  m.class_present.assign(c, false);
  int present = 0;
  double iou_sum = 0;
  for (int k = 0; k < c; ++k) {
    const std::int64_t tp = cm(k, k);
    const std::int64_t uni = cm.row(k).sum() + cm.col(k).sum() - tp;
    if (uni == 0) {
      m.degenerate = true;
      continue;
    }
    m.class_present[k] = true;
    m.per_class_iou[k] = static_cast<double>(tp) / static_cast<double>(uni);
    iou_sum += m.per_class_iou[k];
    ++present;
  }
  m.miou = present ? iou_sum / present : 0.0;
  m.accuracy = ratio(cm.trace(), counts.total(), m.degenerate);
  return m;
}

SemanticMetrics semantic_metrics(const LabelGrid& pred, const LabelGrid& gt, int classes) {
  SemanticCounts counts(classes);
  counts.add(pred, gt);
  return semantic_metrics(counts);
}

std::map<std::string, double> edge_report(const EdgeMetrics& m) {
  return {{"mIoU", m.miou},
          {"F1", m.f1},
          {"precision", m.precision},
          {"recall", m.recall},
          {"accuracy", m.accuracy}};
}

std::map<std::string, double> semantic_report(const SemanticMetrics& m) {
  std::map<std::string, double> out{{"mIoU", m.miou}, {"accuracy", m.accuracy}};
  for (std::size_t k = 0; k < m.per_class_iou.size(); ++k) {
    const std::string name = k < kClassNames.size() ? kClassNames[k] : "class" + std::to_string(k);
    out["IoU_" + name] = m.per_class_iou[k];
  }
  return out;
}

std::string format_edge_table(const EdgeMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%-8s %-9s %-10s %-8s %-8s\n%6.1f%%  %-9.3f %-10.3f %-8.3f %-8.3f\n", "mIoU",
                "F1-Score", "Precision", "Recall", "Accuracy", 100.0 * m.miou, m.f1, m.precision,
                m.recall, m.accuracy);
  return buf;
}

std::string format_semantic_table(const SemanticMetrics& m) {
  std::string head = "mIoU    ";
  std::string row;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%5.1f%%  ", 100.0 * m.miou);
  row += buf;
  for (std::size_t k = 0; k < m.per_class_iou.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%-11s", k < kClassNames.size() ? kClassNames[k] : "class");
    head += buf;
    if (m.class_present[k])
      std::snprintf(buf, sizeof buf, "%5.1f%%     ", 100.0 * m.per_class_iou[k]);
    else
      std::snprintf(buf, sizeof buf, "%-11s", "n/a");
    row += buf;
  }
  head += "Accuracy\n";
  std::snprintf(buf, sizeof buf, "%.3f\n", m.accuracy);
  row += buf;
  return head + row;
}

}  // namespace petrosam::metrics
