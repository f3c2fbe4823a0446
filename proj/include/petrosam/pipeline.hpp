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

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "petrosam/checkpoint.hpp"
#include "petrosam/config.hpp"
#include "petrosam/metrics.hpp"
#include "petrosam/models.hpp"
#include "petrosam/synthdata.hpp"

// Two-stage training, teacher prompt precomputation, evaluation and
// prediction. Training runs in float; losses are evaluated in double.
namespace petrosam::pipeline {

namespace fs = std::filesystem;

/// A group with everything training needs precomputed.
struct Sample {
  std::string id;
  synth::PolarizedGroup group;
  synth::EdgeMask edge;
  std::optional<synth::SemanticMask> semantic;
  Grid<double> distance;   ///< distance map of the edge label; empty without positives
  Tensor<double> entropy;  ///< [7, H, W, 1]; empty unless requested
};

struct LoadOptions {
  bool semantic = false;  ///< require semantic.png
  bool entropy = false;
  entropy::EntropyOptions entropy_opts;
};

std::vector<Sample> load_samples(const fs::path& root, const std::vector<std::string>& ids,
                                 const LoadOptions& opts = {});

enum class Split { kTrain, kTest, kAll };
Split parse_split(const std::string& name);

/// Group ids of a split of the dataset under root.
std::vector<std::string> split_ids(const fs::path& root, Split split, double train_fraction,
                                   std::uint64_t split_seed);

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double loss = 0;
  double bce = 0;       ///< class-balanced term against the label
  double distance = 0;  ///< distance-weighted term against the label
  double edge = 0;      ///< full edge objective (before lambda_e)
  double ce = 0;
  double dice = 0;
  double sem = 0;
  double lr = 0;
  double lambda_t = 0;
};

/// One plain-text log line: `step=.. epoch=.. loss=.. ...`.
std::string format_step(const StepRecord& r, int stage);

struct TrainOptions {
  fs::path out_dir;  ///< checkpoints and train.log go here; empty writes nothing
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_loss;  ///< mean step loss per epoch
  fs::path final_checkpoint;
};

using TeacherNet = models::TeacherModel<float>;
using StudentNet = models::StudentModel<float>;
using PromptMap = std::map<std::string, Grid<double>>;

TrainResult train_stage1(const TrainConfig& cfg, const std::vector<Sample>& train, TeacherNet& model,
                         const TrainOptions& opts = {});

/// `prompts` must hold a teacher map for every training group unless the
/// stage-1 prompt is ablated.
TrainResult train_stage2(const TrainConfig& cfg, const std::vector<Sample>& train, const PromptMap& prompts,
                         StudentNet& model, const TrainOptions& opts = {});

/// Eval-mode teacher probabilities for each sample.
PromptMap teacher_prompts(const TeacherNet& model, const std::vector<Sample>& samples);

/// Prompt store: one `<group_id>.grid` file per group.
void write_prompts(const fs::path& dir, const PromptMap& prompts);
PromptMap read_prompts(const fs::path& dir, const std::vector<std::string>& ids);

/// Frozen-teacher forward over every group under data_root. Returns the
/// number of maps written.
std::size_t precompute_teacher_prompts(const fs::path& ckpt, const fs::path& data_root, const fs::path& out_dir);

CheckpointMeta make_meta(const TrainConfig& cfg, const std::string& model, int epoch);
TrainConfig config_from_checkpoint(const Checkpoint& ckpt);
std::unique_ptr<TeacherNet> load_teacher(const Checkpoint& ckpt);
std::unique_ptr<StudentNet> load_student(const Checkpoint& ckpt);

struct EvalReport {
  std::string task;  ///< "edge" or "semantic"
  std::map<std::string, double> metrics;
  std::string table;
  std::size_t groups = 0;
  metrics::EdgeCounts edge_counts;
  metrics::SemanticCounts semantic_counts;
};

/// Aggregates counts over (prediction, label) pairs, then computes metrics.
EvalReport edge_eval(const std::vector<std::pair<Grid<double>, Grid<double>>>& prob_and_label, double threshold);
EvalReport semantic_eval(const std::vector<std::pair<LabelGrid, LabelGrid>>& pred_and_label);

struct EvalRequest {
  fs::path ckpt;          ///< ignored in oracle mode
  fs::path data_root;
  Split split = Split::kTest;
  std::string task;       ///< "edge", "semantic" or empty for the checkpoint's natural task
  fs::path prompts_dir;   ///< student edge evaluation: teacher maps from a store
  fs::path teacher_ckpt;  ///< ...or from a teacher checkpoint
  bool oracle = false;    ///< score the labels against themselves
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
};

EvalReport evaluate(const EvalRequest& req);

struct PredictRequest {
  fs::path ckpt;  ///< stage-2 checkpoint
  fs::path group_dir;
  fs::path out_dir;
  fs::path prompts_dir;
  fs::path teacher_ckpt;
};

/// Writes edge_pred.png, edge_bin.png, semantic_pred.png and overlay.png.
void predict(const PredictRequest& req);

}  // namespace petrosam::pipeline
