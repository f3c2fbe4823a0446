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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "petrosam/entropy.hpp"
#include "petrosam/losses.hpp"
#include "petrosam/models.hpp"
#include "petrosam/optim.hpp"

namespace petrosam {

/// Everything that determines a training run. Field defaults match the desk
/// profile; configs/paper.cfg records the full-scale values.
struct TrainConfig {
  int stage = 1;
  int epochs = 5;
  int batch_size = 4;
  int max_steps = 0;  ///< 0 means no cap
  double lr = 2e-4;
  double min_lr = 2e-6;
  double restart_period = 0;  ///< epochs per cosine cycle; 0 means one cycle over the run
  double restart_mult = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 2e-4;
  losses::LossConfig loss;
  int tau = 5;
  entropy::CodeMode entropy_mode = entropy::CodeMode::kSafe;
  entropy::SumBound entropy_bound = entropy::SumBound::kAllColors;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;
  int checkpoint_every = 1;
  double threshold = 0.5;
  models::ModelDims dims;
  models::Ablation ablation;

  void validate() const;

  AdamOptions adam() const { return {lr, beta1, beta2, adam_eps, weight_decay}; }
  entropy::EntropyOptions entropy_options() const;

  /// Applies one `key = value` assignment; unknown keys are rejected.
  void set(const std::string& key, const std::string& value);
  /// All fields as key/value strings, in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  std::string to_text() const;
  /// FNV-1a over to_text(), as 16 hex digits.
  std::string hash() const;
};

/// Parses a flat `key = value` file. `#` starts a comment. A `base = FILE`
/// line loads FILE (relative to this file) first.
TrainConfig load_config(const std::filesystem::path& path);
TrainConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});

/// Name of the ablation table row the config corresponds to. Throws
/// ValidationError for combinations outside the tables.
std::string ablation_row(const TrainConfig& cfg);

/// ablation_row as a check, skipped when free_form is set.
void lint_config(const TrainConfig& cfg, bool free_form);

/// Every flag combination that appears in the ablation tables for a stage.
std::vector<std::pair<std::string, models::Ablation>> table_rows(int stage);

}  // namespace petrosam
