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
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "petrosam/core/tensor.hpp"
#include "petrosam/grid.hpp"

namespace petrosam::synth {

struct SynthSpec {
  int image_size = 64;
  int n_grains = 30;
  int class_count = kClassCount;
  int angle_count = kViewCount;
  std::uint64_t seed = 0;
  double noise_sigma = 0.02;
  /// Pixels farther than this fraction of image_size from the image center
  /// form the background region (class 0). Zero or less disables it.
  double background_radius = 0.55;

  /// Throws ValidationError naming the first violated field.
  void validate() const;
};

/// Seven co-registered views stored channel-first: shape [7, 3, H, W],
/// values in [0, 1]. View 0 is plane-polarized, views 1..6 cross-polarized.
struct PolarizedGroup {
  Tensor<double> views;
  std::string group_id;

  Index height() const { return views.dim(2); }
  Index width() const { return views.dim(3); }
  double at(int view, int channel, Index y, Index x) const { return views.at(view, channel, y, x); }
  void validate() const;
};

enum class EdgeKind { kBinary, kProbability };

struct EdgeMask {
  Grid<double> values;
  EdgeKind kind = EdgeKind::kBinary;
  void validate() const;
};

/// Per-pixel class index in [0, 4): background, feldspar, debris, quartz.
struct SemanticMask {
  LabelGrid classes;
};

struct GrainInfo {
  int cls = 0;
  double phase = 0;  ///< extinction phase in [0, pi)
  std::array<double, 3> plane_color{};
  std::array<double, 3> cross_color{};
};

struct SynthSample {
  PolarizedGroup group;
  EdgeMask edge;
  SemanticMask semantic;
  LabelGrid grain_labels;  ///< grain index; n_grains marks the background region
  std::vector<GrainInfo> grains;
  std::vector<std::array<double, 2>> seeds;  ///< Voronoi sites (y, x) in pixel units
};

/// Polarizer angle of cross-polarized view k (1..6), in radians.
double view_angle(int k);

/// Brightness factor 0.5 * (1 + cos(2 (theta_k - phase))).
double extinction_factor(int k, double phase);

/// Deterministic Voronoi thin-section group.
SynthSample generate_group(const SynthSpec& spec);

/// 1 where a 4-neighbour carries a different label, else 0.
Grid<double> label_boundaries(const LabelGrid& labels);

/// Writes angle_0..6.png, edge.png and semantic.png (class * 60) under
/// root/<group_id>/.
void write_group(const PolarizedGroup& group, const EdgeMask& edge, const SemanticMask& sem,
                 const std::filesystem::path& root);

struct LoadedGroup {
  PolarizedGroup group;
  EdgeMask edge;
  std::optional<SemanticMask> semantic;
};

/// Reads only the seven views of a group directory.
PolarizedGroup read_views(const std::filesystem::path& root, const std::string& group_id);

/// Inverse of write_group up to 8-bit quantization. With edge_only set, a
/// missing semantic.png yields an absent semantic mask.
LoadedGroup read_group(const std::filesystem::path& root, const std::string& group_id,
                       bool edge_only = false);

/// Sorted names of group directories under root.
std::vector<std::string> list_groups(const std::filesystem::path& root);

/// Deterministic shuffled split into (train, test).
std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    const std::vector<std::string>& group_ids, double train_fraction, std::uint64_t seed);

/// Generates and writes n groups named group_0000.. with per-group seeds
/// derived from base.seed. Returns the group ids.
std::vector<std::string> generate_dataset(const std::filesystem::path& root, int n_groups,
                                          const SynthSpec& base);

/// Seed for the i-th group of a dataset generated from `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace petrosam::synth
