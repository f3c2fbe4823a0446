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

#include "petrosam/core/tensor.hpp"
#include "petrosam/grid.hpp"
#include "petrosam/image_io.hpp"
#include "petrosam/synthdata.hpp"

// Local color entropy: colors are quantized by a right shift of tau bits,
// counted inside a zero-padded 7x7 window and turned into Shannon entropy
// (nats) normalized by the in-bounds window area.
namespace petrosam::entropy {

inline constexpr int kWindow = 7;

enum class CodeMode {
  kSafe,   ///< collision-free positional code
  kPaper,  ///< 256 R' + (256 >> tau) G' + B', as published
};

enum class SumBound {
  kAllColors,   ///< sum over every quantized color
  kFirstSeven,  ///< only the seven smallest codes contribute
};

struct EntropyOptions {
  int tau = 5;
  CodeMode mode = CodeMode::kSafe;
  SumBound bound = SumBound::kAllColors;

  void validate() const;
};

struct QuantizedColors {
  LabelGrid codes;
  int count = 0;  ///< number of distinct codes
};

struct EntropyMap {
  Grid<double> values;
  int tau = 0;
};

QuantizedColors quantize_colors(const io::Image8& rgb, int tau, CodeMode mode = CodeMode::kSafe);

/// Number of in-bounds pixels of the centered window at each location.
Grid<double> window_area(Index height, Index width);

/// Fast path: one indicator plane per color, box-summed with an integral image.
EntropyMap entropy_map(const io::Image8& rgb, const EntropyOptions& opts = {});

/// Reference path: explicit per-pixel window histogram.
EntropyMap entropy_map_oracle(const io::Image8& rgb, const EntropyOptions& opts = {});

/// 8-bit rendering of one view of a group (values rounded from [0,1]).
io::Image8 view_bytes(const synth::PolarizedGroup& group, int view);

/// Entropy of each of the seven views, shape [7, H, W, 1].
Tensor<double> group_entropy(const synth::PolarizedGroup& group, const EntropyOptions& opts = {});

}  // namespace petrosam::entropy
