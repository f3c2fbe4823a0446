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

#include "petrosam/core/ops.hpp"
#include "petrosam/grid.hpp"

// Parameterized layers and the four fusion blocks. Each block registers its
// parameters under `prefix` in a shared ParamStore; forward passes are const
// and safe to run concurrently on a fixed parameter snapshot.
namespace petrosam::blocks {

template <typename Scalar>
struct Conv2d {
  Conv2d() = default;
  Conv2d(ParamStore<Scalar>& store, const std::string& name, Index in, Index out, int kernel,
         int stride = 1, int padding = 0, Init weight_init = Init::kHeNormal);
  Var<Scalar> operator()(const Var<Scalar>& x) const;

  Var<Scalar> weight, bias;
  int stride = 1, padding = 0;
};

template <typename Scalar>
struct ConvTranspose2x2 {
  ConvTranspose2x2() = default;
  ConvTranspose2x2(ParamStore<Scalar>& store, const std::string& name, Index in, Index out);
  Var<Scalar> operator()(const Var<Scalar>& x) const;

  Var<Scalar> weight, bias;
};

template <typename Scalar>
struct Linear {
  Linear() = default;
  Linear(ParamStore<Scalar>& store, const std::string& name, Index in, Index out,
         Init weight_init = Init::kTruncNormal);
  Var<Scalar> operator()(const Var<Scalar>& x) const;

  Var<Scalar> weight, bias;
};

template <typename Scalar>
struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParamStore<Scalar>& store, const std::string& name, Index channels);
  Var<Scalar> operator()(const Var<Scalar>& x) const;

  Var<Scalar> gamma, beta;
};

/// LayerNorm over the channels of each pixel of an NCHW map.
template <typename Scalar>
struct LayerNorm2d {
  LayerNorm2d() = default;
  LayerNorm2d(ParamStore<Scalar>& store, const std::string& name, Index channels);
  Var<Scalar> operator()(const Var<Scalar>& x) const;

  LayerNorm<Scalar> norm;
};

/// Scaled dot-product attention over token tensors with separate query and
/// key/value sources. Output tokens follow the query.
template <typename Scalar>
struct CrossAttention {
  CrossAttention() = default;
  CrossAttention(ParamStore<Scalar>& store, const std::string& name, Index channels, int heads);
  Var<Scalar> operator()(const Var<Scalar>& query, const Var<Scalar>& context) const;

  Linear<Scalar> q, k, v, out;
  int heads = 1;
};

/// Softmax-weighted fusion of seven views. Image-level weights come from
/// global average pooling followed by a shared 1x1 projection to one channel.
template <typename Scalar>
class MergeBlock {
 public:
  struct Output {
    Var<Scalar> fused;    ///< [N, C, H, W]
    Var<Scalar> weights;  ///< raw view logits, [N, 1, 7]
  };

  MergeBlock() = default;
  MergeBlock(ParamStore<Scalar>& store, const std::string& prefix, Index channels);

  /// feat is [N*7, C, H, W] with the seven views of a sample adjacent.
  Output forward(const Var<Scalar>& feat) const;

  /// Plain arithmetic mean of the views (used when the block is ablated).
  static Var<Scalar> mean_views(const Var<Scalar>& feat);

  Linear<Scalar> proj;
};

/// Moves a foundation-encoder feature into the edge encoder's space:
/// adaptive pooling, parallel 1x1 / 3x3 convs, channel alignment, then
/// cross-attention with the edge feature as query and a residual add.
template <typename Scalar>
class AdaptationBlock {
 public:
  AdaptationBlock() = default;
  AdaptationBlock(ParamStore<Scalar>& store, const std::string& prefix, Index sam_channels,
                  Index ecpn_channels, Index hidden, int heads);

  Var<Scalar> forward(const Var<Scalar>& sam_feat, const Var<Scalar>& ecpn_feat) const;

  /// The aligned feature before attention.
  Var<Scalar> align(const Var<Scalar>& sam_feat, Index height, Index width) const;

  Conv2d<Scalar> channel_branch, spatial_branch, fuse;
  CrossAttention<Scalar> attention;
};

/// Gates the deep feature by a 1x1 fusion of the pooled shallow and deep features.
template <typename Scalar>
class RefineBlock {
 public:
  RefineBlock() = default;
  RefineBlock(ParamStore<Scalar>& store, const std::string& prefix, Index shallow_channels,
              Index deep_channels);

  Var<Scalar> forward(const Var<Scalar>& shallow, const Var<Scalar>& deep) const;

  Conv2d<Scalar> fuse;
};

/// Modulates a feature map with per-view color entropy. The entropy stack is
/// space-to-depth reorganized to the feature's resolution and summarized by
/// 3x3 and 1x1 convs; the result gates the feature as feat * (1 + g), or
/// feat * g when `residual` is false. The final conv starts at zero.
template <typename Scalar>
class EntropyBlock {
 public:
  EntropyBlock() = default;
  EntropyBlock(ParamStore<Scalar>& store, const std::string& prefix, Index channels, int factor,
               Index hidden, bool residual = true);

  /// feat [N, C, h, w]; entropy [N, 7, h*factor, w*factor].
  Var<Scalar> forward(const Var<Scalar>& feat, const Var<Scalar>& entropy) const;

  Conv2d<Scalar> summarize, gate;
  int factor = 1;
  bool residual = true;
};

}  // namespace petrosam::blocks
