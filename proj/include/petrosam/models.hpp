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
#include <string>
#include <vector>

#include "petrosam/blocks.hpp"
#include "petrosam/entropy.hpp"
#include "petrosam/synthdata.hpp"

// Stage-1 teacher (edge only) and stage-2 student (edge + semantic) built
// from a lite ViT, a lite CNN edge encoder and the fusion blocks.
namespace petrosam::models {

struct ModelDims {
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 2;
  /// Edge encoder widths: full-resolution stem, then four stride-2 stages.
  std::array<int, 5> edge_channels = {16, 16, 32, 48, 64};
  int adapt_hidden = 32;
  int adapt_heads = 1;
  int decoder_hidden = 32;
  int decoder_out = 16;
  int entropy_hidden = 32;
  int prompt_hidden = 16;

  void validate() const;
  /// Spatial factor between the input and the deepest edge feature.
  static constexpr int kDeepStride = 16;
};

/// Component switches matching the ablation tables. Off-states bypass the
/// component; its parameters stay registered but receive no gradient.
struct Ablation {
  bool merge = true;
  bool adaptation = true;
  bool refine = true;
  bool entropy_block = true;
  bool stage1_prompt = true;
  bool loss_sem = true;
  bool loss_edge = true;
  /// Entropy gate as feat * (1 + g) (true) or feat * g (false).
  bool entropy_residual = true;
};

/// Stand-in for the foundation ViT encoder; views are encoded independently.
template <typename Scalar>
class VitEncoderLite {
 public:
  struct Taps {
    Var<Scalar> shallow;  ///< after position embedding, [B, C, He, We]
    Var<Scalar> deep;     ///< final block output, [B, C, He, We]
  };

  VitEncoderLite() = default;
  VitEncoderLite(ParamStore<Scalar>& store, const std::string& prefix, const ModelDims& dims);

  /// images [B, 3, H, W].
  Taps forward(const Var<Scalar>& images) const;

 private:
  struct Block {
    blocks::LayerNorm<Scalar> norm1, norm2;
    blocks::CrossAttention<Scalar> attn;
    blocks::Linear<Scalar> fc1, fc2;
  };

  blocks::Conv2d<Scalar> patch_embed_;
  Var<Scalar> pos_embed_;
  std::vector<Block> blocks_;
  int patch_ = 8;
};

/// Stand-in for the external edge network's encoder. Consumes the seven views
/// stacked as 21 channels.
template <typename Scalar>
class EdgeEncoderLite {
 public:
  struct Taps {
    Var<Scalar> full;     ///< stem output at H x W
    Var<Scalar> shallow;  ///< stage-1 output at H/2
    Var<Scalar> deep;     ///< stage-4 output at H/16
  };

  EdgeEncoderLite() = default;
  EdgeEncoderLite(ParamStore<Scalar>& store, const std::string& prefix, const ModelDims& dims);

  /// stacked [N, 21, H, W].
  Taps forward(const Var<Scalar>& stacked) const;

 private:
  blocks::Conv2d<Scalar> stem_;
  std::array<blocks::Conv2d<Scalar>, 4> down_, mix_;
  std::array<blocks::LayerNorm2d<Scalar>, 4> down_norm_, mix_norm_;
};

/// Dense mask prompt: the mask is pooled to four times the target resolution,
/// then two stride-2 convs and a 1x1 conv produce an embedding.
template <typename Scalar>
class PromptEncoder {
 public:
  PromptEncoder() = default;
  PromptEncoder(ParamStore<Scalar>& store, const std::string& prefix, Index channels, Index hidden);

  /// mask [N, 1, H, W] -> [N, channels, out_h, out_w].
  Var<Scalar> forward(const Var<Scalar>& mask, Index out_h, Index out_w) const;

  blocks::Conv2d<Scalar> down1, down2, proj;
};

/// Two x2 transposed convs, bilinear resize to the skip resolution, fusion
/// with the full-resolution skip feature, and a 1x1 head producing logits.
template <typename Scalar>
class MaskDecoder {
 public:
  MaskDecoder() = default;
  MaskDecoder(ParamStore<Scalar>& store, const std::string& prefix, Index in_channels,
              Index skip_channels, Index out_channels, const ModelDims& dims);

  Var<Scalar> forward(const Var<Scalar>& feat, const Var<Scalar>& skip) const;

 private:
  blocks::ConvTranspose2x2<Scalar> up1_, up2_;
  blocks::Conv2d<Scalar> fuse_, head_;
};

template <typename Scalar>
class TeacherModel {
 public:
  TeacherModel(const ModelDims& dims, const Ablation& ablation, std::uint64_t seed);

  /// views [N, 7, 3, H, W] (already centered) -> edge logits [N, 1, H, W].
  Var<Scalar> logits(const Tensor<Scalar>& views) const;
  Var<Scalar> forward(const Tensor<Scalar>& views) const;

  ParamStore<Scalar>& params() { return params_; }
  const ParamStore<Scalar>& params() const { return params_; }
  const ModelDims& dims() const { return dims_; }
  const Ablation& ablation() const { return ablation_; }

 private:
  ModelDims dims_;
  Ablation ablation_;
  ParamStore<Scalar> params_;
  VitEncoderLite<Scalar> vit_;
  EdgeEncoderLite<Scalar> edge_;
  blocks::MergeBlock<Scalar> merge_s_, merge_d_;
  blocks::AdaptationBlock<Scalar> adapt_s_, adapt_d_;
  blocks::Conv2d<Scalar> bypass_s_, bypass_d_;
  blocks::RefineBlock<Scalar> refine_;
  MaskDecoder<Scalar> decoder_;
};

template <typename Scalar>
class StudentModel {
 public:
  struct Output {
    Var<Scalar> edge_logits;  ///< [N, 1, H, W], null when the edge branch is skipped
    Var<Scalar> edge_prob;
    Var<Scalar> sem_prob;     ///< [N, 4, H, W], null when the semantic branch is skipped
  };

  StudentModel(const ModelDims& dims, const Ablation& ablation, std::uint64_t seed);

  /// views [N,7,3,H,W]; entropy [N,7,H,W]; teacher_prob [N,1,H,W].
  Output forward(const Tensor<Scalar>& views, const Tensor<Scalar>& entropy,
                 const Tensor<Scalar>& teacher_prob, bool edge_branch = true,
                 bool semantic_branch = true) const;

  ParamStore<Scalar>& params() { return params_; }
  const ParamStore<Scalar>& params() const { return params_; }
  const ModelDims& dims() const { return dims_; }
  const Ablation& ablation() const { return ablation_; }
  const PromptEncoder<Scalar>& prompt_encoder() const { return prompt_; }

 private:
  ModelDims dims_;
  Ablation ablation_;
  ParamStore<Scalar> params_;
  EdgeEncoderLite<Scalar> edge_;
  blocks::EntropyBlock<Scalar> entropy_;
  PromptEncoder<Scalar> prompt_;
  MaskDecoder<Scalar> edge_decoder_;
  VitEncoderLite<Scalar> vit_;
  blocks::MergeBlock<Scalar> merge_;
  blocks::AdaptationBlock<Scalar> adapt_;
  blocks::Conv2d<Scalar> bypass_;
  MaskDecoder<Scalar> sem_decoder_;
};

/// Throws ShapeError unless H and W are divisible by 16 and the patch size.
void check_input_size(Index height, Index width, const ModelDims& dims);

/// Stacks groups into [N, 7, 3, H, W], centered by subtracting 0.5.
template <typename Scalar>
Tensor<Scalar> stack_views(const std::vector<const synth::PolarizedGroup*>& groups);

/// Stacks per-group entropy ([7,H,W,1] each) into [N, 7, H, W].
template <typename Scalar>
Tensor<Scalar> stack_entropy(const std::vector<const Tensor<double>*>& entropies);

/// Stacks H x W maps into [N, 1, H, W].
template <typename Scalar>
Tensor<Scalar> stack_maps(const std::vector<const Grid<double>*>& maps);

/// Eval-mode teacher prediction for one group.
template <typename Scalar>
synth::EdgeMask teacher_forward(const TeacherModel<Scalar>& model, const synth::PolarizedGroup& group);

struct StudentPrediction {
  synth::EdgeMask edge;
  Tensor<double> semantic;  ///< probabilities [4, H, W]
};

/// Eval-mode student prediction for one group given the teacher's map.
template <typename Scalar>
StudentPrediction student_forward(const StudentModel<Scalar>& model, const synth::PolarizedGroup& group,
                                  const synth::EdgeMask& teacher_map,
                                  const entropy::EntropyOptions& entropy_opts);

/// Per-pixel argmax of a [C, H, W] probability tensor.
LabelGrid argmax_classes(const Tensor<double>& prob);

/// H x W slice n of an [N, 1, H, W] tensor.
template <typename Scalar>
Grid<double> slice_map(const Tensor<Scalar>& t, Index n);

}  // namespace petrosam::models
