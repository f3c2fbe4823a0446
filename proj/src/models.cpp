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

#include "petrosam/models.hpp"

#include "petrosam/error.hpp"

namespace petrosam::models {

void ModelDims::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ValidationError(std::string("model dims: ") + name + " must be positive");
  };
  positive(image_size, "image_size");
  positive(patch_size, "patch_size");
  positive(embed_dim, "embed_dim");
  positive(depth, "depth");
  positive(heads, "heads");
  positive(mlp_ratio, "mlp_ratio");
  positive(adapt_hidden, "adapt_hidden");
  positive(adapt_heads, "adapt_heads");
  positive(decoder_hidden, "decoder_hidden");
  positive(decoder_out, "decoder_out");
  positive(entropy_hidden, "entropy_hidden");
  positive(prompt_hidden, "prompt_hidden");
  for (int c : edge_channels) positive(c, "edge_channels");
  if (embed_dim % heads != 0) throw ValidationError("model dims: embed_dim must be divisible by heads");
  if (edge_channels[4] % adapt_heads != 0 || edge_channels[1] % adapt_heads != 0)
    throw ValidationError("model dims: edge channels must be divisible by adapt_heads");
  check_input_size(image_size, image_size, *this);
}

void check_input_size(Index height, Index width, const ModelDims& dims) {
  const Index m = std::max<Index>(ModelDims::kDeepStride, dims.patch_size);
  if (height <= 0 || width <= 0 || height % ModelDims::kDeepStride || width % ModelDims::kDeepStride ||
      height % dims.patch_size || width % dims.patch_size)
    throw ShapeError("input " + std::to_string(height) + "x" + std::to_string(width) +
                     " must be a positive multiple of " + std::to_string(m));
}

// ---------------------------------------------------------------------------

template <typename Scalar>
VitEncoderLite<Scalar>::VitEncoderLite(ParamStore<Scalar>& store, const std::string& prefix,
                                       const ModelDims& dims)
    : patch_embed_(store, prefix + ".patch_embed", 3, dims.embed_dim, dims.patch_size, dims.patch_size),
      patch_(dims.patch_size) {
  const Index grid = dims.image_size / dims.patch_size;
  pos_embed_ = store.add(prefix + ".pos_embed", Shape{grid * grid, dims.embed_dim});
  const Index c = dims.embed_dim;
  for (int i = 0; i < dims.depth; ++i) {
    const std::string p = prefix + ".blocks." + std::to_string(i);
    blocks_.push_back(Block{blocks::LayerNorm<Scalar>(store, p + ".norm1", c),
                            blocks::LayerNorm<Scalar>(store, p + ".norm2", c),
                            blocks::CrossAttention<Scalar>(store, p + ".attn", c, dims.heads),
                            blocks::Linear<Scalar>(store, p + ".fc1", c, c * dims.mlp_ratio),
                            blocks::Linear<Scalar>(store, p + ".fc2", c * dims.mlp_ratio, c)});
  }
}

template <typename Scalar>
typename VitEncoderLite<Scalar>::Taps VitEncoderLite<Scalar>::forward(const Var<Scalar>& images) const {
  auto x = patch_embed_(images);
  const Index h = x->dim(2), w = x->dim(3);
  if (h * w != pos_embed_->dim(0))
    throw ShapeError("vit: token grid " + std::to_string(h) + "x" + std::to_string(w) +
                     " does not match the position embedding");
  auto tokens = ops::add(ops::to_tokens(x), pos_embed_);
  Taps taps;
  taps.shallow = ops::from_tokens(tokens, h, w);
  for (const auto& b : blocks_) {
    auto normed = b.norm1(tokens);
    tokens = ops::add(tokens, b.attn(normed, normed));
    tokens = ops::add(tokens, b.fc2(ops::gelu(b.fc1(b.norm2(tokens)))));
  }
  taps.deep = ops::from_tokens(tokens, h, w);
  return taps;
}

template <typename Scalar>
EdgeEncoderLite<Scalar>::EdgeEncoderLite(ParamStore<Scalar>& store, const std::string& prefix,
                                         const ModelDims& dims)
    : stem_(store, prefix + ".stem", 3 * kViewCount, dims.edge_channels[0], 3, 1, 1) {
  for (int i = 0; i < 4; ++i) {
    const std::string p = prefix + ".stage" + std::to_string(i + 1);
    down_[i] = blocks::Conv2d<Scalar>(store, p + ".down", dims.edge_channels[i], dims.edge_channels[i + 1],
                                      3, 2, 1);
    down_norm_[i] = blocks::LayerNorm2d<Scalar>(store, p + ".down_norm", dims.edge_channels[i + 1]);
    mix_[i] = blocks::Conv2d<Scalar>(store, p + ".mix", dims.edge_channels[i + 1],
                                     dims.edge_channels[i + 1], 3, 1, 1);
    mix_norm_[i] = blocks::LayerNorm2d<Scalar>(store, p + ".mix_norm", dims.edge_channels[i + 1]);
  }
}

template <typename Scalar>
typename EdgeEncoderLite<Scalar>::Taps EdgeEncoderLite<Scalar>::forward(const Var<Scalar>& stacked) const {
  Taps taps;
  // No normalization at full resolution: the skip path must keep absolute color.
  taps.full = ops::gelu(stem_(stacked));
  auto x = taps.full;
  for (int i = 0; i < 4; ++i) {
    x = ops::gelu(down_norm_[i](down_[i](x)));
    x = ops::gelu(mix_norm_[i](mix_[i](x)));
    if (i == 0) taps.shallow = x;
  }
  taps.deep = x;
  return taps;
}

template <typename Scalar>
PromptEncoder<Scalar>::PromptEncoder(ParamStore<Scalar>& store, const std::string& prefix, Index channels,
                                     Index hidden)
    : down1(store, prefix + ".down1", 1, hidden / 4 > 0 ? hidden / 4 : 1, 2, 2),
      down2(store, prefix + ".down2", hidden / 4 > 0 ? hidden / 4 : 1, hidden, 2, 2),
      proj(store, prefix + ".proj", hidden, channels, 1) {}

template <typename Scalar>
Var<Scalar> PromptEncoder<Scalar>::forward(const Var<Scalar>& mask, Index out_h, Index out_w) const {
  auto x = ops::adaptive_avg_pool2d(mask, 4 * out_h, 4 * out_w);
  x = ops::gelu(down1(x));
  x = ops::gelu(down2(x));
  return proj(x);
}

template <typename Scalar>
MaskDecoder<Scalar>::MaskDecoder(ParamStore<Scalar>& store, const std::string& prefix, Index in_channels,
                                 Index skip_channels, Index out_channels, const ModelDims& dims)
    : up1_(store, prefix + ".up1", in_channels, dims.decoder_hidden),
      up2_(store, prefix + ".up2", dims.decoder_hidden, dims.decoder_out),
      fuse_(store, prefix + ".fuse", dims.decoder_out + skip_channels, dims.decoder_out, 3, 1, 1),
      head_(store, prefix + ".head", dims.decoder_out, out_channels, 1, 1, 0, Init::kZeros) {}

template <typename Scalar>
Var<Scalar> MaskDecoder<Scalar>::forward(const Var<Scalar>& feat, const Var<Scalar>& skip) const {
  auto x = ops::gelu(up1_(feat));
  x = ops::gelu(up2_(x));
  x = ops::bilinear_resize(x, skip->dim(2), skip->dim(3));
  x = ops::gelu(fuse_(ops::concat_channels(x, skip)));
  return head_(x);
}

// ---------------------------------------------------------------------------

namespace {

template <typename Scalar>
void check_views(const Tensor<Scalar>& views, const ModelDims& dims) {
  if (views.rank() != 5 || views.dim(1) != kViewCount || views.dim(2) != 3)
    throw ShapeError("expected views [N, 7, 3, H, W], got " + shape_str(views.shape()));
  check_input_size(views.dim(3), views.dim(4), dims);
  if (views.dim(3) != dims.image_size || views.dim(4) != dims.image_size)
    throw ShapeError("input " + std::to_string(views.dim(3)) + "x" + std::to_string(views.dim(4)) +
                     " does not match the configured image_size " + std::to_string(dims.image_size));
}

template <typename Scalar>
Var<Scalar> per_view(const Tensor<Scalar>& views) {
  return constant(views.reshaped(Shape{views.dim(0) * kViewCount, 3, views.dim(3), views.dim(4)}));
}

template <typename Scalar>
Var<Scalar> channel_stacked(const Tensor<Scalar>& views) {
  return constant(views.reshaped(Shape{views.dim(0), 3 * kViewCount, views.dim(3), views.dim(4)}));
}

template <typename Scalar>
Var<Scalar> fuse_views(const blocks::MergeBlock<Scalar>& merge, bool enabled, const Var<Scalar>& feat) {
  return enabled ? merge.forward(feat).fused : blocks::MergeBlock<Scalar>::mean_views(feat);
}

// With adaptation ablated the foundation feature still reaches the edge path,
// through pooling and a 1x1 projection added to the edge feature.
template <typename Scalar>
Var<Scalar> adapt_or_bypass(const blocks::AdaptationBlock<Scalar>& adapt, const blocks::Conv2d<Scalar>& bypass,
                            bool enabled, const Var<Scalar>& sam, const Var<Scalar>& ecpn) {
  if (enabled) return adapt.forward(sam, ecpn);
  auto pooled = ops::adaptive_avg_pool2d(sam, ecpn->dim(2), ecpn->dim(3));
  return ops::add(ecpn, bypass(pooled));
}

}  // namespace

template <typename Scalar>
TeacherModel<Scalar>::TeacherModel(const ModelDims& dims, const Ablation& ablation, std::uint64_t seed)
    : dims_((dims.validate(), dims)),
      ablation_(ablation),
      params_(seed),
      vit_(params_, "teacher.vit", dims),
      edge_(params_, "teacher.edge", dims),
      merge_s_(params_, "teacher.merge_shallow", dims.embed_dim),
      merge_d_(params_, "teacher.merge_deep", dims.embed_dim),
      adapt_s_(params_, "teacher.adapt_shallow", dims.embed_dim, dims.edge_channels[1], dims.adapt_hidden,
               dims.adapt_heads),
      adapt_d_(params_, "teacher.adapt_deep", dims.embed_dim, dims.edge_channels[4], dims.adapt_hidden,
               dims.adapt_heads),
      bypass_s_(params_, "teacher.bypass_shallow", dims.embed_dim, dims.edge_channels[1], 1),
      bypass_d_(params_, "teacher.bypass_deep", dims.embed_dim, dims.edge_channels[4], 1),
      refine_(params_, "teacher.refine", dims.edge_channels[1], dims.edge_channels[4]),
      decoder_(params_, "teacher.decoder", dims.edge_channels[4], dims.edge_channels[0], 1, dims) {}

template <typename Scalar>
Var<Scalar> TeacherModel<Scalar>::logits(const Tensor<Scalar>& views) const {
  check_views(views, dims_);
  auto sam = vit_.forward(per_view(views));
  auto s_shallow = fuse_views(merge_s_, ablation_.merge, sam.shallow);
  auto s_deep = fuse_views(merge_d_, ablation_.merge, sam.deep);

  auto e = edge_.forward(channel_stacked(views));
  auto e_shallow = adapt_or_bypass(adapt_s_, bypass_s_, ablation_.adaptation, s_shallow, e.shallow);
  auto e_deep = adapt_or_bypass(adapt_d_, bypass_d_, ablation_.adaptation, s_deep, e.deep);
  auto refined = ablation_.refine ? refine_.forward(e_shallow, e_deep) : e_deep;
  return decoder_.forward(refined, e.full);
}

template <typename Scalar>
Var<Scalar> TeacherModel<Scalar>::forward(const Tensor<Scalar>& views) const {
  return ops::sigmoid(logits(views));
}

template <typename Scalar>
StudentModel<Scalar>::StudentModel(const ModelDims& dims, const Ablation& ablation, std::uint64_t seed)
    : dims_((dims.validate(), dims)),
      ablation_(ablation),
      params_(seed),
      edge_(params_, "student.edge", dims),
      entropy_(params_, "student.entropy", dims.edge_channels[4], ModelDims::kDeepStride, dims.entropy_hidden,
               ablation.entropy_residual),
      prompt_(params_, "student.prompt", dims.edge_channels[4], dims.prompt_hidden),
      edge_decoder_(params_, "student.edge_decoder", dims.edge_channels[4], dims.edge_channels[0], 1, dims),
      vit_(params_, "student.vit", dims),
      merge_(params_, "student.merge", dims.embed_dim),
      adapt_(params_, "student.adapt", dims.embed_dim, dims.edge_channels[4], dims.adapt_hidden,
             dims.adapt_heads),
      bypass_(params_, "student.bypass", dims.embed_dim, dims.edge_channels[4], 1),
      sem_decoder_(params_, "student.sem_decoder", dims.edge_channels[4], dims.edge_channels[0], kClassCount,
                   dims) {}

template <typename Scalar>
typename StudentModel<Scalar>::Output StudentModel<Scalar>::forward(const Tensor<Scalar>& views,
                                                                    const Tensor<Scalar>& entropy,
                                                                    const Tensor<Scalar>& teacher_prob,
                                                                    bool edge_branch,
                                                                    bool semantic_branch) const {
  check_views(views, dims_);
  const Index n = views.dim(0), h = views.dim(3), w = views.dim(4);
  Output out;
  auto e = edge_.forward(channel_stacked(views));

  if (edge_branch) {
    auto feat = e.deep;
    if (ablation_.entropy_block) {
      require_shape(entropy, Shape{n, kViewCount, h, w}, "student entropy");
      feat = entropy_.forward(feat, constant(entropy));
    }
    Tensor<Scalar> prompt;
    if (ablation_.stage1_prompt) {
      require_shape(teacher_prob, Shape{n, 1, h, w}, "student teacher prompt");
      prompt = teacher_prob;
    } else {
      prompt = Tensor<Scalar>(Shape{n, 1, h, w}, Scalar(0.5));
    }
    feat = ops::add(feat, prompt_.forward(constant(prompt), feat->dim(2), feat->dim(3)));
    out.edge_logits = edge_decoder_.forward(feat, e.full);
    out.edge_prob = ops::sigmoid(out.edge_logits);
  }

  if (semantic_branch) {
    auto sam = vit_.forward(per_view(views));
    auto s_deep = fuse_views(merge_, ablation_.merge, sam.deep);
    auto fused = adapt_or_bypass(adapt_, bypass_, ablation_.adaptation, s_deep, e.deep);
    out.sem_prob = ops::softmax_channels(sem_decoder_.forward(fused, e.full));
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> stack_views(const std::vector<const synth::PolarizedGroup*>& groups) {
  if (groups.empty()) throw ValidationError("stack_views: no groups");
  const Index h = groups[0]->height(), w = groups[0]->width();
  const Index per = kViewCount * 3 * h * w;
  Tensor<Scalar> out(Shape{static_cast<Index>(groups.size()), kViewCount, 3, h, w});
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& v = groups[i]->views;
    require_shape(v, Shape{kViewCount, 3, h, w}, "stack_views");
    out.array().segment(static_cast<Index>(i) * per, per) = (v.array() - 0.5).template cast<Scalar>();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> stack_entropy(const std::vector<const Tensor<double>*>& entropies) {
  if (entropies.empty()) throw ValidationError("stack_entropy: no maps");
  const Index h = entropies[0]->dim(1), w = entropies[0]->dim(2);
  const Index per = kViewCount * h * w;
  Tensor<Scalar> out(Shape{static_cast<Index>(entropies.size()), kViewCount, h, w});
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    require_shape(*entropies[i], Shape{kViewCount, h, w, 1}, "stack_entropy");
    out.array().segment(static_cast<Index>(i) * per, per) = entropies[i]->array().template cast<Scalar>();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> stack_maps(const std::vector<const Grid<double>*>& maps) {
  if (maps.empty()) throw ValidationError("stack_maps: no maps");
  const Index h = maps[0]->rows(), w = maps[0]->cols();
  Tensor<Scalar> out(Shape{static_cast<Index>(maps.size()), 1, h, w});
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i]->rows() != h || maps[i]->cols() != w) throw ShapeError("stack_maps: size mismatch");
    out.array().segment(static_cast<Index>(i) * h * w, h * w) =
        Eigen::Map<const Eigen::Array<double, Eigen::Dynamic, 1>>(maps[i]->data(), h * w).template cast<Scalar>();
  }
  return out;
}

template <typename Scalar>
Grid<double> slice_map(const Tensor<Scalar>& t, Index n) {
  const Index h = t.dim(-2), w = t.dim(-1);
  Grid<double> g(h, w);
  Eigen::Map<Eigen::Array<double, Eigen::Dynamic, 1>>(g.data(), h * w) =
      t.array().segment(n * h * w, h * w).template cast<double>();
  return g;
}

template <typename Scalar>
synth::EdgeMask teacher_forward(const TeacherModel<Scalar>& model, const synth::PolarizedGroup& group) {
  NoGradGuard guard;
  auto prob = model.forward(stack_views<Scalar>({&group}));
  return synth::EdgeMask{slice_map(prob->value, 0), synth::EdgeKind::kProbability};
}

template <typename Scalar>
StudentPrediction student_forward(const StudentModel<Scalar>& model, const synth::PolarizedGroup& group,
                                  const synth::EdgeMask& teacher_map,
                                  const entropy::EntropyOptions& entropy_opts) {
  NoGradGuard guard;
  const auto ent = entropy::group_entropy(group, entropy_opts);
  auto out = model.forward(stack_views<Scalar>({&group}), stack_entropy<Scalar>({&ent}),
                           stack_maps<Scalar>({&teacher_map.values}));
  StudentPrediction pred;
  pred.edge = synth::EdgeMask{slice_map(out.edge_prob->value, 0), synth::EdgeKind::kProbability};
  const auto& sem = out.sem_prob->value;
  pred.semantic = sem.template cast<double>().reshaped(Shape{kClassCount, sem.dim(2), sem.dim(3)});
  return pred;
}

LabelGrid argmax_classes(const Tensor<double>& prob) {
  if (prob.rank() != 3) throw ShapeError("argmax_classes: expected [C, H, W], got " + shape_str(prob.shape()));
  const Index c = prob.dim(0), h = prob.dim(1), w = prob.dim(2);
  LabelGrid out(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      int best = 0;
      for (Index k = 1; k < c; ++k)
        if (prob[(k * h + y) * w + x] > prob[(best * h + y) * w + x]) best = static_cast<int>(k);
      out(y, x) = best;
    }
  return out;
}

#define PETROSAM_INSTANTIATE(S)                                                                              \
  template class VitEncoderLite<S>;                                                                          \
  template class EdgeEncoderLite<S>;                                                                         \
  template class PromptEncoder<S>;                                                                           \
  template class MaskDecoder<S>;                                                                             \
  template class TeacherModel<S>;                                                                            \
  template class StudentModel<S>;                                                                            \
  template Tensor<S> stack_views<S>(const std::vector<const synth::PolarizedGroup*>&);                     \
  template Tensor<S> stack_entropy<S>(const std::vector<const Tensor<double>*>&);                          \
  template Tensor<S> stack_maps<S>(const std::vector<const Grid<double>*>&);                               \
  template Grid<double> slice_map<S>(const Tensor<S>&, Index);                                              \
  template synth::EdgeMask teacher_forward<S>(const TeacherModel<S>&, const synth::PolarizedGroup&);       \
  template StudentPrediction student_forward<S>(const StudentModel<S>&, const synth::PolarizedGroup&,      \
                                                const synth::EdgeMask&, const entropy::EntropyOptions&);

PETROSAM_INSTANTIATE(float)
PETROSAM_INSTANTIATE(double)
#undef PETROSAM_INSTANTIATE

}  // namespace petrosam::models
