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

#include "petrosam/blocks.hpp"

#include <cmath>

namespace petrosam::blocks {

template <typename Scalar>
Conv2d<Scalar>::Conv2d(ParamStore<Scalar>& store, const std::string& name, Index in, Index out,
                       int kernel, int stride_, int padding_, Init weight_init)
    : weight(store.add(name + ".weight", Shape{out, in, kernel, kernel}, weight_init,
                       static_cast<double>(in * kernel * kernel))),
      bias(store.add(name + ".bias", Shape{out}, Init::kZeros)),
      stride(stride_),
      padding(padding_) {}

template <typename Scalar>
Var<Scalar> Conv2d<Scalar>::operator()(const Var<Scalar>& x) const {
  return ops::conv2d(x, weight, bias, stride, padding);
}

template <typename Scalar>
ConvTranspose2x2<Scalar>::ConvTranspose2x2(ParamStore<Scalar>& store, const std::string& name,
                                           Index in, Index out)
    : weight(store.add(name + ".weight", Shape{in, out, 2, 2}, Init::kHeNormal, static_cast<double>(in))),
      bias(store.add(name + ".bias", Shape{out}, Init::kZeros)) {}

template <typename Scalar>
Var<Scalar> ConvTranspose2x2<Scalar>::operator()(const Var<Scalar>& x) const {
  return ops::conv_transpose2x2(x, weight, bias);
}

template <typename Scalar>
Linear<Scalar>::Linear(ParamStore<Scalar>& store, const std::string& name, Index in, Index out,
                       Init weight_init)
    : weight(store.add(name + ".weight", Shape{out, in}, weight_init)),
      bias(store.add(name + ".bias", Shape{out}, Init::kZeros)) {}

template <typename Scalar>
Var<Scalar> Linear<Scalar>::operator()(const Var<Scalar>& x) const {
  return ops::linear(x, weight, bias);
}

template <typename Scalar>
LayerNorm<Scalar>::LayerNorm(ParamStore<Scalar>& store, const std::string& name, Index channels)
    : gamma(store.add(name + ".gamma", Shape{channels}, Init::kOnes)),
      beta(store.add(name + ".beta", Shape{channels}, Init::kZeros)) {}

template <typename Scalar>
Var<Scalar> LayerNorm<Scalar>::operator()(const Var<Scalar>& x) const {
  return ops::layer_norm(x, gamma, beta);
}

template <typename Scalar>
LayerNorm2d<Scalar>::LayerNorm2d(ParamStore<Scalar>& store, const std::string& name, Index channels)
    : norm(store, name, channels) {}

template <typename Scalar>
Var<Scalar> LayerNorm2d<Scalar>::operator()(const Var<Scalar>& x) const {
  return ops::from_tokens(norm(ops::to_tokens(x)), x->dim(2), x->dim(3));
}

template <typename Scalar>
CrossAttention<Scalar>::CrossAttention(ParamStore<Scalar>& store, const std::string& name,
                                       Index channels, int heads_)
    : q(store, name + ".q", channels, channels),
      k(store, name + ".k", channels, channels),
      v(store, name + ".v", channels, channels),
      out(store, name + ".out", channels, channels),
      heads(heads_) {
  if (heads < 1 || channels % heads != 0)
    throw ValidationError(name + ": channels " + std::to_string(channels) +
                          " not divisible by heads " + std::to_string(heads));
}

template <typename Scalar>
Var<Scalar> CrossAttention<Scalar>::operator()(const Var<Scalar>& query,
                                               const Var<Scalar>& context) const {
  const Index head_dim = query->shape().back() / heads;
  auto qh = ops::split_heads(q(query), heads);
  auto kh = ops::split_heads(k(context), heads);
  auto vh = ops::split_heads(v(context), heads);
  auto scores = ops::scale(ops::matmul(qh, kh, true),
                           static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(head_dim))));
  auto attended = ops::matmul(ops::softmax_lastdim(scores), vh);
  return out(ops::merge_heads(attended, heads));
}

template <typename Scalar>
MergeBlock<Scalar>::MergeBlock(ParamStore<Scalar>& store, const std::string& prefix, Index channels)
    : proj(store, prefix + ".proj", channels, 1) {}

template <typename Scalar>
typename MergeBlock<Scalar>::Output MergeBlock<Scalar>::forward(const Var<Scalar>& feat) const {
  const Shape& s = feat->shape();
  if (s.size() != 4 || s[0] % kViewCount != 0)
    throw ShapeError("merge block: expected [N*7, C, H, W] with 7 views per sample, got " +
                     shape_str(s));
  const Index n = s[0] / kViewCount, c = s[1], h = s[2], w = s[3];
  auto logits = ops::reshape(proj(ops::global_avg_pool(feat)), Shape{n, 1, kViewCount});
  auto weights = ops::softmax_lastdim(logits);
  auto stacked = ops::reshape(feat, Shape{n, kViewCount, c * h * w});
  auto fused = ops::reshape(ops::matmul(weights, stacked), Shape{n, c, h, w});
  return {fused, logits};
}

template <typename Scalar>
Var<Scalar> MergeBlock<Scalar>::mean_views(const Var<Scalar>& feat) {
  const Shape& s = feat->shape();
  if (s.size() != 4 || s[0] % kViewCount != 0)
    throw ShapeError("mean_views: expected [N*7, C, H, W], got " + shape_str(s));
  const Index n = s[0] / kViewCount, c = s[1], h = s[2], w = s[3];
  auto uniform = constant(Tensor<Scalar>(Shape{n, 1, kViewCount}, Scalar(1) / kViewCount));
  auto stacked = ops::reshape(feat, Shape{n, kViewCount, c * h * w});
  return ops::reshape(ops::matmul(uniform, stacked), Shape{n, c, h, w});
}

template <typename Scalar>
AdaptationBlock<Scalar>::AdaptationBlock(ParamStore<Scalar>& store, const std::string& prefix,
                                         Index sam_channels, Index ecpn_channels, Index hidden,
                                         int heads)
    : channel_branch(store, prefix + ".channel_conv", sam_channels, hidden, 1),
      spatial_branch(store, prefix + ".spatial_conv", sam_channels, hidden, 3, 1, 1),
      fuse(store, prefix + ".fuse", 2 * hidden, ecpn_channels, 1),
      attention(store, prefix + ".attn", ecpn_channels, heads) {}

template <typename Scalar>
Var<Scalar> AdaptationBlock<Scalar>::align(const Var<Scalar>& sam_feat, Index height,
                                           Index width) const {
  auto pooled = ops::adaptive_avg_pool2d(sam_feat, height, width);
  return fuse(ops::concat_channels(channel_branch(pooled), spatial_branch(pooled)));
}

template <typename Scalar>
Var<Scalar> AdaptationBlock<Scalar>::forward(const Var<Scalar>& sam_feat,
                                             const Var<Scalar>& ecpn_feat) const {
  if (sam_feat->shape().size() != 4 || ecpn_feat->shape().size() != 4 ||
      sam_feat->dim(0) != ecpn_feat->dim(0))
    throw ShapeError("adaptation block: incompatible inputs " + shape_str(sam_feat->shape()) +
                     " and " + shape_str(ecpn_feat->shape()));
  const Index h = ecpn_feat->dim(2), w = ecpn_feat->dim(3);
  auto aligned = align(sam_feat, h, w);
  auto attended = attention(ops::to_tokens(ecpn_feat), ops::to_tokens(aligned));
  return ops::add(ecpn_feat, ops::from_tokens(attended, h, w));
}

template <typename Scalar>
RefineBlock<Scalar>::RefineBlock(ParamStore<Scalar>& store, const std::string& prefix,
                                 Index shallow_channels, Index deep_channels)
    : fuse(store, prefix + ".fuse", shallow_channels + deep_channels, deep_channels, 1) {}

template <typename Scalar>
Var<Scalar> RefineBlock<Scalar>::forward(const Var<Scalar>& shallow, const Var<Scalar>& deep) const {
  if (shallow->shape().size() != 4 || deep->shape().size() != 4 || shallow->dim(0) != deep->dim(0))
    throw ShapeError("refine block: incompatible inputs " + shape_str(shallow->shape()) + " and " +
                     shape_str(deep->shape()));
  auto pooled = ops::adaptive_avg_pool2d(shallow, deep->dim(2), deep->dim(3));
  return ops::mul(deep, fuse(ops::concat_channels(pooled, deep)));
}

template <typename Scalar>
EntropyBlock<Scalar>::EntropyBlock(ParamStore<Scalar>& store, const std::string& prefix,
                                   Index channels, int factor_, Index hidden, bool residual_)
    : summarize(store, prefix + ".summarize", Index{kViewCount} * factor_ * factor_, hidden, 3, 1, 1),
      gate(store, prefix + ".gate", hidden, channels, 1, 1, 0, Init::kZeros),
      factor(factor_),
      residual(residual_) {}

template <typename Scalar>
Var<Scalar> EntropyBlock<Scalar>::forward(const Var<Scalar>& feat, const Var<Scalar>& entropy) const {
  const Shape& fs = feat->shape();
  const Shape& es = entropy->shape();
  if (fs.size() != 4 || es.size() != 4 || es[1] != kViewCount || fs[0] != es[0])
    throw ShapeError("entropy block: expected feat [N,C,h,w] and entropy [N,7,H,W], got " +
                     shape_str(fs) + " and " + shape_str(es));
  if (es[2] % fs[2] != 0 || es[3] % fs[3] != 0 || es[2] / fs[2] != es[3] / fs[3] ||
      es[2] / fs[2] != factor)
    throw ShapeError("entropy block: entropy " + std::to_string(es[2]) + "x" +
                     std::to_string(es[3]) + " vs feature " + std::to_string(fs[2]) + "x" +
                     std::to_string(fs[3]) + " is not an integer ratio of " +
                     std::to_string(factor));
  auto g = gate(ops::gelu(summarize(ops::pixel_unshuffle(entropy, factor))));
  return residual ? ops::mul(feat, ops::add_scalar(g, Scalar(1))) : ops::mul(feat, g);
}

#define PETROSAM_INSTANTIATE_BLOCKS(S) \
  template struct Conv2d<S>;           \
  template struct ConvTranspose2x2<S>; \
  template struct Linear<S>;           \
  template struct LayerNorm<S>;        \
  template struct LayerNorm2d<S>;      \
  template struct CrossAttention<S>;   \
  template class MergeBlock<S>;        \
  template class AdaptationBlock<S>;   \
  template class RefineBlock<S>;       \
  template class EntropyBlock<S>;

PETROSAM_INSTANTIATE_BLOCKS(float)
PETROSAM_INSTANTIATE_BLOCKS(double)

#undef PETROSAM_INSTANTIATE_BLOCKS

}  // namespace petrosam::blocks
