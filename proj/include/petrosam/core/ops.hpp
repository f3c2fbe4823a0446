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

#include "petrosam/core/autograd.hpp"

// Differentiable tensor ops. Image tensors are NCHW, token tensors [N, T, C].
// Implementations are instantiated for float and double.
namespace petrosam::ops {

/// a + b, where b's size divides a's and b is tiled over a's leading axes.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s);

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s);

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a);

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a);

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a);

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape);

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a);

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a);

/// Sum of a list of scalars (each shape [1]).
template <typename Scalar>
Var<Scalar> add_all(const std::vector<Var<Scalar>>& terms);

/// Concatenation along the channel axis of two NCHW tensors.
template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b);

/// Batched a[B,M,K] x b[B,K,N]; with transpose_b, b is [B,N,K].
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_b = false);

/// x[..., K] W^T + bias, with W [O, K] and bias [O] (bias may be null).
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = Scalar(1e-6));

template <typename Scalar>
Var<Scalar> softmax_lastdim(const Var<Scalar>& x);

/// Per-pixel softmax over the channel axis of an NCHW tensor.
template <typename Scalar>
Var<Scalar> softmax_channels(const Var<Scalar>& x);

/// Square-kernel 2-d convolution, weight [O, C, k, k], bias [O] or null.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   int stride = 1, int padding = 0);

/// Transposed convolution with kernel 2 and stride 2, weight [C, O, 2, 2].
template <typename Scalar>
Var<Scalar> conv_transpose2x2(const Var<Scalar>& x, const Var<Scalar>& weight,
                              const Var<Scalar>& bias);

/// Adaptive average pooling; handles both shrinking and growing outputs.
template <typename Scalar>
Var<Scalar> adaptive_avg_pool2d(const Var<Scalar>& x, Index out_h, Index out_w);

/// Bilinear resize with half-pixel centers (align_corners = false).
template <typename Scalar>
Var<Scalar> bilinear_resize(const Var<Scalar>& x, Index out_h, Index out_w);

/// Space-to-depth: [N,C,H,W] -> [N, C*r*r, H/r, W/r].
template <typename Scalar>
Var<Scalar> pixel_unshuffle(const Var<Scalar>& x, int factor);

/// [N,C,H,W] -> [N, H*W, C].
template <typename Scalar>
Var<Scalar> to_tokens(const Var<Scalar>& x);

/// [N, H*W, C] -> [N,C,H,W].
template <typename Scalar>
Var<Scalar> from_tokens(const Var<Scalar>& x, Index h, Index w);

/// [N, T, heads*d] -> [N*heads, T, d].
template <typename Scalar>
Var<Scalar> split_heads(const Var<Scalar>& x, int heads);

/// [N*heads, T, d] -> [N, T, heads*d].
template <typename Scalar>
Var<Scalar> merge_heads(const Var<Scalar>& x, int heads);

/// [N,C,H,W] -> [N,C].
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x);

}  // namespace petrosam::ops
