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

#include "petrosam/core/ops.hpp"

#include <algorithm>
#include <cmath>

namespace petrosam::ops {
namespace {

template <typename Scalar>
using Mat = RowMatrix<Scalar>;
template <typename Scalar>
using MapM = Eigen::Map<Mat<Scalar>>;
template <typename Scalar>
using CMapM = Eigen::Map<const Mat<Scalar>>;

template <typename Scalar>
bool wants(const Var<Scalar>& v) {
  return v && v->requires_grad;
}

void require_rank(const Shape& s, int rank, const char* op) {
  if (static_cast<int>(s.size()) != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
}

template <typename Scalar>
void im2col(const Scalar* x, Index c, Index h, Index w, int k, int stride, int pad, Index oh,
            Index ow, Scalar* cols) {
  for (Index ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        Scalar* row = cols + ((ci * k + ky) * k + kx) * oh * ow;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride - pad + ky;
          Scalar* dst = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, Scalar(0));
            continue;
          }
          const Scalar* src = x + (ci * h + iy) * w;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : Scalar(0);
          }
        }
      }
}

template <typename Scalar>
void col2im(const Scalar* cols, Index c, Index h, Index w, int k, int stride, int pad, Index oh,
            Index ow, Scalar* x) {
  for (Index ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* row = cols + ((ci * k + ky) * k + kx) * oh * ow;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          Scalar* dst = x + (ci * h + iy) * w;
          const Scalar* src = row + oy * ow;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

// PyTorch adaptive pooling window [start, end) for output cell i.
inline std::pair<Index, Index> pool_window(Index i, Index in, Index out) {
  const Index start = (i * in) / out;
  const Index end = ((i + 1) * in + out - 1) / out;
  return {start, end};
}

struct LerpAxis {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

LerpAxis lerp_axis(Index in, Index out) {
  LerpAxis a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    a.lo[i] = lo;
    a.hi[i] = std::min(lo + 1, in - 1);
    a.frac[i] = src - static_cast<double>(lo);
  }
  return a;
}

}  // namespace

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Index na = a->value.size(), nb = b->value.size();
  if (nb == 0 || na % nb != 0)
    throw ShapeError("add: " + shape_str(b->shape()) + " does not tile " + shape_str(a->shape()));
  Tensor<Scalar> out = a->value;
  const Index reps = na / nb;
  for (Index r = 0; r < reps; ++r) out.array().segment(r * nb, nb) += b->value.array();
  return make_result<Scalar>(std::move(out), {a, b}, [reps, nb](Node<Scalar>& self) {
    const auto& g = self.grad.array();
    if (wants(self.parents[0])) self.parents[0]->grad_buffer().array() += g;
    if (wants(self.parents[1])) {
      auto& gb = self.parents[1]->grad_buffer().array();
      for (Index r = 0; r < reps; ++r) gb += g.segment(r * nb, nb);
    }
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a->shape() != b->shape())
    throw ShapeError("mul: shape mismatch " + shape_str(a->shape()) + " vs " +
                     shape_str(b->shape()));
  Tensor<Scalar> out(a->shape(), a->value.array() * b->value.array());
  return make_result<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    const auto& g = self.grad.array();
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) pa->grad_buffer().array() += g * pb->value.array();
    if (wants(pb)) pb->grad_buffer().array() += g * pa->value.array();
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a->shape(), a->value.array() * s);
  return make_result<Scalar>(std::move(out), {a}, [s](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().array() += self.grad.array() * s;
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a->shape(), a->value.array() + s);
  return make_result<Scalar>(std::move(out), {a}, [](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().array() += self.grad.array();
  });
}

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  const Scalar k0 = Scalar(0.7978845608028654);  // sqrt(2/pi)
  const Scalar k1 = Scalar(0.044715);
  const auto& x = a->value.array();
  typename Tensor<Scalar>::Array t = (k0 * (x + k1 * x.cube())).tanh();
  Tensor<Scalar> out(a->shape(), Scalar(0.5) * x * (Scalar(1) + t));
  return make_result<Scalar>(std::move(out), {a}, [k0, k1, t = std::move(t)](Node<Scalar>& self) {
    const auto& x = self.parents[0]->value.array();
    auto d = Scalar(0.5) * (Scalar(1) + t) +
             Scalar(0.5) * x * (Scalar(1) - t.square()) * k0 * (Scalar(1) + Scalar(3) * k1 * x.square());
    self.parents[0]->grad_buffer().array() += self.grad.array() * d;
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  Tensor<Scalar> out(a->shape(), a->value.array().max(Scalar(0)));
  return make_result<Scalar>(std::move(out), {a}, [](Node<Scalar>& self) {
    const auto& x = self.parents[0]->value.array();
    self.parents[0]->grad_buffer().array() +=
        (x > Scalar(0)).select(self.grad.array(), Scalar(0));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  Tensor<Scalar> out(a->shape(), Scalar(1) / (Scalar(1) + (-a->value.array()).exp()));
  return make_result<Scalar>(std::move(out), {a}, [](Node<Scalar>& self) {
    const auto& y = self.value.array();
    self.parents[0]->grad_buffer().array() += self.grad.array() * y * (Scalar(1) - y);
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  Tensor<Scalar> out = a->value.reshaped(std::move(shape));
  return make_result<Scalar>(std::move(out), {a}, [](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().array() += self.grad.array();
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Tensor<Scalar> out(Shape{1}, a->value.array().sum());
  return make_result<Scalar>(std::move(out), {a}, [](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().array() += self.grad[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a->value.size());
  return scale(sum(a), inv);
}

template <typename Scalar>
Var<Scalar> add_all(const std::vector<Var<Scalar>>& terms) {
  if (terms.empty()) throw ValidationError("add_all: no terms");
  Scalar total = 0;
  for (const auto& t : terms) {
    if (t->value.size() != 1) throw ShapeError("add_all: terms must be scalars");
    total += t->value[0];
  }
  return make_result<Scalar>(Tensor<Scalar>(Shape{1}, total), terms, [](Node<Scalar>& self) {
    for (auto& p : self.parents)
      if (wants(p)) p->grad_buffer()[0] += self.grad[0];
  });
}

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_rank(a->shape(), 4, "concat_channels");
  require_rank(b->shape(), 4, "concat_channels");
  const Index n = a->dim(0), ca = a->dim(1), cb = b->dim(1), h = a->dim(2), w = a->dim(3);
  if (b->dim(0) != n || b->dim(2) != h || b->dim(3) != w)
    throw ShapeError("concat_channels: " + shape_str(a->shape()) + " vs " + shape_str(b->shape()));
  const Index sa = ca * h * w, sb = cb * h * w;
  Tensor<Scalar> out(Shape{n, ca + cb, h, w});
  for (Index i = 0; i < n; ++i) {
    out.array().segment(i * (sa + sb), sa) = a->value.array().segment(i * sa, sa);
    out.array().segment(i * (sa + sb) + sa, sb) = b->value.array().segment(i * sb, sb);
  }
  return make_result<Scalar>(std::move(out), {a, b}, [n, sa, sb](Node<Scalar>& self) {
    const auto& g = self.grad.array();
    for (Index i = 0; i < n; ++i) {
      if (wants(self.parents[0]))
        self.parents[0]->grad_buffer().array().segment(i * sa, sa) += g.segment(i * (sa + sb), sa);
      if (wants(self.parents[1]))
        self.parents[1]->grad_buffer().array().segment(i * sb, sb) +=
            g.segment(i * (sa + sb) + sa, sb);
    }
  });
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_b) {
  require_rank(a->shape(), 3, "matmul");
  require_rank(b->shape(), 3, "matmul");
  const Index batch = a->dim(0), m = a->dim(1), k = a->dim(2);
  const Index n = transpose_b ? b->dim(1) : b->dim(2);
  const Index kb = transpose_b ? b->dim(2) : b->dim(1);
  if (b->dim(0) != batch || kb != k)
    throw ShapeError("matmul: " + shape_str(a->shape()) + " x " + shape_str(b->shape()) +
                     (transpose_b ? "^T" : ""));
  Tensor<Scalar> out(Shape{batch, m, n});
  const Index brows = transpose_b ? n : k, bcols = transpose_b ? k : n;
  for (Index i = 0; i < batch; ++i) {
    auto A = a->value.matrix(m, k, i * m * k);
    auto B = b->value.matrix(brows, bcols, i * k * n);
    auto C = out.matrix(m, n, i * m * n);
    if (transpose_b)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A * B;
  }
  return make_result<Scalar>(
      std::move(out), {a, b}, [=](Node<Scalar>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        for (Index i = 0; i < batch; ++i) {
          auto G = self.grad.matrix(m, n, i * m * n);
          auto A = pa->value.matrix(m, k, i * m * k);
          auto B = pb->value.matrix(brows, bcols, i * k * n);
          if (wants(pa)) {
            auto gA = pa->grad_buffer().matrix(m, k, i * m * k);
            if (transpose_b)
              gA.noalias() += G * B;
            else
              gA.noalias() += G * B.transpose();
          }
          if (wants(pb)) {
            auto gB = pb->grad_buffer().matrix(brows, bcols, i * k * n);
            if (transpose_b)
              gB.noalias() += G.transpose() * A;
            else
              gB.noalias() += A.transpose() * G;
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  require_rank(weight->shape(), 2, "linear weight");
  const Index o = weight->dim(0), k = weight->dim(1);
  if (x->shape().back() != k)
    throw ShapeError("linear: input " + shape_str(x->shape()) + " vs weight " +
                     shape_str(weight->shape()));
  const Index rows = x->value.size() / k;
  Shape out_shape = x->shape();
  out_shape.back() = o;
  Tensor<Scalar> out(out_shape);
  auto X = x->value.matrix(rows, k);
  auto W = weight->value.matrix(o, k);
  auto Y = out.matrix(rows, o);
  Y.noalias() = X * W.transpose();
  if (bias) Y.rowwise() += bias->value.array().matrix().transpose();
  return make_result<Scalar>(std::move(out), {x, weight, bias}, [=](Node<Scalar>& self) {
    auto G = self.grad.matrix(rows, o);
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    if (wants(px)) px->grad_buffer().matrix(rows, k).noalias() += G * pw->value.matrix(o, k);
    if (wants(pw))
      pw->grad_buffer().matrix(o, k).noalias() += G.transpose() * px->value.matrix(rows, k);
    if (wants(pb)) pb->grad_buffer().array() += G.colwise().sum().transpose().array();
  });
}

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps) {
  const Index c = x->shape().back();
  const Index rows = x->value.size() / c;
  if (gamma->value.size() != c || beta->value.size() != c)
    throw ShapeError("layer_norm: affine size does not match " + shape_str(x->shape()));
  Tensor<Scalar> out(x->shape());
  Tensor<Scalar> xhat(x->shape());
  typename Tensor<Scalar>::Array inv_std(rows);
  auto X = x->value.matrix(rows, c);
  auto Xh = xhat.matrix(rows, c);
  auto Y = out.matrix(rows, c);
  const auto g = gamma->value.array().matrix().transpose();
  const auto bt = beta->value.array().matrix().transpose();
  for (Index r = 0; r < rows; ++r) {
    const Scalar mu = X.row(r).mean();
    const Scalar var = (X.row(r).array() - mu).square().mean();
    inv_std[r] = Scalar(1) / std::sqrt(var + eps);
    Xh.row(r) = (X.row(r).array() - mu) * inv_std[r];
    Y.row(r) = Xh.row(r).cwiseProduct(g) + bt;
  }
  return make_result<Scalar>(
      std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<Scalar>& self) {
        auto G = self.grad.matrix(rows, c);
        auto Xh = xhat.matrix(rows, c);
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        if (wants(pg))
          pg->grad_buffer().array() += G.cwiseProduct(Xh).colwise().sum().transpose().array();
        if (wants(pb)) pb->grad_buffer().array() += G.colwise().sum().transpose().array();
        if (wants(px)) {
          auto gX = px->grad_buffer().matrix(rows, c);
          const auto gam = pg->value.array().matrix().transpose();
          for (Index r = 0; r < rows; ++r) {
            RowMatrix<Scalar> dxh = G.row(r).cwiseProduct(gam);
            const Scalar m1 = dxh.mean();
            const Scalar m2 = dxh.cwiseProduct(Xh.row(r)).mean();
            gX.row(r).array() +=
                inv_std[r] * (dxh.array() - m1 - Xh.row(r).array() * m2);
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> softmax_lastdim(const Var<Scalar>& x) {
  const Index c = x->shape().back();
  const Index rows = x->value.size() / c;
  Tensor<Scalar> out(x->shape());
  auto X = x->value.matrix(rows, c);
  auto Y = out.matrix(rows, c);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mx = X.row(r).maxCoeff();
    Y.row(r) = (X.row(r).array() - mx).exp();
    Y.row(r) /= Y.row(r).sum();
  }
  return make_result<Scalar>(std::move(out), {x}, [rows, c](Node<Scalar>& self) {
    auto G = self.grad.matrix(rows, c);
    auto Y = self.value.matrix(rows, c);
    auto gX = self.parents[0]->grad_buffer().matrix(rows, c);
    for (Index r = 0; r < rows; ++r) {
      const Scalar dot = G.row(r).dot(Y.row(r));
      gX.row(r).array() += Y.row(r).array() * (G.row(r).array() - dot);
    }
  });
}

template <typename Scalar>
Var<Scalar> softmax_channels(const Var<Scalar>& x) {
  require_rank(x->shape(), 4, "softmax_channels");
  const Index n = x->dim(0), c = x->dim(1), hw = x->dim(2) * x->dim(3);
  Tensor<Scalar> out(x->shape());
  for (Index i = 0; i < n; ++i) {
    auto X = x->value.matrix(c, hw, i * c * hw);
    auto Y = out.matrix(c, hw, i * c * hw);
    RowMatrix<Scalar> mx = X.colwise().maxCoeff();
    for (Index ch = 0; ch < c; ++ch) Y.row(ch) = (X.row(ch) - mx).array().exp();
    RowMatrix<Scalar> total = Y.colwise().sum();
    for (Index ch = 0; ch < c; ++ch) Y.row(ch).array() /= total.array();
  }
  return make_result<Scalar>(std::move(out), {x}, [n, c, hw](Node<Scalar>& self) {
    for (Index i = 0; i < n; ++i) {
      auto G = self.grad.matrix(c, hw, i * c * hw);
      auto Y = self.value.matrix(c, hw, i * c * hw);
      auto gX = self.parents[0]->grad_buffer().matrix(c, hw, i * c * hw);
      RowMatrix<Scalar> dot = G.cwiseProduct(Y).colwise().sum();
      for (Index ch = 0; ch < c; ++ch)
        gX.row(ch).array() += Y.row(ch).array() * (G.row(ch) - dot).array();
    }
  });
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   int stride, int padding) {
  require_rank(x->shape(), 4, "conv2d input");
  require_rank(weight->shape(), 4, "conv2d weight");
  const Index n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
  const Index o = weight->dim(0);
  const int k = static_cast<int>(weight->dim(2));
  if (weight->dim(1) != c || weight->dim(3) != k)
    throw ShapeError("conv2d: weight " + shape_str(weight->shape()) + " vs input " +
                     shape_str(x->shape()));
  const Index oh = (h + 2 * padding - k) / stride + 1;
  const Index ow = (w + 2 * padding - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: input too small " + shape_str(x->shape()));
  const Index ckk = c * k * k, ohw = oh * ow;
  const bool direct = (k == 1 && stride == 1 && padding == 0);

  Tensor<Scalar> out(Shape{n, o, oh, ow});
  Mat<Scalar> cols(direct ? 0 : ckk, direct ? 0 : ohw);
  auto W = weight->value.matrix(o, ckk);
  for (Index i = 0; i < n; ++i) {
    auto Y = out.matrix(o, ohw, i * o * ohw);
    if (direct) {
      Y.noalias() = W * x->value.matrix(c, ohw, i * c * h * w);
    } else {
      im2col(x->value.data() + i * c * h * w, c, h, w, k, stride, padding, oh, ow, cols.data());
      Y.noalias() = W * cols;
    }
    if (bias) Y.colwise() += bias->value.array().matrix();
  }
  return make_result<Scalar>(std::move(out), {x, weight, bias}, [=](Node<Scalar>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    auto W = pw->value.matrix(o, ckk);
    Mat<Scalar> cols(direct ? 0 : ckk, direct ? 0 : ohw);
    Mat<Scalar> dcols;
    for (Index i = 0; i < n; ++i) {
      auto G = self.grad.matrix(o, ohw, i * o * ohw);
      if (wants(pb)) pb->grad_buffer().array() += G.rowwise().sum().array();
      if (direct) {
        if (wants(pw))
          pw->grad_buffer().matrix(o, ckk).noalias() +=
              G * px->value.matrix(c, ohw, i * c * h * w).transpose();
        if (wants(px))
          px->grad_buffer().matrix(c, ohw, i * c * h * w).noalias() += W.transpose() * G;
        continue;
      }
      if (wants(pw)) {
        im2col(px->value.data() + i * c * h * w, c, h, w, k, stride, padding, oh, ow,
               cols.data());
        pw->grad_buffer().matrix(o, ckk).noalias() += G * cols.transpose();
      }
      if (wants(px)) {
        dcols.noalias() = W.transpose() * G;
        col2im(dcols.data(), c, h, w, k, stride, padding, oh, ow,
               px->grad_buffer().data() + i * c * h * w);
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> conv_transpose2x2(const Var<Scalar>& x, const Var<Scalar>& weight,
                              const Var<Scalar>& bias) {
  require_rank(x->shape(), 4, "conv_transpose2x2 input");
  require_rank(weight->shape(), 4, "conv_transpose2x2 weight");
  const Index n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
  const Index o = weight->dim(1);
  if (weight->dim(0) != c || weight->dim(2) != 2 || weight->dim(3) != 2)
    throw ShapeError("conv_transpose2x2: weight " + shape_str(weight->shape()) + " vs input " +
                     shape_str(x->shape()));
  const Index hw = h * w, oh = 2 * h, ow = 2 * w;
  Tensor<Scalar> out(Shape{n, o, oh, ow});
  Mat<Scalar> y(o * 4, hw);
  auto Wm = weight->value.matrix(c, o * 4);
  for (Index i = 0; i < n; ++i) {
    y.noalias() = Wm.transpose() * x->value.matrix(c, hw, i * c * hw);
    for (Index oc = 0; oc < o; ++oc)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const Scalar bv = bias ? bias->value[oc] : Scalar(0);
          const Scalar* src = y.data() + (oc * 4 + a * 2 + b) * hw;
          for (Index yy = 0; yy < h; ++yy)
            for (Index xx = 0; xx < w; ++xx)
              out.at(i, oc, 2 * yy + a, 2 * xx + b) = src[yy * w + xx] + bv;
        }
  }
  return make_result<Scalar>(std::move(out), {x, weight, bias}, [=](Node<Scalar>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    Mat<Scalar> gy(o * 4, hw);
    for (Index i = 0; i < n; ++i) {
      for (Index oc = 0; oc < o; ++oc)
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            Scalar* dst = gy.data() + (oc * 4 + a * 2 + b) * hw;
            for (Index yy = 0; yy < h; ++yy)
              for (Index xx = 0; xx < w; ++xx)
                dst[yy * w + xx] = self.grad.at(i, oc, 2 * yy + a, 2 * xx + b);
          }
      if (wants(pb))
        for (Index oc = 0; oc < o; ++oc) pb->grad_buffer()[oc] += gy.middleRows(oc * 4, 4).sum();
      if (wants(pw))
        pw->grad_buffer().matrix(c, o * 4).noalias() +=
            px->value.matrix(c, hw, i * c * hw) * gy.transpose();
      if (wants(px))
        px->grad_buffer().matrix(c, hw, i * c * hw).noalias() += pw->value.matrix(c, o * 4) * gy;
    }
  });
}

template <typename Scalar>
Var<Scalar> adaptive_avg_pool2d(const Var<Scalar>& x, Index out_h, Index out_w) {
  require_rank(x->shape(), 4, "adaptive_avg_pool2d");
  const Index n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
  if (out_h == h && out_w == w) return x;
  Tensor<Scalar> out(Shape{n, c, out_h, out_w});
  for (Index p = 0; p < n * c; ++p) {
    const Scalar* src = x->value.data() + p * h * w;
    Scalar* dst = out.data() + p * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      auto [y0, y1] = pool_window(oy, h, out_h);
      for (Index ox = 0; ox < out_w; ++ox) {
        auto [x0, x1] = pool_window(ox, w, out_w);
        Scalar acc = 0;
        for (Index yy = y0; yy < y1; ++yy)
          for (Index xx = x0; xx < x1; ++xx) acc += src[yy * w + xx];
        dst[oy * out_w + ox] = acc / static_cast<Scalar>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return make_result<Scalar>(std::move(out), {x}, [=](Node<Scalar>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (Index p = 0; p < n * c; ++p) {
      const Scalar* g = self.grad.data() + p * out_h * out_w;
      Scalar* dst = gx.data() + p * h * w;
      for (Index oy = 0; oy < out_h; ++oy) {
        auto [y0, y1] = pool_window(oy, h, out_h);
        for (Index ox = 0; ox < out_w; ++ox) {
          auto [x0, x1] = pool_window(ox, w, out_w);
          const Scalar share = g[oy * out_w + ox] / static_cast<Scalar>((y1 - y0) * (x1 - x0));
          for (Index yy = y0; yy < y1; ++yy)
            for (Index xx = x0; xx < x1; ++xx) dst[yy * w + xx] += share;
        }
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> bilinear_resize(const Var<Scalar>& x, Index out_h, Index out_w) {
  require_rank(x->shape(), 4, "bilinear_resize");
  const Index n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
  if (out_h == h && out_w == w) return x;
  const LerpAxis ay = lerp_axis(h, out_h), ax = lerp_axis(w, out_w);
  Tensor<Scalar> out(Shape{n, c, out_h, out_w});
  for (Index p = 0; p < n * c; ++p) {
    const Scalar* src = x->value.data() + p * h * w;
    Scalar* dst = out.data() + p * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const Scalar fy = static_cast<Scalar>(ay.frac[oy]);
      const Scalar* r0 = src + ay.lo[oy] * w;
      const Scalar* r1 = src + ay.hi[oy] * w;
      for (Index ox = 0; ox < out_w; ++ox) {
        const Scalar fx = static_cast<Scalar>(ax.frac[ox]);
        const Index x0 = ax.lo[ox], x1 = ax.hi[ox];
        dst[oy * out_w + ox] = (Scalar(1) - fy) * ((Scalar(1) - fx) * r0[x0] + fx * r0[x1]) +
                               fy * ((Scalar(1) - fx) * r1[x0] + fx * r1[x1]);
      }
    }
  }
  return make_result<Scalar>(std::move(out), {x}, [=](Node<Scalar>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (Index p = 0; p < n * c; ++p) {
      const Scalar* g = self.grad.data() + p * out_h * out_w;
      Scalar* dst = gx.data() + p * h * w;
      for (Index oy = 0; oy < out_h; ++oy) {
        const Scalar fy = static_cast<Scalar>(ay.frac[oy]);
        Scalar* r0 = dst + ay.lo[oy] * w;
        Scalar* r1 = dst + ay.hi[oy] * w;
        for (Index ox = 0; ox < out_w; ++ox) {
          const Scalar fx = static_cast<Scalar>(ax.frac[ox]);
          const Index x0 = ax.lo[ox], x1 = ax.hi[ox];
          const Scalar v = g[oy * out_w + ox];
          r0[x0] += (Scalar(1) - fy) * (Scalar(1) - fx) * v;
          r0[x1] += (Scalar(1) - fy) * fx * v;
          r1[x0] += fy * (Scalar(1) - fx) * v;
          r1[x1] += fy * fx * v;
        }
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> pixel_unshuffle(const Var<Scalar>& x, int factor) {
  require_rank(x->shape(), 4, "pixel_unshuffle");
  const Index n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
  const Index r = factor;
  if (r <= 0 || h % r != 0 || w % r != 0)
    throw ShapeError("pixel_unshuffle: spatial " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not a multiple of factor " + std::to_string(r));
  const Index oh = h / r, ow = w / r;
  // out[n, (c*r + dy)*r + dx, y, x] = in[n, c, y*r + dy, x*r + dx]
  std::vector<Index> src_index(static_cast<std::size_t>(x->value.size()));
  Tensor<Scalar> out(Shape{n, c * r * r, oh, ow});
  Index k = 0;
  for (Index i = 0; i < n; ++i)
    for (Index ci = 0; ci < c; ++ci)
      for (Index dy = 0; dy < r; ++dy)
        for (Index dx = 0; dx < r; ++dx)
          for (Index yy = 0; yy < oh; ++yy)
            for (Index xx = 0; xx < ow; ++xx, ++k) {
              const Index s = ((i * c + ci) * h + yy * r + dy) * w + xx * r + dx;
              src_index[static_cast<std::size_t>(k)] = s;
              out[k] = x->value[s];
            }
  return make_result<Scalar>(std::move(out), {x},
                             [src_index = std::move(src_index)](Node<Scalar>& self) {
                               auto& gx = self.parents[0]->grad_buffer();
                               for (std::size_t k = 0; k < src_index.size(); ++k)
                                 gx[src_index[k]] += self.grad[static_cast<Index>(k)];
                             });
}

template <typename Scalar>
Var<Scalar> to_tokens(const Var<Scalar>& x) {
  require_rank(x->shape(), 4, "to_tokens");
  const Index n = x->dim(0), c = x->dim(1), hw = x->dim(2) * x->dim(3);
  Tensor<Scalar> out(Shape{n, hw, c});
  for (Index i = 0; i < n; ++i)
    out.matrix(hw, c, i * hw * c) = x->value.matrix(c, hw, i * c * hw).transpose();
  return make_result<Scalar>(std::move(out), {x}, [n, c, hw](Node<Scalar>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (Index i = 0; i < n; ++i)
      gx.matrix(c, hw, i * c * hw) += self.grad.matrix(hw, c, i * hw * c).transpose();
  });
}

template <typename Scalar>
Var<Scalar> from_tokens(const Var<Scalar>& x, Index h, Index w) {
  require_rank(x->shape(), 3, "from_tokens");
  const Index n = x->dim(0), hw = x->dim(1), c = x->dim(2);
  if (hw != h * w)
    throw ShapeError("from_tokens: " + std::to_string(hw) + " tokens cannot form " +
                     std::to_string(h) + "x" + std::to_string(w));
  Tensor<Scalar> out(Shape{n, c, h, w});
  for (Index i = 0; i < n; ++i)
    out.matrix(c, hw, i * c * hw) = x->value.matrix(hw, c, i * hw * c).transpose();
  return make_result<Scalar>(std::move(out), {x}, [n, c, hw](Node<Scalar>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (Index i = 0; i < n; ++i)
      gx.matrix(hw, c, i * hw * c) += self.grad.matrix(c, hw, i * c * hw).transpose();
  });
}

template <typename Scalar>
Var<Scalar> split_heads(const Var<Scalar>& x, int heads) {
  require_rank(x->shape(), 3, "split_heads");
  const Index n = x->dim(0), t = x->dim(1), c = x->dim(2), hd = heads;
  if (c % hd != 0) throw ShapeError("split_heads: channels not divisible by heads");
  if (heads == 1) return x;
  const Index d = c / hd;
  Tensor<Scalar> out(Shape{n * hd, t, d});
  for (Index i = 0; i < n; ++i)
    for (Index hh = 0; hh < hd; ++hh)
      out.matrix(t, d, (i * hd + hh) * t * d) =
          x->value.matrix(t, c, i * t * c).middleCols(hh * d, d);
  return make_result<Scalar>(std::move(out), {x}, [=](Node<Scalar>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (Index i = 0; i < n; ++i)
      for (Index hh = 0; hh < hd; ++hh)
        gx.matrix(t, c, i * t * c).middleCols(hh * d, d) +=
            self.grad.matrix(t, d, (i * hd + hh) * t * d);
  });
}

template <typename Scalar>
Var<Scalar> merge_heads(const Var<Scalar>& x, int heads) {
  require_rank(x->shape(), 3, "merge_heads");
  if (heads == 1) return x;
  const Index hd = heads, n = x->dim(0) / hd, t = x->dim(1), d = x->dim(2), c = d * hd;
  Tensor<Scalar> out(Shape{n, t, c});
  for (Index i = 0; i < n; ++i)
    for (Index hh = 0; hh < hd; ++hh)
      out.matrix(t, c, i * t * c).middleCols(hh * d, d) =
          x->value.matrix(t, d, (i * hd + hh) * t * d);
  return make_result<Scalar>(std::move(out), {x}, [=](Node<Scalar>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (Index i = 0; i < n; ++i)
      for (Index hh = 0; hh < hd; ++hh)
        gx.matrix(t, d, (i * hd + hh) * t * d) +=
            self.grad.matrix(t, c, i * t * c).middleCols(hh * d, d);
  });
}

template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x) {
  require_rank(x->shape(), 4, "global_avg_pool");
  const Index n = x->dim(0), c = x->dim(1), hw = x->dim(2) * x->dim(3);
  Tensor<Scalar> out(Shape{n, c});
  out.matrix(n * c, 1) = x->value.matrix(n * c, hw).rowwise().mean();
  return make_result<Scalar>(std::move(out), {x}, [n, c, hw](Node<Scalar>& self) {
    auto gx = self.parents[0]->grad_buffer().matrix(n * c, hw);
    const auto g = self.grad.matrix(n * c, 1);
    gx.colwise() += g.col(0) / static_cast<Scalar>(hw);
  });
}

#define PETROSAM_INSTANTIATE_OPS(S)                                                          \
  template Var<S> add(const Var<S>&, const Var<S>&);                                         \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                         \
  template Var<S> scale(const Var<S>&, S);                                                   \
  template Var<S> add_scalar(const Var<S>&, S);                                              \
  template Var<S> gelu(const Var<S>&);                                                       \
  template Var<S> relu(const Var<S>&);                                                       \
  template Var<S> sigmoid(const Var<S>&);                                                    \
  template Var<S> reshape(const Var<S>&, Shape);                                             \
  template Var<S> sum(const Var<S>&);                                                        \
  template Var<S> mean(const Var<S>&);                                                       \
  template Var<S> add_all(const std::vector<Var<S>>&);                                       \
  template Var<S> concat_channels(const Var<S>&, const Var<S>&);                             \
  template Var<S> matmul(const Var<S>&, const Var<S>&, bool);                                \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                       \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);                \
  template Var<S> softmax_lastdim(const Var<S>&);                                            \
  template Var<S> softmax_channels(const Var<S>&);                                           \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, int, int);             \
  template Var<S> conv_transpose2x2(const Var<S>&, const Var<S>&, const Var<S>&);            \
  template Var<S> adaptive_avg_pool2d(const Var<S>&, Index, Index);                          \
  template Var<S> bilinear_resize(const Var<S>&, Index, Index);                              \
  template Var<S> pixel_unshuffle(const Var<S>&, int);                                       \
  template Var<S> to_tokens(const Var<S>&);                                                  \
  template Var<S> from_tokens(const Var<S>&, Index, Index);                                  \
  template Var<S> split_heads(const Var<S>&, int);                                           \
  template Var<S> merge_heads(const Var<S>&, int);                                           \
  template Var<S> global_avg_pool(const Var<S>&);

PETROSAM_INSTANTIATE_OPS(float)
PETROSAM_INSTANTIATE_OPS(double)

#undef PETROSAM_INSTANTIATE_OPS

}  // namespace petrosam::ops
