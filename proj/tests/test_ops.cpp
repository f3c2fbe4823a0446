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


#include "doctest.h"

#include "petrosam/core/ops.hpp"
#include "support/gradcheck.hpp"

using namespace petrosam;
using testing::gradcheck;
using testing::random_tensor;

namespace {

std::mt19937_64 rng(2026);

Var<double> rand_leaf(Shape s, double std = 1.0) { return leaf(random_tensor(std::move(s), rng, std)); }

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  auto a = rand_leaf({2, 3, 4, 4}), b = rand_leaf({2, 3, 4, 4}), c = rand_leaf({3, 4, 4});
  CHECK(gradcheck({a, b}, [&] { return ops::add(a, b); }) < kTol);
  CHECK(gradcheck({a, c}, [&] { return ops::add(a, c); }) < kTol);
  CHECK(gradcheck({a, b}, [&] { return ops::mul(a, b); }) < kTol);
  CHECK(gradcheck({a}, [&] { return ops::scale(a, 1.7); }) < kTol);
  CHECK(gradcheck({a}, [&] { return ops::add_scalar(a, -0.3); }) < kTol);
  CHECK(gradcheck({a}, [&] { return ops::gelu(a); }) < kTol);
  CHECK(gradcheck({a}, [&] { return ops::sigmoid(a); }) < kTol);
  CHECK(gradcheck({a}, [&] { return ops::mean(a); }) < kTol);
  CHECK(gradcheck({a}, [&] { return ops::reshape(a, {6, 16}); }) < kTol);
}

TEST_CASE("relu gradient away from the kink") {
  Tensor<double> t = random_tensor({40}, rng);
  for (Index i = 0; i < t.size(); ++i)
    if (std::abs(t[i]) < 0.1) t[i] = 0.5;
  auto a = leaf(t);
  CHECK(gradcheck({a}, [&] { return ops::relu(a); }, 40) < kTol);
}

TEST_CASE("matmul and linear") {
  auto a = rand_leaf({2, 3, 5}), b = rand_leaf({2, 5, 4}), bt = rand_leaf({2, 4, 5});
  CHECK(gradcheck({a, b}, [&] { return ops::matmul(a, b); }) < kTol);
  CHECK(gradcheck({a, bt}, [&] { return ops::matmul(a, bt, true); }) < kTol);
  auto w = rand_leaf({6, 5}), bias = rand_leaf({6});
  CHECK(gradcheck({a, w, bias}, [&] { return ops::linear(a, w, bias); }) < kTol);
  CHECK(gradcheck({a, w}, [&] { return ops::linear(a, w, Var<double>()); }) < kTol);
}

TEST_CASE("layer norm and softmax") {
  auto x = rand_leaf({2, 3, 6}), g = rand_leaf({6}), b = rand_leaf({6});
  CHECK(gradcheck({x, g, b}, [&] { return ops::layer_norm(x, g, b); }) < kTol);
  CHECK(gradcheck({x}, [&] { return ops::softmax_lastdim(x); }) < kTol);
  auto img = rand_leaf({2, 4, 3, 3});
  CHECK(gradcheck({img}, [&] { return ops::softmax_channels(img); }) < kTol);

  auto s = ops::softmax_channels(img);
  for (Index n = 0; n < 2; ++n)
    for (Index y = 0; y < 3; ++y)
      for (Index xx = 0; xx < 3; ++xx) {
        double total = 0;
        for (Index c = 0; c < 4; ++c) total += s->value.at(n, c, y, xx);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
      }
}

TEST_CASE("convolutions") {
  auto x = rand_leaf({2, 3, 6, 6});
  auto w3 = rand_leaf({4, 3, 3, 3}), b = rand_leaf({4});
  CHECK(gradcheck({x, w3, b}, [&] { return ops::conv2d(x, w3, b, 1, 1); }, 12) < kTol);
  CHECK(gradcheck({x, w3, b}, [&] { return ops::conv2d(x, w3, b, 2, 1); }, 12) < kTol);
  CHECK(gradcheck({x, w3}, [&] { return ops::conv2d(x, w3, Var<double>(), 1, 0); }, 12) < kTol);
  auto wt = rand_leaf({3, 5, 2, 2}), bt = rand_leaf({5});
  CHECK(gradcheck({x, wt, bt}, [&] { return ops::conv_transpose2x2(x, wt, bt); }, 12) < kTol);
}

TEST_CASE("conv2d agrees with a direct loop") {
  auto x = random_tensor({1, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
  auto y = ops::conv2d(constant(x), constant(w), constant(b), 2, 1)->value;
  REQUIRE(y.shape() == Shape{1, 3, 3, 3});
  for (Index o = 0; o < 3; ++o)
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 3; ++j) {
        double acc = b[o];
        for (Index c = 0; c < 2; ++c)
          for (Index ky = 0; ky < 3; ++ky)
            for (Index kx = 0; kx < 3; ++kx) {
              const Index yy = 2 * i - 1 + ky, xx = 2 * j - 1 + kx;
              if (yy < 0 || xx < 0 || yy >= 5 || xx >= 5) continue;
              acc += x.at(0, c, yy, xx) * w.at(o, c, ky, kx);
            }
        CHECK(y.at(0, o, i, j) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("resampling and layout ops") {
  auto x = rand_leaf({2, 3, 6, 4});
  CHECK(gradcheck({x}, [&] { return ops::adaptive_avg_pool2d(x, 3, 2); }) < kTol);
  CHECK(gradcheck({x}, [&] { return ops::adaptive_avg_pool2d(x, 4, 3); }) < kTol);
  CHECK(gradcheck({x}, [&] { return ops::adaptive_avg_pool2d(x, 12, 8); }) < kTol);
  CHECK(gradcheck({x}, [&] { return ops::bilinear_resize(x, 9, 7); }) < kTol);
  CHECK(gradcheck({x}, [&] { return ops::bilinear_resize(x, 3, 2); }) < kTol);
  CHECK(gradcheck({x}, [&] { return ops::pixel_unshuffle(x, 2); }) < kTol);
  CHECK(gradcheck({x}, [&] { return ops::global_avg_pool(x); }) < kTol);
  auto tok = ops::to_tokens(x);
  CHECK(tok->shape() == Shape{2, 24, 3});
  CHECK(gradcheck({x}, [&] { return ops::from_tokens(ops::to_tokens(x), 6, 4); }) < kTol);
  CHECK(ops::from_tokens(ops::to_tokens(x), 6, 4)->value.array().isApprox(x->value.array(), 0.0));
  auto y = rand_leaf({2, 3, 6, 4});
  CHECK(gradcheck({x, y}, [&] { return ops::concat_channels(x, y); }) < kTol);
  auto t = rand_leaf({2, 5, 8});
  CHECK(gradcheck({t}, [&] { return ops::split_heads(t, 2); }) < kTol);
  CHECK(ops::merge_heads(ops::split_heads(t, 4), 4)->value.array().isApprox(t->value.array(), 0.0));
}

TEST_CASE("add_all sums scalars") {
  auto a = rand_leaf({1}), b = rand_leaf({1}), c = rand_leaf({1});
  auto s = ops::add_all<double>({a, b, c});
  CHECK(s->value[0] == doctest::Approx(a->value[0] + b->value[0] + c->value[0]));
  CHECK(gradcheck({a, b, c}, [&] { return ops::add_all<double>({a, b, c}); }) < kTol);
}

TEST_CASE("bilinear resize to the same size is the identity") {
  auto x = random_tensor({1, 2, 5, 7}, rng);
  auto y = ops::bilinear_resize(constant(x), 5, 7)->value;
  CHECK((y.array() - x.array()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  auto a = rand_leaf({3});
  Var<double> y;
  {
    NoGradGuard guard;
    y = ops::sigmoid(a);
  }
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("shape errors") {
  auto a = rand_leaf({2, 3}), b = rand_leaf({4});
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  CHECK_THROWS_AS(ops::reshape(a, {5}), ShapeError);
  CHECK_THROWS_AS(backward(a), ShapeError);
}
