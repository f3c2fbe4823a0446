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

#include "petrosam/blocks.hpp"
#include "support/gradcheck.hpp"

using namespace petrosam;
using namespace petrosam::blocks;
using testing::gradcheck;
using testing::random_tensor;

namespace {

std::mt19937_64 rng(77);

void fill(ParamStore<double>& store, double std) {
  for (auto& [_, v] : store.entries()) testing::randomize(v->value, rng, std);
}

void zero(const Var<double>& v) {
  if (v) v->value.array().setZero();
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  return (a.array() - b.array()).abs().maxCoeff();
}

std::vector<Var<double>> leaves_of(const ParamStore<double>& store) {
  std::vector<Var<double>> out;
  for (const auto& [_, v] : store.entries()) out.push_back(v);
  return out;
}

}  // namespace

TEST_CASE("merge: identical views give that view") {
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore<double> store(trial);
    MergeBlock<double> merge(store, "m", 3);
    fill(store, 1.0);
    const auto one = random_tensor({1, 3, 4, 5}, rng);
    Tensor<double> views(Shape{7, 3, 4, 5});
    for (int v = 0; v < 7; ++v) views.array().segment(v * one.size(), one.size()) = one.array();
    const auto out = merge.forward(constant(views)).fused->value;
    CHECK(max_abs_diff(out, one) < 1e-12);
  }
}

TEST_CASE("merge: zero projection gives the arithmetic mean") {
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore<double> store(trial);
    MergeBlock<double> merge(store, "m", 4);
    zero(merge.proj.weight);
    zero(merge.proj.bias);
    const auto feat = random_tensor({14, 4, 3, 3}, rng);
    const auto out = merge.forward(constant(feat)).fused->value;
    const Index per = 4 * 3 * 3;
    for (Index n = 0; n < 2; ++n)
      for (Index i = 0; i < per; ++i) {
        double mean = 0;
        for (int v = 0; v < 7; ++v) mean += feat[(n * 7 + v) * per + i];
        CHECK(out[n * per + i] == doctest::Approx(mean / 7).epsilon(1e-12));
      }
    CHECK(max_abs_diff(out, MergeBlock<double>::mean_views(constant(feat))->value) < 1e-12);
  }
}

TEST_CASE("merge: shifting every view logit leaves the output unchanged") {
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore<double> store(trial);
    MergeBlock<double> merge(store, "m", 3);
    fill(store, 1.0);
    const auto feat = constant(random_tensor({7, 3, 4, 4}, rng));
    const auto before = merge.forward(feat);
    merge.proj.bias->value[0] += 3.7 * (trial + 1);
    const auto after = merge.forward(feat);
    CHECK(max_abs_diff(before.fused->value, after.fused->value) < 1e-6);
    CHECK((after.weights->value.array() - before.weights->value.array() - 3.7 * (trial + 1)).abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("merge: output lies in the per-element hull of the views") {
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore<double> store(100 + trial);
    MergeBlock<double> merge(store, "m", 2);
    fill(store, 2.0);
    const auto feat = random_tensor({7, 2, 3, 3}, rng);
    const auto out = merge.forward(constant(feat)).fused->value;
    const Index per = 18;
    for (Index i = 0; i < per; ++i) {
      double lo = 1e300, hi = -1e300;
      for (int v = 0; v < 7; ++v) {
        lo = std::min(lo, feat[v * per + i]);
        hi = std::max(hi, feat[v * per + i]);
      }
      CHECK(out[i] >= lo - 1e-12);
      CHECK(out[i] <= hi + 1e-12);
    }
  }
}

TEST_CASE("merge: view weights are finite and sum to one after softmax") {
  ParamStore<double> store(1);
  MergeBlock<double> merge(store, "m", 3);
  const auto out = merge.forward(constant(random_tensor({14, 3, 2, 2}, rng)));
  CHECK(out.weights->shape() == Shape{2, 1, 7});
  CHECK(out.weights->value.all_finite());
  const auto w = ops::softmax_lastdim(out.weights)->value;
  CHECK(w.array().segment(0, 7).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(merge.forward(constant(random_tensor({6, 3, 2, 2}, rng))), ShapeError);
}

TEST_CASE("adaptation: zero output projection is the identity") {
  ParamStore<double> store(2);
  AdaptationBlock<double> adapt(store, "a", 6, 4, 5, 2);
  fill(store, 0.5);
  zero(adapt.attention.out.weight);
  zero(adapt.attention.out.bias);
  const auto ecpn = random_tensor({2, 4, 3, 3}, rng);
  const auto out = adapt.forward(constant(random_tensor({2, 6, 5, 5}, rng)), constant(ecpn))->value;
  CHECK(max_abs_diff(out, ecpn) == 0.0);
}

TEST_CASE("adaptation: output follows the edge feature's shape") {
  ParamStore<double> store(3);
  AdaptationBlock<double> adapt(store, "a", 6, 4, 5, 1);
  for (Index s : {1, 2, 4, 7, 8}) {
    const auto out = adapt.forward(constant(random_tensor({1, 6, s, s + 1}, rng)),
                                   constant(random_tensor({1, 4, 4, 2}, rng)));
    CHECK(out->shape() == Shape{1, 4, 4, 2});
    CHECK(out->value.all_finite());
  }
}

TEST_CASE("refine: zero conv zeroes the output, a deep-selecting conv squares it") {
  ParamStore<double> store(4);
  RefineBlock<double> refine(store, "r", 3, 2);
  const auto shallow = constant(random_tensor({1, 3, 8, 8}, rng));
  const auto deep_t = random_tensor({1, 2, 2, 2}, rng);
  const auto deep = constant(deep_t);
  zero(refine.fuse.weight);
  zero(refine.fuse.bias);
  CHECK(refine.forward(shallow, deep)->value.array().abs().maxCoeff() == 0.0);

  for (Index o = 0; o < 2; ++o) refine.fuse.weight->value.at(o, 3 + o, 0, 0) = 1.0;
  const auto out = refine.forward(shallow, deep)->value;
  CHECK(max_abs_diff(out, Tensor<double>(deep_t.shape(), deep_t.array().square())) < 1e-12);
}

TEST_CASE("entropy block: zero gate and zero entropy are identities") {
  ParamStore<double> store(5);
  EntropyBlock<double> block(store, "e", 3, 4, 6);
  const auto feat_t = random_tensor({2, 3, 2, 2}, rng);
  const auto feat = constant(feat_t);
  const auto ent = constant(random_tensor({2, 7, 8, 8}, rng));
  // Fresh block: the gate conv starts at zero.
  CHECK(max_abs_diff(block.forward(feat, ent)->value, feat_t) == 0.0);

  fill(store, 0.5);
  zero(block.summarize.bias);
  zero(block.gate.bias);
  const auto zero_ent = constant(Tensor<double>(Shape{2, 7, 8, 8}));
  CHECK(max_abs_diff(block.forward(feat, zero_ent)->value, feat_t) == 0.0);
  CHECK(max_abs_diff(block.forward(feat, ent)->value, feat_t) > 1e-3);

  CHECK_THROWS_AS(block.forward(feat, constant(random_tensor({2, 7, 6, 6}, rng))), ShapeError);
  CHECK_THROWS_AS(block.forward(feat, constant(random_tensor({2, 7, 8, 4}, rng))), ShapeError);
  CHECK_THROWS_AS(block.forward(feat, constant(random_tensor({2, 6, 8, 8}, rng))), ShapeError);
}

TEST_CASE("entropy block without the residual path gates multiplicatively") {
  ParamStore<double> store(6);
  EntropyBlock<double> block(store, "e", 3, 2, 4, false);
  const auto feat = constant(random_tensor({1, 3, 2, 2}, rng));
  const auto out = block.forward(feat, constant(random_tensor({1, 7, 4, 4}, rng)));
  CHECK(out->value.array().abs().maxCoeff() == 0.0);
}

TEST_CASE("blocks are finite with small random parameters") {
  ParamStore<double> store(7);
  MergeBlock<double> merge(store, "m", 4);
  AdaptationBlock<double> adapt(store, "a", 4, 4, 4, 2);
  RefineBlock<double> refine(store, "r", 4, 4);
  EntropyBlock<double> ent(store, "e", 4, 2, 4);
  fill(store, 0.02);
  const auto feat = constant(random_tensor({7, 4, 4, 4}, rng));
  const auto fused = merge.forward(feat).fused;
  const auto deep = constant(random_tensor({1, 4, 2, 2}, rng));
  CHECK(fused->value.all_finite());
  CHECK(adapt.forward(fused, deep)->value.all_finite());
  CHECK(refine.forward(fused, deep)->value.all_finite());
  CHECK(ent.forward(deep, constant(random_tensor({1, 7, 4, 4}, rng)))->value.all_finite());
}

TEST_CASE("block gradients match central differences") {
  constexpr double kTol = 1e-4;
  SUBCASE("merge") {
    ParamStore<double> store(8);
    MergeBlock<double> merge(store, "m", 3);
    fill(store, 0.5);
    auto x = leaf(random_tensor({14, 3, 3, 3}, rng));
    auto leaves = leaves_of(store);
    leaves.push_back(x);
    CHECK(gradcheck(leaves, [&] { return merge.forward(x).fused; }, 16) < kTol);
  }
  SUBCASE("adaptation") {
    ParamStore<double> store(9);
    AdaptationBlock<double> adapt(store, "a", 4, 4, 3, 2);
    fill(store, 0.5);
    auto sam = leaf(random_tensor({1, 4, 5, 5}, rng));
    auto ecpn = leaf(random_tensor({1, 4, 2, 3}, rng));
    auto leaves = leaves_of(store);
    leaves.push_back(sam);
    leaves.push_back(ecpn);
    CHECK(gradcheck(leaves, [&] { return adapt.forward(sam, ecpn); }, 16) < kTol);
  }
  SUBCASE("refine") {
    ParamStore<double> store(10);
    RefineBlock<double> refine(store, "r", 3, 2);
    fill(store, 0.5);
    auto s = leaf(random_tensor({2, 3, 6, 6}, rng));
    auto d = leaf(random_tensor({2, 2, 3, 3}, rng));
    auto leaves = leaves_of(store);
    leaves.push_back(s);
    leaves.push_back(d);
    CHECK(gradcheck(leaves, [&] { return refine.forward(s, d); }, 16) < kTol);
  }
  SUBCASE("entropy") {
    for (bool residual : {true, false}) {
      ParamStore<double> store(11);
      EntropyBlock<double> block(store, "e", 3, 2, 4, residual);
      fill(store, 0.5);
      auto f = leaf(random_tensor({1, 3, 3, 3}, rng));
      auto e = leaf(random_tensor({1, 7, 6, 6}, rng));
      auto leaves = leaves_of(store);
      leaves.push_back(f);
      leaves.push_back(e);
      CHECK(gradcheck(leaves, [&] { return block.forward(f, e); }, 16) < kTol);
    }
  }
  SUBCASE("layers") {
    ParamStore<double> store(12);
    LayerNorm2d<double> ln(store, "ln", 3);
    CrossAttention<double> attn(store, "at", 4, 2);
    fill(store, 0.5);
    auto x = leaf(random_tensor({2, 3, 2, 2}, rng));
    auto q = leaf(random_tensor({2, 3, 4}, rng)), c = leaf(random_tensor({2, 5, 4}, rng));
    auto leaves = leaves_of(store);
    leaves.insert(leaves.end(), {x, q, c});
    CHECK(gradcheck(leaves, [&] { return ops::add(ops::reshape(ln(x), {2, 3, 4}), attn(q, c)); }, 16) < kTol);
  }
}
