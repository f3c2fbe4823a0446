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

#include "petrosam/models.hpp"
#include "support/gradcheck.hpp"

using namespace petrosam;
using namespace petrosam::models;
using testing::gradcheck;
using testing::random_tensor;

namespace {

std::mt19937_64 rng(314);

ModelDims tiny_dims() {
  ModelDims d;
  d.image_size = 32;
  d.patch_size = 8;
  d.embed_dim = 8;
  d.depth = 1;
  d.heads = 2;
  d.mlp_ratio = 2;
  d.edge_channels = {4, 4, 4, 4, 4};
  d.adapt_hidden = 4;
  d.decoder_hidden = 4;
  d.decoder_out = 4;
  d.entropy_hidden = 4;
  d.prompt_hidden = 4;
  return d;
}

Tensor<double> random_views(Index n, Index size) {
  Tensor<double> v = random_tensor({n, 7, 3, size, size}, rng, 0.3);
  return v;
}

Tensor<double> random_unit(Shape s) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

template <typename Model>
std::vector<Var<double>> randomized_params(Model& m, double std) {
  std::vector<Var<double>> out;
  for (auto& [_, v] : m.params().entries()) {
    testing::randomize(v->value, rng, std);
    out.push_back(v);
  }
  return out;
}

synth::PolarizedGroup random_group(Index size) {
  synth::PolarizedGroup g;
  g.views = random_unit({7, 3, size, size});
  g.group_id = "r";
  return g;
}

}  // namespace

TEST_CASE("encoder taps have the documented resolutions") {
  ModelDims d;
  ParamStore<float> store(1);
  VitEncoderLite<float> vit(store, "vit", d);
  EdgeEncoderLite<float> edge(store, "edge", d);
  const auto vt = vit.forward(constant(random_tensor({2, 3, 64, 64}, rng).cast<float>()));
  CHECK(vt.shallow->shape() == Shape{2, 64, 8, 8});
  CHECK(vt.deep->shape() == Shape{2, 64, 8, 8});
  const auto et = edge.forward(constant(random_tensor({1, 21, 64, 64}, rng).cast<float>()));
  CHECK(et.full->shape() == Shape{1, 16, 64, 64});
  CHECK(et.shallow->shape() == Shape{1, 16, 32, 32});
  CHECK(et.deep->shape() == Shape{1, 64, 4, 4});
}

TEST_CASE("teacher: shape, range and eval determinism") {
  TeacherModel<float> teacher(ModelDims{}, Ablation{}, 3);
  const auto views = random_views(2, 64).cast<float>();
  const auto a = teacher.forward(views), b = teacher.forward(views);
  CHECK(a->shape() == Shape{2, 1, 64, 64});
  CHECK(a->value.array().minCoeff() > 0.0f);
  CHECK(a->value.array().maxCoeff() < 1.0f);
  CHECK((a->value.array() == b->value.array()).all());
  CHECK(teacher.params().count() < 5'000'000);

  const auto g = random_group(64);
  const auto m = teacher_forward(teacher, g);
  CHECK(m.values.rows() == 64);
  CHECK(m.kind == synth::EdgeKind::kProbability);
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("same seed builds identical parameters") {
  TeacherModel<float> a(ModelDims{}, Ablation{}, 9), b(ModelDims{}, Ablation{}, 9), c(ModelDims{}, Ablation{}, 10);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().entries().size(); ++i) {
    const auto& va = a.params().entries()[i].second->value.array();
    CHECK((va == b.params().entries()[i].second->value.array()).all());
    any_diff |= !(va == c.params().entries()[i].second->value.array()).all();
  }
  CHECK(any_diff);
}

TEST_CASE("student: shapes and softmax normalization") {
  StudentModel<float> student(ModelDims{}, Ablation{}, 4);
  CHECK(student.params().count() < 5'000'000);
  const auto views = random_views(2, 64).cast<float>();
  const auto ent = random_unit({2, 7, 64, 64}).cast<float>();
  const auto tp = random_unit({2, 1, 64, 64}).cast<float>();
  const auto out = student.forward(views, ent, tp);
  CHECK(out.edge_prob->shape() == Shape{2, 1, 64, 64});
  CHECK(out.sem_prob->shape() == Shape{2, 4, 64, 64});
  for (Index n = 0; n < 2; ++n)
    for (Index y = 0; y < 64; y += 7)
      for (Index x = 0; x < 64; x += 5) {
        float s = 0;
        for (Index c = 0; c < 4; ++c) s += out.sem_prob->value.at(n, c, y, x);
        CHECK(s == doctest::Approx(1.0f).epsilon(1e-5));
      }

  const auto only_sem = student.forward(views, ent, tp, false, true);
  CHECK_FALSE(only_sem.edge_prob);
  CHECK((only_sem.sem_prob->value.array() == out.sem_prob->value.array()).all());
  const auto only_edge = student.forward(views, ent, tp, true, false);
  CHECK_FALSE(only_edge.sem_prob);
  CHECK((only_edge.edge_prob->value.array() == out.edge_prob->value.array()).all());

  const auto g = random_group(64);
  synth::EdgeMask teacher_map{Grid<double>::Constant(64, 64, 0.3), synth::EdgeKind::kProbability};
  const auto pred = student_forward(student, g, teacher_map, entropy::EntropyOptions{});
  CHECK(pred.semantic.shape() == Shape{4, 64, 64});
  const auto classes = argmax_classes(pred.semantic);
  CHECK(classes.minCoeff() >= 0);
  CHECK(classes.maxCoeff() < 4);
}

TEST_CASE("input sizes must be multiples of 16 and the patch") {
  ModelDims d;
  CHECK_NOTHROW(check_input_size(64, 48, d));
  CHECK_THROWS_WITH_AS(check_input_size(40, 64, d), doctest::Contains("multiple of 16"), ShapeError);
  CHECK_THROWS_AS(check_input_size(0, 64, d), ShapeError);
  TeacherModel<float> teacher(d, Ablation{}, 0);
  CHECK_THROWS_AS(teacher.forward(random_views(1, 40).cast<float>()), ShapeError);
  d.embed_dim = 30;
  CHECK_THROWS_AS(d.validate(), ValidationError);
}

TEST_CASE("prompt encoder: output size and zero parameters") {
  ParamStore<double> store(5);
  PromptEncoder<double> prompt(store, "p", 6, 8);
  const auto mask = constant(random_unit({2, 1, 64, 64}));
  CHECK(prompt.forward(mask, 4, 4)->shape() == Shape{2, 6, 4, 4});
  CHECK(prompt.forward(mask, 2, 3)->shape() == Shape{2, 6, 2, 3});
  for (auto& [_, v] : store.entries()) v->value.array().setZero();
  CHECK(prompt.forward(mask, 4, 4)->value.array().abs().maxCoeff() == 0.0);
}

TEST_CASE("ablated forwards stay valid") {
  const auto views = random_views(1, 64).cast<float>();
  const auto ent = random_unit({1, 7, 64, 64}).cast<float>();
  const auto tp = random_unit({1, 1, 64, 64}).cast<float>();
  for (int mask = 0; mask < 8; ++mask) {
    Ablation ab;
    ab.merge = mask & 1;
    ab.adaptation = mask & 2;
    ab.refine = mask & 4;
    TeacherModel<float> t(ModelDims{}, ab, 1);
    CHECK(t.forward(views)->value.all_finite());
  }
  Ablation ab;
  ab.entropy_block = false;
  ab.stage1_prompt = false;
  StudentModel<float> s(ModelDims{}, ab, 1);
  const auto out = s.forward(views, Tensor<float>(), Tensor<float>());
  CHECK(out.edge_prob->value.all_finite());
  CHECK(out.sem_prob->value.all_finite());
}

TEST_CASE("without the stage-1 prompt the teacher map is ignored") {
  Ablation ab;
  ab.stage1_prompt = false;
  StudentModel<double> s(tiny_dims(), ab, 2);
  randomized_params(s, 0.3);
  const auto views = random_views(1, 32);
  const auto ent = random_unit({1, 7, 32, 32});
  const auto a = s.forward(views, ent, random_unit({1, 1, 32, 32}), true, false);
  const auto b = s.forward(views, ent, random_unit({1, 1, 32, 32}), true, false);
  CHECK((a.edge_prob->value.array() == b.edge_prob->value.array()).all());

  StudentModel<double> full(tiny_dims(), Ablation{}, 2);
  randomized_params(full, 0.3);
  const auto c = full.forward(views, ent, random_unit({1, 1, 32, 32}), true, false);
  const auto d = full.forward(views, ent, random_unit({1, 1, 32, 32}), true, false);
  CHECK_FALSE((c.edge_prob->value.array() == d.edge_prob->value.array()).all());
}

TEST_CASE("model gradients match central differences") {
  constexpr double kTol = 1e-4;
  SUBCASE("prompt encoder") {
    ParamStore<double> store(6);
    PromptEncoder<double> prompt(store, "p", 4, 4);
    std::vector<Var<double>> leaves;
    for (auto& [_, v] : store.entries()) {
      testing::randomize(v->value, rng, 0.5);
      leaves.push_back(v);
    }
    auto mask = leaf(random_unit({1, 1, 32, 32}));
    leaves.push_back(mask);
    CHECK(gradcheck(leaves, [&] { return prompt.forward(mask, 2, 2); }, 12) < kTol);
  }
  SUBCASE("teacher") {
    TeacherModel<double> teacher(tiny_dims(), Ablation{}, 7);
    const auto leaves = randomized_params(teacher, 0.3);
    const auto views = random_views(1, 32);
    CHECK(gradcheck(leaves, [&] { return teacher.logits(views); }, 3) < kTol);
  }
  SUBCASE("teacher with every fusion block ablated") {
    Ablation ab;
    ab.merge = ab.adaptation = ab.refine = false;
    TeacherModel<double> teacher(tiny_dims(), ab, 8);
    const auto leaves = randomized_params(teacher, 0.3);
    const auto views = random_views(1, 32);
    CHECK(gradcheck(leaves, [&] { return teacher.logits(views); }, 3) < kTol);
  }
  SUBCASE("student") {
    StudentModel<double> student(tiny_dims(), Ablation{}, 9);
    const auto leaves = randomized_params(student, 0.3);
    const auto views = random_views(1, 32);
    const auto ent = random_unit({1, 7, 32, 32}), tp = random_unit({1, 1, 32, 32});
    CHECK(gradcheck(leaves, [&] {
      const auto out = student.forward(views, ent, tp);
      return ops::concat_channels(out.edge_logits, out.sem_prob);
    }, 3) < kTol);
  }
}

TEST_CASE("stacking helpers") {
  const auto g1 = random_group(32), g2 = random_group(32);
  const auto v = stack_views<double>({&g1, &g2});
  CHECK(v.shape() == Shape{2, 7, 3, 32, 32});
  CHECK(v[7 * 3 * 32 * 32] == g2.views[0] - 0.5);
  const Grid<double> m1 = Grid<double>::Random(32, 32), m2 = Grid<double>::Random(32, 32);
  const auto s = stack_maps<float>({&m1, &m2});
  CHECK(s.shape() == Shape{2, 1, 32, 32});
  CHECK((slice_map(s, 1) - m2).abs().maxCoeff() < 1e-6);
  const Grid<double> bad = Grid<double>::Zero(16, 32);
  CHECK_THROWS_AS(stack_maps<float>({&m1, &bad}), ShapeError);
}
