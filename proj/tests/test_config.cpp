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

#include <set>

#include "petrosam/config.hpp"
#include "petrosam/optim.hpp"

using namespace petrosam;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(PETROSAM_SOURCE_DIR) / "configs";

std::map<std::string, std::string> as_map(const TrainConfig& c) {
  auto pairs = c.to_pairs();
  return {pairs.begin(), pairs.end()};
}

}  // namespace

TEST_CASE("paper profile carries the published settings") {
  const auto c = load_config(kConfigs / "paper.cfg");
  CHECK(c.epochs == 50);
  CHECK(c.batch_size == 4);
  CHECK(c.lr == 2e-4);
  CHECK(c.min_lr == 2e-6);
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.999);
  CHECK(c.adam_eps == 1e-8);
  CHECK(c.weight_decay == 2e-4);
  CHECK(c.loss.lambda_e == 4e-4);
  CHECK(c.dims.image_size == 1024);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("desk profile overrides sizes only") {
  const auto paper = as_map(load_config(kConfigs / "paper.cfg"));
  const auto desk_cfg = load_config(kConfigs / "desk.cfg");
  const auto desk = as_map(desk_cfg);
  const std::set<std::string> size_keys = {"epochs", "image_size", "patch_size", "embed_dim", "depth",
                                           "heads", "mlp_ratio", "edge_channels", "adapt_hidden", "adapt_heads",
                                           "decoder_hidden", "decoder_out", "entropy_hidden", "prompt_hidden"};
  REQUIRE(paper.size() == desk.size());
  for (const auto& [k, v] : paper)
    if (desk.at(k) != v) CHECK_MESSAGE(size_keys.count(k) == 1, k);
  CHECK(desk_cfg.dims.image_size == 64);
  CHECK(desk_cfg.epochs == 5);
  CHECK_NOTHROW(desk_cfg.validate());
}

TEST_CASE("text round trip and hash") {
  TrainConfig c;
  c.stage = 2;
  c.lr = 1.25e-3;
  c.ablation.entropy_block = false;
  c.dims.edge_channels = {8, 8, 16, 24, 32};
  c.entropy_mode = entropy::CodeMode::kPaper;
  const auto back = parse_config(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.hash() == c.hash());
  CHECK(c.hash().size() == 16);
  CHECK(c.hash().find_first_not_of("0123456789abcdef") == std::string::npos);
  TrainConfig d = c;
  d.set("tau", "4");
  CHECK(d.hash() != c.hash());
}

TEST_CASE("parsing rules") {
  const auto c = parse_config("# comment\nstage = 2   # trailing\n\nlr=0.001\nmerge = off\n");
  CHECK(c.stage == 2);
  CHECK(c.lr == 1e-3);
  CHECK_FALSE(c.ablation.merge);
  CHECK_THROWS_WITH_AS(parse_config("learning_rate = 1"), doctest::Contains("unknown key"), ValidationError);
  CHECK_THROWS_AS(parse_config("lr = fast"), ValidationError);
  CHECK_THROWS_AS(parse_config("merge = maybe"), ValidationError);
  CHECK_THROWS_AS(parse_config("just text"), ValidationError);
  CHECK_THROWS_AS(parse_config("entropy_mode = fancy"), ValidationError);
  CHECK_THROWS_AS(load_config(kConfigs / "missing.cfg"), ValidationError);
  TrainConfig bad;
  bad.train_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("every ablation table row is a valid config") {
  CHECK(table_rows(1).size() == 8);
  CHECK(table_rows(2).size() == 6);
  for (int stage : {1, 2})
    for (const auto& [name, ab] : table_rows(stage)) {
      TrainConfig c;
      c.stage = stage;
      c.ablation = ab;
      CHECK(ablation_row(c) == name);
      CHECK_NOTHROW(lint_config(c, false));
    }
}

TEST_CASE("linter rejects combinations outside the tables") {
  TrainConfig c;
  c.stage = 2;
  c.ablation.merge = false;
  CHECK_THROWS_WITH_AS(lint_config(c, false), doctest::Contains("--free-form"), ValidationError);
  CHECK_NOTHROW(lint_config(c, true));
  c = TrainConfig{};
  c.ablation.loss_sem = false;
  c.ablation.entropy_block = false;
  c.stage = 2;
  CHECK_THROWS_AS(lint_config(c, false), ValidationError);
}

TEST_CASE("cosine schedule with warm restarts") {
  CHECK(cosine_warm_restart_lr(0, 2e-4, 2e-6, 10) == doctest::Approx(2e-4));
  CHECK(cosine_warm_restart_lr(5, 2e-4, 2e-6, 10) == doctest::Approx(1.01e-4));
  CHECK(cosine_warm_restart_lr(9.999, 2e-4, 2e-6, 10) == doctest::Approx(2e-6).epsilon(1e-3));
  CHECK(cosine_warm_restart_lr(10, 2e-4, 2e-6, 10) == doctest::Approx(2e-4));
  CHECK(cosine_warm_restart_lr(10, 2e-4, 2e-6, 5, 2) == doctest::Approx(1.01e-4));
  CHECK(cosine_warm_restart_lr(15, 2e-4, 2e-6, 5, 2) == doctest::Approx(2e-4));
  for (int e = 1; e < 50; ++e)
    CHECK(cosine_warm_restart_lr(e, 2e-4, 2e-6, 50) <= cosine_warm_restart_lr(e - 1, 2e-4, 2e-6, 50));
  CHECK_THROWS_AS(cosine_warm_restart_lr(0, 1, 0, 0), ValidationError);
}

TEST_CASE("Adam skips parameters without gradient") {
  ParamStore<float> store(1);
  auto a = store.add("a", {3}), b = store.add("b", {3});
  const auto b0 = b->value;
  AdamOptions opts;
  opts.lr = 0.1;
  Adam<float> adam(store, opts);
  a->grad = Tensor<float>(Shape{3}, 1.0f);
  const auto a0 = a->value;
  adam.step();
  CHECK((b->value.array() == b0.array()).all());
  // First Adam step moves each entry by about lr against the gradient sign.
  CHECK(((a0.array() - a->value.array()) - 0.1f).abs().maxCoeff() < 1e-3f);
}
