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


// Acceptance run: one PASS/FAIL line per criterion. Tolerances are pinned
// here; exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "petrosam/blocks.hpp"
#include "petrosam/entropy.hpp"
#include "petrosam/losses.hpp"
#include "petrosam/metrics.hpp"
#include "petrosam/models.hpp"
#include "petrosam/pipeline.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace petrosam;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

models::ModelDims tiny_dims() {
  models::ModelDims d;
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

std::vector<Var<double>> randomized(ParamStore<double>& store, std::mt19937_64& rng, double std) {
  std::vector<Var<double>> out;
  for (auto& [_, v] : store.entries()) {
    testing::randomize(v->value, rng, std);
    out.push_back(v);
  }
  return out;
}

Tensor<double> random_unit(Shape s, std::mt19937_64& rng) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

Grid<double> random_prob(Index h, Index w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Grid<double> m(h, w);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// 1: sliding-window entropy against a per-pixel histogram.
Verdict entropy_fast_path() {
  constexpr double kTol = 1e-9;
  constexpr double kBudget = 60.0;
  std::mt19937_64 rng(101);
  double worst = 0, fast_time = 0;
  int images = 0;
  for (int tau : {4, 5, 6, 7})
    for (int i = 0; i < 13; ++i) {
      const int h = 8 + static_cast<int>(rng() % 57), w = 8 + static_cast<int>(rng() % 57);
      const auto img = testing::random_image(h, w, rng, i % 2 ? 256 : 6);
      const auto t0 = Clock::now();
      const auto fast = entropy::entropy_map(img, {tau});
      fast_time += seconds_since(t0);
      worst = std::max(worst, (fast.values - testing::brute_entropy(img, tau)).abs().maxCoeff());
      ++images;
    }
  return {worst < kTol && fast_time < kBudget,
          std::to_string(images) + " images, max diff " + fmt(worst) + ", fast path " + fmt(fast_time) + " s"};
}

// 2: analytic against central-difference gradients.
Verdict gradients() {
  constexpr double kModelTol = 1e-4;
  constexpr double kLossTol = 1e-5;
  std::mt19937_64 rng(202);
  std::map<std::string, double> err;
  using namespace blocks;
  {
    ParamStore<double> store(1);
    MergeBlock<double> merge(store, "m", 3);
    auto leaves = randomized(store, rng, 0.5);
    auto x = leaf(testing::random_tensor({14, 3, 3, 3}, rng));
    leaves.push_back(x);
    err["merge"] = testing::gradcheck(leaves, [&] { return merge.forward(x).fused; }, 16);
  }
  {
    ParamStore<double> store(2);
    AdaptationBlock<double> adapt(store, "a", 4, 4, 3, 2);
    auto leaves = randomized(store, rng, 0.5);
    auto sam = leaf(testing::random_tensor({1, 4, 5, 5}, rng));
    auto ecpn = leaf(testing::random_tensor({1, 4, 2, 3}, rng));
    leaves.insert(leaves.end(), {sam, ecpn});
    err["adaptation"] = testing::gradcheck(leaves, [&] { return adapt.forward(sam, ecpn); }, 16);
  }
  {
    ParamStore<double> store(3);
    RefineBlock<double> refine(store, "r", 3, 2);
    auto leaves = randomized(store, rng, 0.5);
    auto s = leaf(testing::random_tensor({2, 3, 6, 6}, rng));
    auto d = leaf(testing::random_tensor({2, 2, 3, 3}, rng));
    leaves.insert(leaves.end(), {s, d});
    err["refine"] = testing::gradcheck(leaves, [&] { return refine.forward(s, d); }, 16);
  }
  {
    ParamStore<double> store(4);
    EntropyBlock<double> block(store, "e", 3, 2, 4);
    auto leaves = randomized(store, rng, 0.5);
    auto f = leaf(testing::random_tensor({1, 3, 3, 3}, rng));
    auto e = leaf(testing::random_tensor({1, 7, 6, 6}, rng));
    leaves.insert(leaves.end(), {f, e});
    err["entropy"] = testing::gradcheck(leaves, [&] { return block.forward(f, e); }, 16);
  }
  {
    ParamStore<double> store(5);
    models::PromptEncoder<double> prompt(store, "p", 4, 4);
    auto leaves = randomized(store, rng, 0.5);
    auto mask = leaf(random_unit({1, 1, 32, 32}, rng));
    leaves.push_back(mask);
    err["prompt"] = testing::gradcheck(leaves, [&] { return prompt.forward(mask, 2, 2); }, 12);
  }
  {
    models::TeacherModel<double> teacher(tiny_dims(), models::Ablation{}, 6);
    const auto leaves = randomized(teacher.params(), rng, 0.3);
    const auto views = testing::random_tensor({1, 7, 3, 32, 32}, rng, 0.3);
    err["teacher"] = testing::gradcheck(leaves, [&] { return teacher.logits(views); }, 3);
  }
  const double model_worst = std::max_element(err.begin(), err.end(), [](auto& a, auto& b) {
                               return a.second < b.second;
                             })->second;

  double loss_worst = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = testing::random_mask(8, 9, 0.2, rng);
    const auto t = random_prob(8, 9, rng), m = random_prob(8, 9, rng);
    using namespace losses;
    const std::vector<std::function<LossValue<double>(const Grid<double>&)>> edge_losses = {
        [&](const Grid<double>& p) { return edge_bce(p, g); },
        [&](const Grid<double>& p) { return edge_distance_loss(p, g); },
        [&](const Grid<double>& p) { return stage1_loss(p, g); },
        [&](const Grid<double>& p) { return stage2_edge_loss(p, g, t, 0.6); }};
    for (const auto& f : edge_losses) loss_worst = std::max(loss_worst, testing::grid_gradcheck(m, f));

    Tensor<double> y(Shape{4, 5, 4});
    for (Index i = 0; i < 20; ++i) {
      double s = 0;
      for (int c = 0; c < 4; ++c) s += (y[c * 20 + i] = 0.1 + 0.9 * std::uniform_real_distribution<double>()(rng));
      for (int c = 0; c < 4; ++c) y[c * 20 + i] /= s;
    }
    LabelGrid l(5, 4);
    for (Index i = 0; i < 20; ++i) l.data()[i] = static_cast<int>(rng() % 4);
    const std::vector<std::function<SemanticLossValue<double>(const Tensor<double>&)>> sem_losses = {
        [&](const Tensor<double>& p) { return semantic_ce(p, l); },
        [&](const Tensor<double>& p) { return dice_loss(p, l); }};
    for (const auto& f : sem_losses) {
      const auto grad = f(y).grad;
      Tensor<double> p = y;
      double diff = 0, na = 0, nn = 0;
      for (Index i = 0; i < y.size(); ++i) {
        const double orig = p[i], h = 1e-6;
        p[i] = orig + h;
        const double up = f(p).value;
        p[i] = orig - h;
        const double num = (up - f(p).value) / (2 * h);
        p[i] = orig;
        diff += (grad[i] - num) * (grad[i] - num);
        na += grad[i] * grad[i];
        nn += num * num;
      }
      loss_worst = std::max(loss_worst, std::sqrt(diff) / std::max(std::sqrt(na), std::sqrt(nn)));
    }
  }
  std::string detail;
  for (const auto& [k, v] : err) detail += k + " " + fmt(v) + ", ";
  detail += "losses " + fmt(loss_worst);
  return {model_worst < kModelTol && loss_worst < kLossTol, detail};
}

// 3: metric identities and the reported summary numbers.
Verdict metric_identities() {
  std::mt19937_64 rng(303);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    metrics::EdgeCounts c;
    for (int k = 0; k < 3; ++k)
      c += metrics::count_edges(testing::random_mask(12, 12, 0.3, rng), testing::random_mask(12, 12, 0.3, rng));
    const double f1 = 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn);
    const double iou = static_cast<double>(c.tp) / (c.tp + c.fp + c.fn);
    worst = std::max(worst, std::abs(iou - f1 / (2 - f1)));
    worst = std::max(worst, std::abs(metrics::edge_metrics(c).miou - iou));
  }
  const double a = 100 * metrics::iou_from_f1(0.650), b = 100 * metrics::iou_from_f1(0.615);

  metrics::SemanticCounts cm(4);
  cm.add(0, 0, 1752);
  cm.add(1, 1, 1518);
  cm.add(2, 2, 1784);
  cm.add(3, 3, 1848);
  cm.add(0, 1, 248);
  cm.add(1, 2, 149);
  cm.add(1, 3, 85);
  cm.add(2, 3, 67);
  const double miou = 100 * metrics::semantic_metrics(cm).miou;
  const bool pass = worst < 1e-12 && std::abs(a - 48.15) <= 0.1 && std::abs(b - 44.40) <= 0.1 &&
                    std::abs(miou - 86.3) <= 0.05;
  return {pass, "identity err " + fmt(worst) + ", IoU " + fmt(a) + " / " + fmt(b) + ", matrix mIoU " + fmt(miou)};
}

// 4: the stage-2 edge loss with a zero teacher weight is the stage-1 loss.
Verdict stage2_reduces() {
  std::mt19937_64 rng(404);
  int cases = 0;
  bool equal = true;
  for (int trial = 0; trial < 30; ++trial) {
    const Index h = 4 + static_cast<Index>(rng() % 20), w = 4 + static_cast<Index>(rng() % 20);
    const auto g = testing::random_mask(h, w, 0.1 + 0.02 * trial, rng);
    const auto m = random_prob(h, w, rng), t = random_prob(h, w, rng);
    const auto s1 = losses::stage1_loss(m, g);
    const auto s2 = losses::stage2_edge_loss(m, g, t, 0.0);
    equal = equal && s1.value == s2.value && (s1.grad.array() == s2.grad.array()).all();
    ++cases;
  }
  return {equal, std::to_string(cases) + " cases, value and gradient bit-equal: " + (equal ? "yes" : "no")};
}

// 5: distance transform against brute force.
Verdict distance_transform() {
  std::mt19937_64 rng(505);
  double worst = 0;
  int cases = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const Index h = 1 + static_cast<Index>(rng() % 32), w = 1 + static_cast<Index>(rng() % 32);
    const auto mask = testing::random_mask(h, w, 0.01 + 0.1 * (trial % 5), rng);
    worst = std::max(worst, (losses::distance_map(mask) - testing::brute_distance(mask)).abs().maxCoeff());
    ++cases;
  }
  return {worst < 1e-9, std::to_string(cases) + " masks, max diff " + fmt(worst)};
}

std::vector<pipeline::Sample> synthetic_samples(int n, int size, std::uint64_t seed, const TrainConfig& cfg) {
  std::vector<pipeline::Sample> out;
  for (int i = 0; i < n; ++i) {
    synth::SynthSpec spec;
    spec.image_size = size;
    spec.seed = synth::derive_seed(seed, static_cast<std::uint64_t>(i));
    auto g = synth::generate_group(spec);
    pipeline::Sample s;
    s.id = "g" + std::to_string(i);
    s.group = g.group;
    s.edge = g.edge;
    s.semantic = g.semantic;
    s.distance = losses::distance_map(g.edge.values);
    s.entropy = entropy::group_entropy(s.group, cfg.entropy_options());
    out.push_back(std::move(s));
  }
  return out;
}

// 6: both stages overfit a small synthetic set.
Verdict overfit() {
  constexpr double kF1 = 0.7, kMiou = 0.9, kBudget = 15 * 60.0;
  const auto t0 = Clock::now();
  TrainConfig cfg;
  cfg.stage = 1;
  cfg.lr = 1e-3;
  cfg.epochs = 250;
  cfg.max_steps = 500;
  cfg.batch_size = 4;
  const auto samples = synthetic_samples(8, 64, 7, cfg);

  pipeline::TeacherNet teacher(cfg.dims, cfg.ablation, cfg.seed);
  pipeline::train_stage1(cfg, samples, teacher);
  std::vector<std::pair<Grid<double>, Grid<double>>> edges;
  for (const auto& s : samples) edges.emplace_back(models::teacher_forward(teacher, s.group).values, s.edge.values);
  const double f1 = pipeline::edge_eval(edges, cfg.threshold).metrics.at("F1");

  const auto prompts = pipeline::teacher_prompts(teacher, samples);
  TrainConfig c2 = cfg;
  c2.stage = 2;
  pipeline::StudentNet student(c2.dims, c2.ablation, c2.seed);
  pipeline::train_stage2(c2, samples, prompts, student);
  std::vector<std::pair<LabelGrid, LabelGrid>> sem;
  for (const auto& s : samples) {
    const auto p = models::student_forward(student, s.group, synth::EdgeMask{prompts.at(s.id)}, c2.entropy_options());
    sem.emplace_back(models::argmax_classes(p.semantic), s.semantic->classes);
  }
  const double miou = pipeline::semantic_eval(sem).metrics.at("mIoU");
  const double elapsed = seconds_since(t0);
  return {f1 >= kF1 && miou >= kMiou && elapsed < kBudget,
          "stage-1 F1 " + fmt(f1) + " (>= " + fmt(kF1) + "), stage-2 mIoU " + fmt(miou) + " (>= " + fmt(kMiou) +
              "), " + fmt(elapsed) + " s"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// 8: same seed, same numbers and same bytes.
Verdict determinism() {
  TrainConfig cfg;
  cfg.stage = 1;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.dims = tiny_dims();
  const auto samples = synthetic_samples(4, 32, 11, cfg);
  pipeline::TeacherNet a(cfg.dims, cfg.ablation, cfg.seed), b(cfg.dims, cfg.ablation, cfg.seed);
  const double la = pipeline::train_stage1(cfg, samples, a).epoch_loss.at(0);
  const double lb = pipeline::train_stage1(cfg, samples, b).epoch_loss.at(0);

  testing::TempDir d1("accept_a"), d2("accept_b");
  synth::SynthSpec spec;
  spec.seed = 8;
  synth::generate_dataset(d1.path(), 3, spec);
  synth::generate_dataset(d2.path(), 3, spec);
  std::size_t files = 0;
  bool same = true;
  for (const auto& e : fs::recursive_directory_iterator(d1.path())) {
    if (!e.is_regular_file()) continue;
    ++files;
    same = same && slurp(e.path()) == slurp(d2.path() / fs::relative(e.path(), d1.path()));
  }
  return {std::abs(la - lb) <= 1e-6 && same && files > 0,
          "epoch-0 loss diff " + fmt(std::abs(la - lb)) + ", " + std::to_string(files) + " files " +
              (same ? "identical" : "differ")};
}

// 7: merge block properties.
Verdict merge_properties() {
  using blocks::MergeBlock;
  std::mt19937_64 rng(707);
  int identity = 0, mean = 0, shift = 0, hull = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore<double> store(trial);
    MergeBlock<double> merge(store, "m", 3);
    randomized(store, rng, 1.0);
    const auto one = testing::random_tensor({1, 3, 4, 5}, rng);
    Tensor<double> views(Shape{7, 3, 4, 5});
    for (int v = 0; v < 7; ++v) views.array().segment(v * one.size(), one.size()) = one.array();
    identity += (merge.forward(constant(views)).fused->value.array() - one.array()).abs().maxCoeff() < 1e-12;

    const auto feat = testing::random_tensor({7, 3, 4, 4}, rng);
    const auto before = merge.forward(constant(feat)).fused->value;
    merge.proj.bias->value[0] += 3.7 * (trial + 1);
    const auto after = merge.forward(constant(feat)).fused->value;
    shift += (before.array() - after.array()).abs().maxCoeff() < 1e-6;

    bool inside = true;
    const Index per = 48;
    for (Index i = 0; i < per; ++i) {
      double lo = 1e300, hi = -1e300;
      for (int v = 0; v < 7; ++v) {
        lo = std::min(lo, feat[v * per + i]);
        hi = std::max(hi, feat[v * per + i]);
      }
      inside = inside && after[i] >= lo - 1e-12 && after[i] <= hi + 1e-12;
    }
    hull += inside;

    merge.proj.weight->value.array().setZero();
    merge.proj.bias->value.array().setZero();
    const auto avg = merge.forward(constant(feat)).fused->value;
    bool ok = true;
    for (Index i = 0; i < per; ++i) {
      double m = 0;
      for (int v = 0; v < 7; ++v) m += feat[v * per + i] / 7;
      ok = ok && std::abs(avg[i] - m) < 1e-12;
    }
    mean += ok;
  }
  return {identity == 20 && mean == 20 && shift == 20 && hull == 20,
          "identity " + std::to_string(identity) + "/20, mean " + std::to_string(mean) + "/20, shift " +
              std::to_string(shift) + "/20, hull " + std::to_string(hull) + "/20"};
}

// Parameter prefixes a row must leave untouched.
std::vector<std::string> frozen_prefixes(int stage, const models::Ablation& ab) {
  std::vector<std::string> out;
  if (stage == 1) {
    if (!ab.merge) out.insert(out.end(), {"teacher.merge_"});
    if (!ab.adaptation) out.insert(out.end(), {"teacher.adapt_"});
    if (!ab.refine) out.insert(out.end(), {"teacher.refine"});
    return out;
  }
  if (!ab.entropy_block) out.push_back("student.entropy");
  if (!ab.adaptation) out.push_back("student.adapt");
  // Without the stage-1 prompt the prompt encoder still sees a constant map;
  // that row is checked by invariance to the teacher map instead.
  if (!ab.loss_sem)
    out.insert(out.end(), {"student.vit", "student.merge", "student.adapt", "student.bypass", "student.sem_decoder"});
  if (!ab.loss_edge) out.insert(out.end(), {"student.edge_decoder", "student.prompt", "student.entropy"});
  return out;
}

template <typename Net>
std::map<std::string, Tensor<float>> snapshot(const Net& net) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, v] : net.params().entries()) out[name] = v->value;
  return out;
}

// 9: every table row builds, trains, and leaves its ablated parts alone.
Verdict ablation_rows() {
  int rows = 0, good = 0;
  std::string failed;
  TrainConfig base;
  base.dims = tiny_dims();
  base.epochs = 1;
  base.max_steps = 2;
  base.batch_size = 2;
  base.lr = 1e-3;
  const auto samples = synthetic_samples(4, 32, 13, base);
  std::mt19937_64 rng(909);
  pipeline::PromptMap prompts;
  for (const auto& s : samples) prompts[s.id] = random_prob(32, 32, rng);

  for (int stage : {1, 2})
    for (const auto& [name, ab] : table_rows(stage)) {
      ++rows;
      TrainConfig cfg = base;
      cfg.stage = stage;
      cfg.ablation = ab;
      bool ok = true;
      try {
        lint_config(cfg, false);
        const auto frozen = frozen_prefixes(stage, ab);
        const auto is_frozen = [&](const std::string& p) {
          for (const auto& f : frozen)
            if (starts_with(p, f)) return true;
          return false;
        };
        std::map<std::string, Tensor<float>> before;
        std::vector<std::pair<std::string, Tensor<float>>> after;
        std::unique_ptr<pipeline::StudentNet> student;
        if (stage == 1) {
          pipeline::TeacherNet net(cfg.dims, ab, cfg.seed);
          before = snapshot(net);
          pipeline::train_stage1(cfg, samples, net);
          for (const auto& [p, v] : net.params().entries()) after.emplace_back(p, v->value);
        } else {
          student = std::make_unique<pipeline::StudentNet>(cfg.dims, ab, cfg.seed);
          before = snapshot(*student);
          pipeline::train_stage2(cfg, samples, prompts, *student);
          for (const auto& [p, v] : student->params().entries()) after.emplace_back(p, v->value);
        }
        bool enabled_moved = false;
        for (const auto& [p, v] : after) {
          const bool changed = !(v.array() == before.at(p).array()).all();
          if (is_frozen(p) && changed) ok = false;
          if (!is_frozen(p) && changed) enabled_moved = true;
        }
        ok = ok && enabled_moved;
        if (stage == 2 && !ab.stage1_prompt) {
          const auto& g = samples[0].group;
          const auto a = models::student_forward(*student, g, synth::EdgeMask{random_prob(32, 32, rng)},
                                                 cfg.entropy_options());
          const auto b = models::student_forward(*student, g, synth::EdgeMask{random_prob(32, 32, rng)},
                                                 cfg.entropy_options());
          ok = ok && (a.edge.values.array() == b.edge.values.array()).all() &&
               (a.semantic.array() == b.semantic.array()).all();
        }
      } catch (const std::exception& e) {
        ok = false;
        failed += " [" + name + ": " + e.what() + "]";
      }
      if (ok) {
        ++good;
      } else if (failed.find(name) == std::string::npos) {
        failed += " [" + name + "]";
      }
    }
  return {rows > 0 && good == rows, std::to_string(good) + "/" + std::to_string(rows) + " rows" + failed};
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, entropy_fast_path}, {2, gradients},        {3, metric_identities}, {4, stage2_reduces}, {5, distance_transform},
      {6, overfit},           {7, merge_properties}, {8, determinism},       {9, ablation_rows}};
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
