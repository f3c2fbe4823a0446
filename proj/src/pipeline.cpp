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

#include "petrosam/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "petrosam/error.hpp"
#include "petrosam/image_io.hpp"
#include "petrosam/losses.hpp"
#include "petrosam/optim.hpp"

namespace petrosam::pipeline {

namespace {

// Scalar node whose gradient with respect to each listed tensor is given.
// Bridges the grid-based loss functions into the autograd graph.
Var<float> attach_loss(double value, std::vector<std::pair<Var<float>, Tensor<float>>> terms) {
  std::vector<Var<float>> parents;
  std::vector<Tensor<float>> grads;
  for (auto& [v, g] : terms) {
    if (!v) continue;
    parents.push_back(v);
    grads.push_back(std::move(g));
  }
  return make_result<float>(Tensor<float>(Shape{1}, static_cast<float>(value)), std::move(parents),
                            [grads = std::move(grads)](Node<float>& self) {
                              const float up = self.grad[0];
                              for (std::size_t i = 0; i < grads.size(); ++i)
                                self.parents[i]->grad_buffer().array() += up * grads[i].array();
                            });
}

template <typename GridT>
void put_map(Tensor<float>& t, Index n, const GridT& g, double scale) {
  const Index hw = g.size();
  t.array().segment(n * hw, hw) =
      (Eigen::Map<const Eigen::ArrayXd>(g.data(), hw) * scale).template cast<float>();
}

std::vector<const synth::PolarizedGroup*> groups_of(const std::vector<Sample>& samples,
                                                    const std::vector<std::size_t>& idx) {
  std::vector<const synth::PolarizedGroup*> out;
  for (auto i : idx) out.push_back(&samples[i].group);
  return out;
}

using StepFn = std::function<std::pair<Var<float>, StepRecord>(const std::vector<std::size_t>&, int epoch)>;

// Epoch/batch loop shared by both stages: per-epoch cosine learning rate,
// seeded shuffling, logging, checkpointing and the non-finite-loss abort.
template <typename Model>
TrainResult run_training(const TrainConfig& cfg, std::size_t n, Model& model, const std::string& model_name,
                         const TrainOptions& opts, const StepFn& step_fn) {
  TrainResult result;
  Adam<float> adam(model.params(), cfg.adam());
  std::mt19937_64 rng(synth::derive_seed(cfg.seed, 0xba7c4));
  std::ofstream log;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    log.open(opts.out_dir / "train.log");
    if (!log) throw RuntimeFailure("cannot write " + (opts.out_dir / "train.log").string());
    log << "# stage=" << cfg.stage << " model=" << model_name << " config_hash=" << cfg.hash()
        << " params=" << model.params().count() << "\n";
  }
  auto save = [&](const fs::path& path, int epoch) {
    save_checkpoint(path, make_meta(cfg, model_name, epoch), model.params());
    return path;
  };

  const double period = cfg.restart_period > 0 ? cfg.restart_period : cfg.epochs;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  int step = 0;
  bool capped = false;
  for (int epoch = 0; epoch < cfg.epochs && !capped; ++epoch) {
    const double lr = cosine_warm_restart_lr(epoch, cfg.lr, cfg.min_lr, period, cfg.restart_mult);
    adam.set_lr(lr);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double sum = 0;
    int count = 0;
    for (std::size_t b = 0; b < n; b += batch) {
      std::vector<std::size_t> idx(order.begin() + b, order.begin() + std::min(n, b + batch));
      auto [loss, rec] = step_fn(idx, epoch);
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = lr;
      if (!std::isfinite(rec.loss)) {
        const std::string msg = "non-finite loss at step " + std::to_string(step) + " (epoch " +
                                std::to_string(epoch) + ")";
        if (log) log << "abort: " << msg << "\n";
        throw RuntimeFailure(msg);
      }
      backward(loss);
      adam.step();
      model.params().zero_grad();

      if (log) log << format_step(rec, cfg.stage) << "\n";
      if (opts.on_step) opts.on_step(rec);
      result.steps.push_back(rec);
      sum += rec.loss;
      ++count;
      ++step;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        capped = true;
        break;
      }
    }
    result.epoch_loss.push_back(sum / count);
    if (!opts.out_dir.empty() && (epoch + 1) % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch + 1);
      save(opts.out_dir / name, epoch + 1);
    }
  }
  if (!opts.out_dir.empty())
    result.final_checkpoint = save(opts.out_dir / "final.ckpt", static_cast<int>(result.epoch_loss.size()));
  return result;
}

void check_stage(const TrainConfig& cfg, int stage) {
  cfg.validate();
  if (cfg.stage != stage)
    throw ValidationError("config stage " + std::to_string(cfg.stage) + " passed to stage-" +
                          std::to_string(stage) + " training");
}

}  // namespace

std::vector<Sample> load_samples(const fs::path& root, const std::vector<std::string>& ids, const LoadOptions& opts) {
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto loaded = synth::read_group(root, id, !opts.semantic);
    Sample s;
    s.id = id;
    s.group = std::move(loaded.group);
    s.edge = std::move(loaded.edge);
    s.semantic = std::move(loaded.semantic);
    if ((s.edge.values > 0.5).any()) s.distance = losses::distance_map(s.edge.values);
    if (opts.entropy) s.entropy = entropy::group_entropy(s.group, opts.entropy_opts);
    out.push_back(std::move(s));
  }
  return out;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  if (name == "all") return Split::kAll;
  throw ValidationError("unknown split '" + name + "' (train, test or all)");
}

std::vector<std::string> split_ids(const fs::path& root, Split split, double train_fraction,
                                   std::uint64_t split_seed) {
  auto ids = synth::list_groups(root);
  if (ids.empty()) throw ValidationError("no groups found under " + root.string());
  if (split == Split::kAll) return ids;
  auto [train, test] = synth::split_dataset(ids, train_fraction, split_seed);
  return split == Split::kTrain ? train : test;
}

std::string format_step(const StepRecord& r, int stage) {
  char buf[256];
  if (stage == 1)
    std::snprintf(buf, sizeof buf, "step=%d epoch=%d loss=%.9g bce=%.9g distance=%.9g lr=%.6g lambda_t=%.6g", r.step,
                  r.epoch, r.loss, r.bce, r.distance, r.lr, r.lambda_t);
  else
    std::snprintf(buf, sizeof buf,
                  "step=%d epoch=%d loss=%.9g edge=%.9g sem=%.9g ce=%.9g dice=%.9g lr=%.6g lambda_t=%.6g", r.step,
                  r.epoch, r.loss, r.edge, r.sem, r.ce, r.dice, r.lr, r.lambda_t);
  return buf;
}

TrainResult train_stage1(const TrainConfig& cfg, const std::vector<Sample>& train, TeacherNet& model,
                         const TrainOptions& opts) {
  check_stage(cfg, 1);
  if (train.empty()) throw ValidationError("stage 1: empty training set");

  auto step_fn = [&](const std::vector<std::size_t>& idx, int) {
    const auto views = models::stack_views<float>(groups_of(train, idx));
    auto prob = model.forward(views);
    const double inv_n = 1.0 / static_cast<double>(idx.size());
    Tensor<float> grad(prob->shape());
    StepRecord rec;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Sample& s = train[idx[i]];
      const Grid<double> m = models::slice_map(prob->value, static_cast<Index>(i));
      auto bce = losses::edge_bce(m, s.edge.values, cfg.loss);
      Grid<double> g = bce.grad;
      rec.bce += inv_n * bce.value;
      if (s.distance.size() > 0) {
        auto dist = losses::edge_distance_loss_with_map(m, s.distance, cfg.loss);
        g += dist.grad;
        rec.distance += inv_n * dist.value;
      }
      put_map(grad, static_cast<Index>(i), g, inv_n);
    }
    rec.loss = rec.edge = rec.bce + rec.distance;
    return std::make_pair(attach_loss(rec.loss, {{prob, std::move(grad)}}), rec);
  };
  return run_training(cfg, train.size(), model, "teacher", opts, step_fn);
}

TrainResult train_stage2(const TrainConfig& cfg, const std::vector<Sample>& train, const PromptMap& prompts,
                         StudentNet& model, const TrainOptions& opts) {
  check_stage(cfg, 2);
  const auto& ab = cfg.ablation;
  if (train.empty()) throw ValidationError("stage 2: empty training set");
  if (!ab.loss_edge && !ab.loss_sem) throw ValidationError("stage 2: both loss terms are disabled");

  // Without the stage-1 teacher there is neither a prompt nor a teacher term.
  const bool use_teacher = ab.stage1_prompt;
  std::vector<const Grid<double>*> teacher(train.size(), nullptr);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const Sample& s = train[i];
    if (ab.loss_sem && !s.semantic) throw ValidationError("stage 2: group " + s.id + " has no semantic label");
    if (ab.entropy_block && s.entropy.empty())
      throw ValidationError("stage 2: group " + s.id + " was loaded without entropy maps");
    if (!use_teacher) continue;
    auto it = prompts.find(s.id);
    if (it == prompts.end()) throw ValidationError("prompt store does not cover group " + s.id);
    teacher[i] = &it->second;
  }
  const Index h = train[0].group.height(), w = train[0].group.width();
  const Grid<double> neutral = Grid<double>::Constant(h, w, 0.5);

  auto step_fn = [&](const std::vector<std::size_t>& idx, int epoch) {
    const Index n = static_cast<Index>(idx.size());
    const double inv_n = 1.0 / static_cast<double>(n);
    const double lambda = use_teacher ? losses::lambda_t(epoch, cfg.epochs, cfg.loss.lambda_t0) : 0.0;

    const auto views = models::stack_views<float>(groups_of(train, idx));
    Tensor<float> ent, tp;
    std::vector<const Grid<double>*> maps;
    if (ab.entropy_block) {
      std::vector<const Tensor<double>*> e;
      for (auto i : idx) e.push_back(&train[i].entropy);
      ent = models::stack_entropy<float>(e);
    }
    for (auto i : idx) maps.push_back(use_teacher ? teacher[i] : &neutral);
    tp = models::stack_maps<float>(maps);
    auto out = model.forward(views, ent, tp, ab.loss_edge, ab.loss_sem);

    StepRecord rec;
    rec.lambda_t = lambda;
    Tensor<float> edge_grad, sem_grad;
    if (ab.loss_edge) {
      edge_grad = Tensor<float>(out.edge_prob->shape());
      for (Index i = 0; i < n; ++i) {
        const Sample& s = train[idx[static_cast<std::size_t>(i)]];
        const Grid<double> m = models::slice_map(out.edge_prob->value, i);
        auto l = losses::stage2_edge_loss(m, s.edge.values, *maps[static_cast<std::size_t>(i)], lambda, cfg.loss);
        rec.edge += inv_n * l.value;
        put_map(edge_grad, i, l.grad, inv_n * cfg.loss.lambda_e);
      }
    }
    if (ab.loss_sem) {
      const auto& y = out.sem_prob->value;
      sem_grad = Tensor<float>(y.shape());
      const Index per = kClassCount * h * w;
      for (Index i = 0; i < n; ++i) {
        const Sample& s = train[idx[static_cast<std::size_t>(i)]];
        const Tensor<double> ys(Shape{kClassCount, h, w}, y.array().segment(i * per, per).template cast<double>());
        auto ce = losses::semantic_ce(ys, s.semantic->classes, cfg.loss);
        auto dice = losses::dice_loss(ys, s.semantic->classes, cfg.loss);
        rec.ce += inv_n * ce.value;
        rec.dice += inv_n * dice.value;
        sem_grad.array().segment(i * per, per) = ((ce.grad.array() + dice.grad.array()) * inv_n).template cast<float>();
      }
      rec.sem = rec.ce + rec.dice;
    }
    rec.loss = losses::total_loss(rec.edge, rec.sem, cfg.loss.lambda_e);
    auto loss = attach_loss(rec.loss, {{out.edge_prob, std::move(edge_grad)}, {out.sem_prob, std::move(sem_grad)}});
    return std::make_pair(loss, rec);
  };
  return run_training(cfg, train.size(), model, "student", opts, step_fn);
}

// ---------------------------------------------------------------------------

PromptMap teacher_prompts(const TeacherNet& model, const std::vector<Sample>& samples) {
  PromptMap out;
  for (const auto& s : samples) out[s.id] = models::teacher_forward(model, s.group).values;
  return out;
}

void write_prompts(const fs::path& dir, const PromptMap& prompts) {
  fs::create_directories(dir);
  for (const auto& [id, grid] : prompts) io::write_grid(dir / (id + ".grid"), grid);
}

PromptMap read_prompts(const fs::path& dir, const std::vector<std::string>& ids) {
  PromptMap out;
  for (const auto& id : ids) {
    const auto path = dir / (id + ".grid");
    if (!fs::exists(path)) throw ValidationError("prompt store " + dir.string() + " does not cover group " + id);
    out[id] = io::read_grid(path);
  }
  return out;
}

std::size_t precompute_teacher_prompts(const fs::path& ckpt_path, const fs::path& data_root, const fs::path& out_dir) {
  const auto ckpt = read_checkpoint(ckpt_path);
  const auto model = load_teacher(ckpt);
  fs::create_directories(out_dir);
  const auto ids = synth::list_groups(data_root);
  for (const auto& id : ids) {
    const auto group = synth::read_views(data_root, id);
    io::write_grid(out_dir / (id + ".grid"), models::teacher_forward(*model, group).values);
  }
  return ids.size();
}

CheckpointMeta make_meta(const TrainConfig& cfg, const std::string& model, int epoch) {
  CheckpointMeta meta;
  meta.model = model;
  meta.stage = cfg.stage;
  meta.epoch = epoch;
  meta.seed = cfg.seed;
  meta.config_hash = cfg.hash();
  meta.config = cfg.to_pairs();
  return meta;
}

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) {
  TrainConfig cfg;
  for (const auto& [k, v] : ckpt.meta.config) cfg.set(k, v);
  if (cfg.hash() != ckpt.meta.config_hash) throw ValidationError("checkpoint config does not match its recorded hash");
  return cfg;
}

std::unique_ptr<TeacherNet> load_teacher(const Checkpoint& ckpt) {
  if (ckpt.meta.model != "teacher")
    throw ValidationError("expected a stage-1 teacher checkpoint, got model '" + ckpt.meta.model + "'");
  const auto cfg = config_from_checkpoint(ckpt);
  auto model = std::make_unique<TeacherNet>(cfg.dims, cfg.ablation, cfg.seed);
  load_parameters(model->params(), ckpt);
  return model;
}

std::unique_ptr<StudentNet> load_student(const Checkpoint& ckpt) {
  if (ckpt.meta.model != "student")
    throw ValidationError("expected a stage-2 student checkpoint, got model '" + ckpt.meta.model + "'");
  const auto cfg = config_from_checkpoint(ckpt);
  auto model = std::make_unique<StudentNet>(cfg.dims, cfg.ablation, cfg.seed);
  load_parameters(model->params(), ckpt);
  return model;
}

// ---------------------------------------------------------------------------

EvalReport edge_eval(const std::vector<std::pair<Grid<double>, Grid<double>>>& prob_and_label, double threshold) {
  EvalReport r;
  r.task = "edge";
  for (const auto& [prob, label] : prob_and_label)
    r.edge_counts += metrics::count_edges(metrics::binarize(prob, threshold), label);
  const auto m = metrics::edge_metrics(r.edge_counts);
  r.metrics = metrics::edge_report(m);
  r.table = metrics::format_edge_table(m);
  r.groups = prob_and_label.size();
  return r;
}

EvalReport semantic_eval(const std::vector<std::pair<LabelGrid, LabelGrid>>& pred_and_label) {
  EvalReport r;
  r.task = "semantic";
  for (const auto& [pred, label] : pred_and_label) r.semantic_counts.add(pred, label);
  const auto m = metrics::semantic_metrics(r.semantic_counts);
  r.metrics = metrics::semantic_report(m);
  r.table = metrics::format_semantic_table(m);
  r.groups = pred_and_label.size();
  return r;
}

EvalReport evaluate(const EvalRequest& req) {
  if (req.oracle) {
    const std::string task = req.task.empty() ? "edge" : req.task;
    if (task != "edge" && task != "semantic") throw ValidationError("unknown task '" + task + "'");
    const auto ids = split_ids(req.data_root, req.split, req.train_fraction, req.split_seed);
    LoadOptions load;
    load.semantic = task == "semantic";
    const auto samples = load_samples(req.data_root, ids, load);
    if (task == "edge") {
      std::vector<std::pair<Grid<double>, Grid<double>>> pairs;
      for (const auto& s : samples) pairs.emplace_back(s.edge.values, s.edge.values);
      return edge_eval(pairs, 0.5);
    }
    std::vector<std::pair<LabelGrid, LabelGrid>> pairs;
    for (const auto& s : samples) pairs.emplace_back(s.semantic->classes, s.semantic->classes);
    return semantic_eval(pairs);
  }

  const auto ckpt = read_checkpoint(req.ckpt);
  const auto cfg = config_from_checkpoint(ckpt);
  const bool is_teacher = ckpt.meta.model == "teacher";
  const std::string task = req.task.empty() ? (is_teacher ? "edge" : "semantic") : req.task;
  if (task != "edge" && task != "semantic") throw ValidationError("unknown task '" + task + "'");
  if (is_teacher && task == "semantic")
    throw ValidationError("stage mismatch: a stage-1 checkpoint has no semantic output");

  const auto ids = split_ids(req.data_root, req.split, cfg.train_fraction, cfg.split_seed);
  LoadOptions load;
  load.semantic = task == "semantic";
  const auto samples = load_samples(req.data_root, ids, load);

  if (is_teacher) {
    const auto model = load_teacher(ckpt);
    std::vector<std::pair<Grid<double>, Grid<double>>> pairs;
    for (const auto& s : samples) pairs.emplace_back(models::teacher_forward(*model, s.group).values, s.edge.values);
    return edge_eval(pairs, cfg.threshold);
  }

  const auto model = load_student(ckpt);
  // The semantic branch never reads the prompt, so teacher maps are needed
  // only for edge metrics.
  const bool need_prompts = task == "edge" && cfg.ablation.stage1_prompt;
  PromptMap prompts;
  if (need_prompts) {
    if (!req.prompts_dir.empty()) {
      prompts = read_prompts(req.prompts_dir, ids);
    } else if (!req.teacher_ckpt.empty()) {
      prompts = teacher_prompts(*load_teacher(read_checkpoint(req.teacher_ckpt)), samples);
    } else {
      throw ValidationError("student evaluation needs teacher maps: pass a prompt store or a teacher checkpoint");
    }
  }
  const synth::EdgeMask neutral{Grid<double>::Constant(cfg.dims.image_size, cfg.dims.image_size, 0.5),
                                synth::EdgeKind::kProbability};
  std::vector<std::pair<Grid<double>, Grid<double>>> edge_pairs;
  std::vector<std::pair<LabelGrid, LabelGrid>> sem_pairs;
  for (const auto& s : samples) {
    const synth::EdgeMask teacher =
        need_prompts ? synth::EdgeMask{prompts.at(s.id), synth::EdgeKind::kProbability} : neutral;
    auto pred = models::student_forward(*model, s.group, teacher, cfg.entropy_options());
    if (task == "edge") edge_pairs.emplace_back(pred.edge.values, s.edge.values);
    else sem_pairs.emplace_back(models::argmax_classes(pred.semantic), s.semantic->classes);
  }
  return task == "edge" ? edge_eval(edge_pairs, cfg.threshold) : semantic_eval(sem_pairs);
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<std::array<int, 3>, kClassCount> kPalette = {{
    {128, 128, 128},  // background
    {66, 135, 245},   // feldspar
    {240, 200, 60},   // debris
    {60, 200, 120},   // quartz
}};

io::Image8 gray_image(const Grid<double>& values) {
  io::Image8 img{static_cast<int>(values.rows()), static_cast<int>(values.cols()), 1, {}};
  img.pixels.resize(static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) img.pixels[static_cast<std::size_t>(i)] = io::to_byte(values.data()[i]);
  return img;
}

}  // namespace

void predict(const PredictRequest& req) {
  const auto ckpt = read_checkpoint(req.ckpt);
  const auto cfg = config_from_checkpoint(ckpt);
  const auto model = load_student(ckpt);

  fs::path dir = req.group_dir.lexically_normal();
  if (dir.filename().empty()) dir = dir.parent_path();
  const std::string id = dir.filename().string();
  const auto group = synth::read_views(dir.parent_path(), id);
  models::check_input_size(group.height(), group.width(), cfg.dims);

  synth::EdgeMask teacher{Grid<double>::Constant(group.height(), group.width(), 0.5), synth::EdgeKind::kProbability};
  if (cfg.ablation.stage1_prompt) {
    if (!req.prompts_dir.empty()) teacher.values = read_prompts(req.prompts_dir, {id}).at(id);
    else if (!req.teacher_ckpt.empty()) teacher = models::teacher_forward(*load_teacher(read_checkpoint(req.teacher_ckpt)), group);
    else throw ValidationError("predict needs teacher maps: pass a prompt store or a teacher checkpoint");
  }
  const auto pred = models::student_forward(*model, group, teacher, cfg.entropy_options());
  const Grid<double> bin = metrics::binarize(pred.edge.values, cfg.threshold);
  const LabelGrid classes = models::argmax_classes(pred.semantic);

  fs::create_directories(req.out_dir);
  io::write_png(req.out_dir / "edge_pred.png", gray_image(pred.edge.values));
  io::write_png(req.out_dir / "edge_bin.png", gray_image(bin));

  const int h = static_cast<int>(group.height()), w = static_cast<int>(group.width());
  io::Image8 sem{h, w, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w)};
  io::Image8 overlay{h, w, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int cls = classes(y, x);
      sem.at(y, x, 0) = static_cast<std::uint8_t>(cls * 60);
      for (int c = 0; c < 3; ++c) {
        const double base = group.at(0, c, y, x) * 255.0;
        double v = 0.65 * base + 0.35 * kPalette[static_cast<std::size_t>(cls)][static_cast<std::size_t>(c)];
        if (bin(y, x) > 0.5) v = c == 0 ? 255 : 0;
        overlay.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  io::write_png(req.out_dir / "semantic_pred.png", sem);
  io::write_png(req.out_dir / "overlay.png", overlay);
}

}  // namespace petrosam::pipeline
