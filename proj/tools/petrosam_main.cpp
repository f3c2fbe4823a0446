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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "petrosam/checkpoint.hpp"
#include "petrosam/config.hpp"
#include "petrosam/entropy.hpp"
#include "petrosam/error.hpp"
#include "petrosam/image_io.hpp"
#include "petrosam/pipeline.hpp"
#include "petrosam/synthdata.hpp"

namespace fs = std::filesystem;
using namespace petrosam;

namespace {

// Relative output paths land under $PETROSAM_OUT when it is set.
fs::path output_path(const fs::path& p) {
  const char* root = std::getenv("PETROSAM_OUT");
  if (!root || !*root || p.is_absolute()) return p;
  return fs::path(root) / p;
}

void print_report(const pipeline::EvalReport& r) {
  std::cout << r.task << " metrics over " << r.groups << " groups\n" << r.table;
}

// Flat `key = value` lines, or JSON when the path ends in .json.
void write_report(const fs::path& path, const pipeline::EvalReport& r) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write report " + path.string());
  if (path.extension() == ".json") {
    nlohmann::ordered_json j;
    j["task"] = r.task;
    j["groups"] = r.groups;
    j["metrics"] = r.metrics;
    out << j.dump(2) << "\n";
    return;
  }
  out << "task = " << r.task << "\ngroups = " << r.groups << "\n";
  for (const auto& [k, v] : r.metrics) out << k << " = " << v << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"petrosam: multi-angle thin-section grain-edge and lithology segmentation"};
  app.require_subcommand(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic polarized-view dataset");
  fs::path synth_out;
  int n_groups = 8;
  synth::SynthSpec spec;
  synth_cmd->add_option("--out", synth_out, "Dataset directory")->required();
  synth_cmd->add_option("--n-groups", n_groups, "Number of groups")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", spec.image_size, "Image side in pixels");
  synth_cmd->add_option("--seed", spec.seed, "Base seed");
  synth_cmd->add_option("--grains", spec.n_grains, "Grains per group");
  synth_cmd->add_option("--noise", spec.noise_sigma, "Gaussian noise sigma");

  // entropy
  auto* ent_cmd = app.add_subcommand("entropy", "Local color-entropy map of one RGB image");
  fs::path ent_in, ent_out, ent_vis;
  std::string ent_mode = "safe", ent_bound = "all";
  entropy::EntropyOptions ent_opts;
  ent_cmd->add_option("--in", ent_in, "Input PNG")->required()->check(CLI::ExistingFile);
  ent_cmd->add_option("--tau", ent_opts.tau, "Quantization bits kept per channel (1-7)");
  ent_cmd->add_option("--out", ent_out, "Output grid (.grid) or visualization (.png)")->required();
  ent_cmd->add_option("--vis", ent_vis, "Also write a PNG visualization");
  ent_cmd->add_option("--mode", ent_mode, "Color code: safe or paper")->check(CLI::IsMember({"safe", "paper"}));
  ent_cmd->add_option("--bound", ent_bound, "Sum bound: all or first7")->check(CLI::IsMember({"all", "first7"}));

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the stage-1 teacher or the stage-2 student");
  int stage = 1;
  fs::path config_path, data_root, prompts_dir, train_out, init_ckpt;
  bool free_form = false;
  std::vector<std::string> overrides;
  std::string init_from, init_to;
  train_cmd->add_option("--stage", stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train_cmd->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data_root, "Dataset directory")->required();
  train_cmd->add_option("--prompts", prompts_dir, "Teacher prompt store (stage 2)");
  train_cmd->add_option("--out", train_out, "Run directory (default runs/stage<N>)");
  train_cmd->add_flag("--free-form", free_form, "Allow ablation combinations outside the tables");
  train_cmd->add_option("--set", overrides, "Override a config key: key=value");
  train_cmd->add_option("--init", init_ckpt, "Initialize matching parameters from a checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--init-from", init_from, "Name prefix in the --init archive");
  train_cmd->add_option("--init-to", init_to, "Name prefix in this model");

  // prompts
  auto* prompts_cmd = app.add_subcommand("prompts", "Precompute frozen-teacher prompts");
  fs::path p_ckpt, p_data, p_out;
  prompts_cmd->add_option("--ckpt", p_ckpt, "Stage-1 checkpoint")->required();
  prompts_cmd->add_option("--data", p_data, "Dataset directory")->required();
  prompts_cmd->add_option("--out", p_out, "Prompt store directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  pipeline::EvalRequest ereq;
  std::string split = "test";
  fs::path report_path;
  eval_cmd->add_option("--ckpt", ereq.ckpt, "Checkpoint");
  eval_cmd->add_option("--data", ereq.data_root, "Dataset directory")->required();
  eval_cmd->add_option("--split", split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  eval_cmd->add_option("--task", ereq.task, "edge or semantic")->check(CLI::IsMember({"edge", "semantic"}));
  eval_cmd->add_option("--prompts", ereq.prompts_dir, "Teacher prompt store (student edge metrics)");
  eval_cmd->add_option("--teacher", ereq.teacher_ckpt, "Teacher checkpoint (student edge metrics)");
  eval_cmd->add_flag("--oracle", ereq.oracle, "Score the labels against themselves");
  eval_cmd->add_option("--train-fraction", ereq.train_fraction, "Split fraction in oracle mode");
  eval_cmd->add_option("--split-seed", ereq.split_seed, "Split seed in oracle mode");
  eval_cmd->add_option("--report", report_path, "Write the report (key = value text, or JSON for .json)");

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "Write edge and lithology predictions for one group");
  pipeline::PredictRequest preq;
  pred_cmd->add_option("--ckpt", preq.ckpt, "Stage-2 checkpoint")->required();
  pred_cmd->add_option("--group", preq.group_dir, "Group directory")->required();
  pred_cmd->add_option("--out", preq.out_dir, "Output directory")->required();
  pred_cmd->add_option("--prompts", preq.prompts_dir, "Teacher prompt store");
  pred_cmd->add_option("--teacher", preq.teacher_ckpt, "Teacher checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth_cmd) {
      const auto root = output_path(synth_out);
      const auto ids = synth::generate_dataset(root, n_groups, spec);
      std::cout << "wrote " << ids.size() << " groups to " << root.string() << "\n";
    } else if (*ent_cmd) {
      ent_opts.mode = ent_mode == "paper" ? entropy::CodeMode::kPaper : entropy::CodeMode::kSafe;
      ent_opts.bound = ent_bound == "first7" ? entropy::SumBound::kFirstSeven : entropy::SumBound::kAllColors;
      const auto map = entropy::entropy_map(io::read_png(ent_in, 3), ent_opts);
      const auto out = output_path(ent_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      if (out.extension() == ".png") io::write_png(out, io::visualize(map.values));
      else io::write_grid(out, map.values);
      if (!ent_vis.empty()) io::write_png(output_path(ent_vis), io::visualize(map.values));
      std::cout << "entropy range [" << map.values.minCoeff() << ", " << map.values.maxCoeff() << "]\n";
    } else if (*train_cmd) {
      TrainConfig cfg = load_config(config_path);
      cfg.stage = stage;
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      cfg.validate();
      lint_config(cfg, free_form);
      std::cout << "ablation row: " << (free_form ? "free-form" : ablation_row(cfg)) << "\n";

      pipeline::TrainOptions opts;
      opts.out_dir = output_path(train_out.empty() ? fs::path("runs") / ("stage" + std::to_string(stage)) : train_out);
      const auto ids = pipeline::split_ids(data_root, pipeline::Split::kTrain, cfg.train_fraction, cfg.split_seed);
      pipeline::LoadOptions load;
      load.semantic = stage == 2 && cfg.ablation.loss_sem;
      load.entropy = stage == 2 && cfg.ablation.entropy_block;
      load.entropy_opts = cfg.entropy_options();
      const auto samples = pipeline::load_samples(data_root, ids, load);
      opts.on_step = [](const pipeline::StepRecord& r) {
        if (r.step % 10 == 0) std::cout << "step " << r.step << " epoch " << r.epoch << " loss " << r.loss << "\n";
      };

      auto apply_init = [&](auto& params) {
        if (init_ckpt.empty()) return;
        const auto report = load_matching(params, read_checkpoint(init_ckpt), init_from, init_to);
        std::cout << "initialized " << report.loaded.size() << " arrays, " << report.skipped.size() << " kept\n";
      };
      pipeline::TrainResult result;
      if (stage == 1) {
        pipeline::TeacherNet model(cfg.dims, cfg.ablation, cfg.seed);
        apply_init(model.params());
        result = pipeline::train_stage1(cfg, samples, model, opts);
      } else {
        pipeline::PromptMap prompts;
        if (cfg.ablation.stage1_prompt) {
          if (prompts_dir.empty()) throw ValidationError("stage 2 needs --prompts (run `petrosam prompts` first)");
          prompts = pipeline::read_prompts(prompts_dir, ids);
        }
        pipeline::StudentNet model(cfg.dims, cfg.ablation, cfg.seed);
        apply_init(model.params());
        result = pipeline::train_stage2(cfg, samples, prompts, model, opts);
      }
      std::cout << "trained " << result.steps.size() << " steps; final loss " << result.steps.back().loss
                << "\ncheckpoint " << result.final_checkpoint.string() << "\n";
    } else if (*prompts_cmd) {
      const auto n = pipeline::precompute_teacher_prompts(p_ckpt, p_data, output_path(p_out));
      std::cout << "wrote " << n << " teacher maps to " << output_path(p_out).string() << "\n";
    } else if (*eval_cmd) {
      if (!ereq.oracle && ereq.ckpt.empty()) throw ValidationError("eval needs --ckpt unless --oracle is given");
      ereq.split = pipeline::parse_split(split);
      const auto report = pipeline::evaluate(ereq);
      print_report(report);
      if (!report_path.empty()) write_report(output_path(report_path), report);
    } else if (*pred_cmd) {
      preq.out_dir = output_path(preq.out_dir);
      pipeline::predict(preq);
      std::cout << "wrote predictions to " << preq.out_dir.string() << "\n";
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
