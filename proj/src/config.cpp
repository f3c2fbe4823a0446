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

#include "petrosam/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "petrosam/error.hpp"

namespace petrosam {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ValidationError("config: " + key + " = '" + value + "' is not " + expected);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "off" || value == "0" || value == "no") return false;
  bad_value(key, value, "a boolean");
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// One binding per config key: how to read it from text and write it back.
struct Field {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define INT_FIELD(name, expr)                                                                            \
  {name, Field{[](TrainConfig& c, const std::string& k, const std::string& v) {                          \
                 c.expr = parse_number<int>(k, v);                                                       \
               },                                                                                        \
               [](const TrainConfig& c) { return std::to_string(c.expr); }}}
#define U64_FIELD(name, expr)                                                                            \
  {name, Field{[](TrainConfig& c, const std::string& k, const std::string& v) {                          \
                 c.expr = parse_number<std::uint64_t>(k, v);                                             \
               },                                                                                        \
               [](const TrainConfig& c) { return std::to_string(c.expr); }}}
#define DOUBLE_FIELD(name, expr)                                                                         \
  {name, Field{[](TrainConfig& c, const std::string& k, const std::string& v) {                          \
                 c.expr = parse_number<double>(k, v);                                                    \
               },                                                                                        \
               [](const TrainConfig& c) { return fmt_double(c.expr); }}}
#define BOOL_FIELD(name, expr)                                                                           \
  {name, Field{[](TrainConfig& c, const std::string& k, const std::string& v) {                          \
                 c.expr = parse_bool(k, v);                                                              \
               },                                                                                        \
               [](const TrainConfig& c) { return std::string(c.expr ? "true" : "false"); }}}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      INT_FIELD("stage", stage),
      INT_FIELD("epochs", epochs),
      INT_FIELD("batch_size", batch_size),
      INT_FIELD("max_steps", max_steps),
      DOUBLE_FIELD("lr", lr),
      DOUBLE_FIELD("min_lr", min_lr),
      DOUBLE_FIELD("restart_period", restart_period),
      DOUBLE_FIELD("restart_mult", restart_mult),
      DOUBLE_FIELD("beta1", beta1),
      DOUBLE_FIELD("beta2", beta2),
      DOUBLE_FIELD("adam_eps", adam_eps),
      DOUBLE_FIELD("weight_decay", weight_decay),
      DOUBLE_FIELD("lambda_e", loss.lambda_e),
      DOUBLE_FIELD("lambda_t0", loss.lambda_t0),
      DOUBLE_FIELD("eps_distance", loss.eps_distance),
      DOUBLE_FIELD("eps_dice", loss.eps_dice),
      DOUBLE_FIELD("prob_clamp", loss.prob_clamp),
      BOOL_FIELD("binarize_teacher", loss.binarize_teacher),
      INT_FIELD("tau", tau),
      {"entropy_mode",
       Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
               if (v == "safe") c.entropy_mode = entropy::CodeMode::kSafe;
               else if (v == "paper") c.entropy_mode = entropy::CodeMode::kPaper;
               else bad_value(k, v, "safe or paper");
             },
             [](const TrainConfig& c) {
               return std::string(c.entropy_mode == entropy::CodeMode::kSafe ? "safe" : "paper");
             }}},
      {"entropy_bound",
       Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
               if (v == "all") c.entropy_bound = entropy::SumBound::kAllColors;
               else if (v == "first7") c.entropy_bound = entropy::SumBound::kFirstSeven;
               else bad_value(k, v, "all or first7");
             },
             [](const TrainConfig& c) {
               return std::string(c.entropy_bound == entropy::SumBound::kAllColors ? "all" : "first7");
             }}},
      U64_FIELD("seed", seed),
      U64_FIELD("split_seed", split_seed),
      DOUBLE_FIELD("train_fraction", train_fraction),
      INT_FIELD("checkpoint_every", checkpoint_every),
      DOUBLE_FIELD("threshold", threshold),
      INT_FIELD("image_size", dims.image_size),
      INT_FIELD("patch_size", dims.patch_size),
      INT_FIELD("embed_dim", dims.embed_dim),
      INT_FIELD("depth", dims.depth),
      INT_FIELD("heads", dims.heads),
      INT_FIELD("mlp_ratio", dims.mlp_ratio),
      {"edge_channels",
       Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
               std::stringstream ss(v);
               std::string item;
               std::size_t i = 0;
               while (std::getline(ss, item, ',')) {
                 if (i >= c.dims.edge_channels.size()) bad_value(k, v, "five comma-separated widths");
                 c.dims.edge_channels[i++] = parse_number<int>(k, trim(item));
               }
               if (i != c.dims.edge_channels.size()) bad_value(k, v, "five comma-separated widths");
             },
             [](const TrainConfig& c) {
               std::string out;
               for (std::size_t i = 0; i < c.dims.edge_channels.size(); ++i)
                 out += (i ? "," : "") + std::to_string(c.dims.edge_channels[i]);
               return out;
             }}},
      INT_FIELD("adapt_hidden", dims.adapt_hidden),
      INT_FIELD("adapt_heads", dims.adapt_heads),
      INT_FIELD("decoder_hidden", dims.decoder_hidden),
      INT_FIELD("decoder_out", dims.decoder_out),
      INT_FIELD("entropy_hidden", dims.entropy_hidden),
      INT_FIELD("prompt_hidden", dims.prompt_hidden),
      BOOL_FIELD("merge", ablation.merge),
      BOOL_FIELD("adaptation", ablation.adaptation),
      BOOL_FIELD("refine", ablation.refine),
      BOOL_FIELD("entropy_block", ablation.entropy_block),
      BOOL_FIELD("stage1_prompt", ablation.stage1_prompt),
      BOOL_FIELD("loss_sem", ablation.loss_sem),
      BOOL_FIELD("loss_edge", ablation.loss_edge),
      BOOL_FIELD("entropy_residual", ablation.entropy_residual),
  };
  return table;
}

#undef INT_FIELD
#undef U64_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

void parse_into(TrainConfig& cfg, const std::string& text, const std::filesystem::path& base_dir, int depth) {
  if (depth > 8) throw ValidationError("config: base chain too deep");
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "base") {
      const auto path = base_dir / value;
      std::ifstream f(path);
      if (!f) throw ValidationError("config: cannot read base file " + path.string());
      std::stringstream ss;
      ss << f.rdbuf();
      parse_into(cfg, ss.str(), path.parent_path(), depth + 1);
      continue;
    }
    cfg.set(key, value);
  }
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields())
    if (name == key) return field.set(*this, key, value);
  throw ValidationError("config: unknown key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_pairs() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, field] : fields()) out.emplace_back(name, field.get(*this));
  return out;
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_pairs()) out += k + " = " + v + "\n";
  return out;
}

std::string TrainConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

entropy::EntropyOptions TrainConfig::entropy_options() const {
  entropy::EntropyOptions o;
  o.tau = tau;
  o.mode = entropy_mode;
  o.bound = entropy_bound;
  return o;
}

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ValidationError("config: stage must be 1 or 2");
  if (epochs <= 0) throw ValidationError("config: epochs must be positive");
  if (batch_size <= 0) throw ValidationError("config: batch_size must be positive");
  if (max_steps < 0) throw ValidationError("config: max_steps must be >= 0");
  if (!(lr > 0)) throw ValidationError("config: lr must be positive");
  if (!(min_lr >= 0 && min_lr <= lr)) throw ValidationError("config: min_lr must lie in [0, lr]");
  if (restart_period < 0) throw ValidationError("config: restart_period must be >= 0");
  if (restart_mult < 1) throw ValidationError("config: restart_mult must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ValidationError("config: Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ValidationError("config: adam_eps must be positive");
  if (weight_decay < 0) throw ValidationError("config: weight_decay must be >= 0");
  if (!(train_fraction > 0 && train_fraction < 1)) throw ValidationError("config: train_fraction must lie in (0, 1)");
  if (checkpoint_every <= 0) throw ValidationError("config: checkpoint_every must be positive");
  if (!(threshold > 0 && threshold < 1)) throw ValidationError("config: threshold must lie in (0, 1)");
  loss.validate();
  entropy_options().validate();
  dims.validate();
}

TrainConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  TrainConfig cfg;
  parse_into(cfg, text, base_dir, 0);
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::vector<std::pair<std::string, models::Ablation>> table_rows(int stage) {
  std::vector<std::pair<std::string, models::Ablation>> rows;
  if (stage == 1) {
    for (int mask = 0; mask < 8; ++mask) {
      models::Ablation a;
      a.merge = mask & 1;
      a.adaptation = mask & 2;
      a.refine = mask & 4;
      std::string name = "stage1";
      name += a.merge ? "+merge" : "";
      name += a.adaptation ? "+adaptation" : "";
      name += a.refine ? "+refine" : "";
      if (mask == 0) name = "stage1-baseline";
      if (mask == 7) name = "stage1-full";
      rows.emplace_back(name, a);
    }
    return rows;
  }
  if (stage != 2) throw ValidationError("table_rows: stage must be 1 or 2");
  auto row = [&](const char* name, auto edit) {
    models::Ablation a;
    edit(a);
    rows.emplace_back(name, a);
  };
  row("stage2-full", [](models::Ablation&) {});
  row("stage2-no-loss-sem", [](models::Ablation& a) { a.loss_sem = false; });
  row("stage2-no-loss-edge", [](models::Ablation& a) { a.loss_edge = false; });
  row("stage2-no-entropy-block", [](models::Ablation& a) { a.entropy_block = false; });
  row("stage2-no-stage1-prompt", [](models::Ablation& a) { a.stage1_prompt = false; });
  row("stage2-no-adaptation", [](models::Ablation& a) { a.adaptation = false; });
  return rows;
}

std::string ablation_row(const TrainConfig& cfg) {
  const auto& a = cfg.ablation;
  for (const auto& [name, row] : table_rows(cfg.stage)) {
    if (row.merge == a.merge && row.adaptation == a.adaptation && row.refine == a.refine &&
        row.entropy_block == a.entropy_block && row.stage1_prompt == a.stage1_prompt &&
        row.loss_sem == a.loss_sem && row.loss_edge == a.loss_edge)
      return name;
  }
  auto flag = [](const char* n, bool v) { return std::string(" ") + n + "=" + (v ? "on" : "off"); };
  throw ValidationError("config: ablation flags do not match any table row for stage " +
                        std::to_string(cfg.stage) + ":" + flag("merge", a.merge) +
                        flag("adaptation", a.adaptation) + flag("refine", a.refine) +
                        flag("entropy_block", a.entropy_block) + flag("stage1_prompt", a.stage1_prompt) +
                        flag("loss_sem", a.loss_sem) + flag("loss_edge", a.loss_edge) +
                        " (pass --free-form to allow it)");
}

void lint_config(const TrainConfig& cfg, bool free_form) {
  if (!free_form) ablation_row(cfg);
}

}  // namespace petrosam
