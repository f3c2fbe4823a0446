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

#include "petrosam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "petrosam/error.hpp"

namespace petrosam {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'C', 'K', 'P', 'T', '0', '1'};
static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

}  // namespace

const Tensor<double>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return &t;
  return nullptr;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta, const ParamStore<Scalar>& params) {
  nlohmann::ordered_json header;
  header["model"] = meta.model;
  header["stage"] = meta.stage;
  header["epoch"] = meta.epoch;
  header["seed"] = meta.seed;
  header["config_hash"] = meta.config_hash;
  header["config"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : meta.config) header["config"][k] = v;
  header["arrays"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, var] : params.entries()) {
    header["arrays"].push_back({{"name", name}, {"shape", var->value.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(var->value.size());
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
    const std::uint64_t size = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&size), sizeof size);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, var] : params.entries()) {
      const Eigen::ArrayXd values = var->value.array().template cast<double>();
      out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 8));
    }
    if (!out) throw RuntimeFailure("short write to checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("checkpoint not found: " + path.string());
  char magic[8];
  std::uint64_t size = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&size), sizeof size);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw RuntimeFailure("not a petrosam checkpoint: " + path.string());
  std::string text(size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(size));
  if (!in) throw RuntimeFailure("truncated checkpoint header: " + path.string());

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.meta.model = header.at("model").get<std::string>();
    ckpt.meta.stage = header.at("stage").get<int>();
    ckpt.meta.epoch = header.at("epoch").get<int>();
    ckpt.meta.seed = header.at("seed").get<std::uint64_t>();
    ckpt.meta.config_hash = header.at("config_hash").get<std::string>();
    for (const auto& [k, v] : header.at("config").items()) ckpt.meta.config.emplace_back(k, v.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure("checkpoint metadata incomplete in " + path.string() + ": " + e.what());
  }

  std::uint64_t expected_offset = 0;
  for (const auto& entry : header.at("arrays")) {
    const Shape shape = entry.at("shape").get<Shape>();
    if (entry.at("offset").get<std::uint64_t>() != expected_offset)
      throw RuntimeFailure("checkpoint arrays are not contiguous in " + path.string());
    Tensor<double> t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
    if (!in) throw RuntimeFailure("truncated checkpoint data in " + path.string());
    expected_offset += static_cast<std::uint64_t>(t.size());
    ckpt.arrays.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

template <typename Scalar>
void load_parameters(ParamStore<Scalar>& params, const Checkpoint& ckpt) {
  if (ckpt.arrays.size() != params.entries().size())
    throw ValidationError("checkpoint has " + std::to_string(ckpt.arrays.size()) + " arrays, model expects " +
                          std::to_string(params.entries().size()));
  for (const auto& [name, var] : params.entries()) {
    const auto* t = ckpt.find(name);
    if (!t) throw ValidationError("checkpoint is missing parameter " + name);
    if (t->shape() != var->value.shape())
      throw ShapeError("checkpoint shape " + shape_str(t->shape()) + " for " + name + ", model expects " +
                       shape_str(var->value.shape()));
    var->value.array() = t->array().template cast<Scalar>();
  }
}

template <typename Scalar>
LoadReport load_matching(ParamStore<Scalar>& params, const Checkpoint& ckpt, const std::string& from_prefix,
                         const std::string& to_prefix) {
  LoadReport report;
  for (const auto& [name, var] : params.entries()) {
    if (name.compare(0, to_prefix.size(), to_prefix) != 0) continue;
    const auto* t = ckpt.find(from_prefix + name.substr(to_prefix.size()));
    if (t && t->shape() == var->value.shape()) {
      var->value.array() = t->array().template cast<Scalar>();
      report.loaded.push_back(name);
    } else {
      report.skipped.push_back(name);
    }
  }
  return report;
}

#define PETROSAM_INSTANTIATE(S)                                                                          \
  template void save_checkpoint<S>(const std::filesystem::path&, const CheckpointMeta&, const ParamStore<S>&); \
  template void load_parameters<S>(ParamStore<S>&, const Checkpoint&);                                  \
  template LoadReport load_matching<S>(ParamStore<S>&, const Checkpoint&, const std::string&, const std::string&);

PETROSAM_INSTANTIATE(float)
PETROSAM_INSTANTIATE(double)
#undef PETROSAM_INSTANTIATE

}  // namespace petrosam
