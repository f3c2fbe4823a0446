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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "petrosam/core/autograd.hpp"

// Parameter archive: 8-byte magic "PSCKPT01", u64 little-endian header size,
// a JSON header (metadata plus {name, shape, offset} per array), then every
// array as little-endian float64 in header order.
namespace petrosam {

struct CheckpointMeta {
  std::string model;  ///< "teacher" or "student"
  int stage = 1;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> config;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor<double>>> arrays;

  const Tensor<double>* find(const std::string& name) const;
};

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta, const ParamStore<Scalar>& params);

Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies every array into the store. Names and shapes must match exactly.
template <typename Scalar>
void load_parameters(ParamStore<Scalar>& params, const Checkpoint& ckpt);

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> skipped;  ///< store entries with no compatible array
};

/// Pretrained-weight hook: for each store entry under `to_prefix`, looks up the
/// archive entry with that prefix replaced by `from_prefix` and copies it when
/// the shape agrees. Everything else keeps its current value.
template <typename Scalar>
LoadReport load_matching(ParamStore<Scalar>& params, const Checkpoint& ckpt, const std::string& from_prefix = "",
                         const std::string& to_prefix = "");

}  // namespace petrosam
