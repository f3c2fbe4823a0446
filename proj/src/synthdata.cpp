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

#include "petrosam/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "petrosam/error.hpp"
#include "petrosam/image_io.hpp"

namespace petrosam::synth {
namespace {

namespace fs = std::filesystem;

constexpr std::array<std::array<double, 3>, kClassCount> kPlaneColors = {{
    {0.08, 0.08, 0.10},  // background (epoxy / pore space)
    {0.78, 0.70, 0.62},  // feldspar
    {0.50, 0.38, 0.30},  // debris
    {0.93, 0.93, 0.96},  // quartz
}};

constexpr std::array<std::array<double, 3>, kClassCount> kCrossColors = {{
    {0.03, 0.03, 0.03},
    {0.55, 0.55, 0.62},
    {0.62, 0.46, 0.30},
    {0.88, 0.88, 0.86},
}};

constexpr double kColorJitter = 0.04;

}  // namespace

void SynthSpec::validate() const {
  if (image_size < 16) throw ValidationError("SynthSpec.image_size must be >= 16");
  if (n_grains < 2) throw ValidationError("SynthSpec.n_grains must be >= 2");
  if (class_count != kClassCount) throw ValidationError("SynthSpec.class_count must be 4");
  if (angle_count != kViewCount) throw ValidationError("SynthSpec.angle_count must be 7");
  if (!(noise_sigma >= 0) || !std::isfinite(noise_sigma))
    throw ValidationError("SynthSpec.noise_sigma must be >= 0");
  if (!std::isfinite(background_radius))
    throw ValidationError("SynthSpec.background_radius must be finite");
}

void PolarizedGroup::validate() const {
  if (views.rank() != 4 || views.dim(0) != kViewCount || views.dim(1) != 3)
    throw ShapeError("PolarizedGroup: expected [7,3,H,W] views, got " + shape_str(views.shape()));
  if (!views.all_finite()) throw ValidationError("PolarizedGroup: non-finite pixel values");
  if ((views.array() < 0).any() || (views.array() > 1).any())
    throw ValidationError("PolarizedGroup: pixel values outside [0,1]");
}

void EdgeMask::validate() const {
  if (!values.allFinite()) throw ValidationError("EdgeMask: non-finite values");
  if (kind == EdgeKind::kBinary) {
    if (((values != 0.0) && (values != 1.0)).any())
      throw ValidationError("EdgeMask: binary mask holds values other than 0 and 1");
  } else if ((values < 0).any() || (values > 1).any()) {
    throw ValidationError("EdgeMask: probabilities outside [0,1]");
  }
}

double view_angle(int k) { return (k - 1) * 15.0 * std::numbers::pi / 180.0; }

double extinction_factor(int k, double phase) {
  return 0.5 * (1.0 + std::cos(2.0 * (view_angle(k) - phase)));
}

Grid<double> label_boundaries(const LabelGrid& labels) {
  const Index h = labels.rows(), w = labels.cols();
  Grid<double> edge = Grid<double>::Zero(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const int l = labels(y, x);
      const bool differs = (y > 0 && labels(y - 1, x) != l) || (y + 1 < h && labels(y + 1, x) != l) ||
                           (x > 0 && labels(y, x - 1) != l) || (x + 1 < w && labels(y, x + 1) != l);
      edge(y, x) = differs ? 1.0 : 0.0;
    }
  return edge;
}

SynthSample generate_group(const SynthSpec& spec) {
  spec.validate();
  const int s = spec.image_size, g = spec.n_grains;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::array<double, 2>> seeds(g);
  for (auto& p : seeds) p = {unit(rng) * s, unit(rng) * s};

  SynthSample out;
  out.grains.resize(g + 1);
  for (int i = 0; i < g; ++i) {
    GrainInfo& info = out.grains[i];
    info.cls = 1 + static_cast<int>(unit(rng) * 3.0) % 3;
    info.phase = unit(rng) * std::numbers::pi;
    for (int c = 0; c < 3; ++c) {
      info.plane_color[c] = std::clamp(kPlaneColors[info.cls][c] + kColorJitter * (2 * unit(rng) - 1), 0.0, 1.0);
      info.cross_color[c] = std::clamp(kCrossColors[info.cls][c] + kColorJitter * (2 * unit(rng) - 1), 0.0, 1.0);
    }
  }
  out.grains[g] = GrainInfo{0, 0.0, kPlaneColors[0], kCrossColors[0]};

  out.grain_labels.resize(s, s);
  const double radius = spec.background_radius * s, center = 0.5 * s;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      if (spec.background_radius > 0 && std::hypot(py - center, px - center) > radius) {
        out.grain_labels(y, x) = g;
        continue;
      }
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int i = 0; i < g; ++i) {
        const double d = (py - seeds[i][0]) * (py - seeds[i][0]) + (px - seeds[i][1]) * (px - seeds[i][1]);
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      out.grain_labels(y, x) = best;
    }

  Tensor<double> views(Shape{kViewCount, 3, s, s});
  for (int v = 0; v < kViewCount; ++v)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const int label = out.grain_labels(y, x);
          const GrainInfo& info = out.grains[label];
          double value;
          if (v == 0)
            value = info.plane_color[c];
          else if (label == g)
            value = info.cross_color[c];
          else
            value = info.cross_color[c] * extinction_factor(v, info.phase);
          value += spec.noise_sigma * normal(rng);
          views.at(v, c, y, x) = std::clamp(value, 0.0, 1.0);
        }

  out.group.views = std::move(views);
  out.group.group_id = "seed_" + std::to_string(spec.seed);
  out.edge.values = label_boundaries(out.grain_labels);
  out.edge.kind = EdgeKind::kBinary;
  out.seeds = std::move(seeds);
  out.semantic.classes.resize(s, s);
  for (Index i = 0; i < out.grain_labels.size(); ++i)
    out.semantic.classes.data()[i] = out.grains[out.grain_labels.data()[i]].cls;
  return out;
}

void write_group(const PolarizedGroup& group, const EdgeMask& edge, const SemanticMask& sem,
                 const fs::path& root) {
  group.validate();
  const int h = static_cast<int>(group.height()), w = static_cast<int>(group.width());
  const fs::path dir = root / group.group_id;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("write_group: cannot create " + dir.string() + ": " + ec.message());

  for (int v = 0; v < kViewCount; ++v) {
    io::Image8 img{h, w, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = io::to_byte(group.at(v, c, y, x));
    io::write_png(dir / ("angle_" + std::to_string(v) + ".png"), img);
  }

  io::Image8 e{h, w, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w)};
  for (int i = 0; i < h * w; ++i) e.pixels[i] = edge.values.data()[i] >= 0.5 ? 255 : 0;
  io::write_png(dir / "edge.png", e);

  io::Image8 m{h, w, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w)};
  for (int i = 0; i < h * w; ++i) m.pixels[i] = static_cast<std::uint8_t>(sem.classes.data()[i] * 60);
  io::write_png(dir / "semantic.png", m);
}

PolarizedGroup read_views(const fs::path& root, const std::string& group_id) {
  const fs::path dir = root / group_id;
  PolarizedGroup group;
  int h = 0, w = 0;
  for (int v = 0; v < kViewCount; ++v) {
    const fs::path p = dir / ("angle_" + std::to_string(v) + ".png");
    if (!fs::exists(p)) throw MissingViewError(v, p.string());
    const io::Image8 img = io::read_png(p, 3);
    if (v == 0) {
      h = img.height;
      w = img.width;
      group.views = Tensor<double>(Shape{kViewCount, 3, h, w});
    } else if (img.height != h || img.width != w) {
      throw ShapeError("read_group: view " + std::to_string(v) + " of " + group_id +
                       " has a different size");
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) group.views.at(v, c, y, x) = img.at(y, x, c) / 255.0;
  }
  group.group_id = group_id;
  return group;
}

LoadedGroup read_group(const fs::path& root, const std::string& group_id, bool edge_only) {
  const fs::path dir = root / group_id;
  LoadedGroup out;
  out.group = read_views(root, group_id);
  const Index h = out.group.height(), w = out.group.width();

  const fs::path edge_path = dir / "edge.png";
  if (!fs::exists(edge_path)) throw RuntimeFailure("read_group: missing " + edge_path.string());
  const io::Image8 e = io::read_png(edge_path, 1);
  if (e.height != h || e.width != w) throw ShapeError("read_group: edge.png size mismatch in " + group_id);
  out.edge.values.resize(h, w);
  for (int i = 0; i < h * w; ++i) out.edge.values.data()[i] = e.pixels[i] >= 128 ? 1.0 : 0.0;

  const fs::path sem_path = dir / "semantic.png";
  if (!fs::exists(sem_path)) {
    if (!edge_only) throw RuntimeFailure("read_group: missing " + sem_path.string());
    return out;
  }
  const io::Image8 m = io::read_png(sem_path, 1);
  if (m.height != h || m.width != w) throw ShapeError("read_group: semantic.png size mismatch in " + group_id);
  SemanticMask sem;
  sem.classes.resize(h, w);
  for (int i = 0; i < h * w; ++i) {
    const int cls = m.pixels[i] / 60;
    if (cls >= kClassCount)
      throw ValidationError("read_group: semantic.png value " + std::to_string(m.pixels[i]) +
                            " is not a class encoding");
    sem.classes.data()[i] = cls;
  }
  out.semantic = std::move(sem);
  return out;
}

std::vector<std::string> list_groups(const fs::path& root) {
  if (!fs::is_directory(root)) throw RuntimeFailure("dataset root not found: " + root.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "angle_0.png"))
      ids.push_back(entry.path().filename().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    const std::vector<std::string>& group_ids, double train_fraction, std::uint64_t seed) {
  if (group_ids.empty()) throw ValidationError("split_dataset: empty id list");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("split_dataset: train_fraction must lie in (0, 1)");
  std::vector<std::string> ids = group_ids;
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * ids.size()));
  std::vector<std::string> train(ids.begin(), ids.begin() + n_train);
  std::vector<std::string> test(ids.begin() + n_train, ids.end());
  return {std::move(train), std::move(test)};
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::string> generate_dataset(const fs::path& root, int n_groups, const SynthSpec& base) {
  if (n_groups < 1) throw ValidationError("generate_dataset: n_groups must be >= 1");
  base.validate();
  std::vector<std::string> ids;
  for (int i = 0; i < n_groups; ++i) {
    SynthSpec spec = base;
    spec.seed = derive_seed(base.seed, static_cast<std::uint64_t>(i));
    SynthSample sample = generate_group(spec);
    char name[32];
    std::snprintf(name, sizeof name, "group_%04d", i);
    sample.group.group_id = name;
    write_group(sample.group, sample.edge, sample.semantic, root);
    ids.emplace_back(name);
  }
  return ids;
}

}  // namespace petrosam::synth
