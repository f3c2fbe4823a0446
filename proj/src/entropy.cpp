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

#include "petrosam/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <vector>

namespace petrosam::entropy {
namespace {

constexpr int kHalf = kWindow / 2;

void require_rgb(const io::Image8& img) {
  if (img.channels != 3) throw ValidationError("entropy: expected an RGB image");
  if (img.height <= 0 || img.width <= 0) throw ValidationError("entropy: empty image");
}

// Sorted distinct codes and a dense rank per pixel.
std::vector<int> rank_codes(const LabelGrid& codes, LabelGrid& ranks) {
  std::vector<int> distinct(codes.data(), codes.data() + codes.size());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::unordered_map<int, int> rank;
  for (std::size_t i = 0; i < distinct.size(); ++i) rank[distinct[i]] = static_cast<int>(i);
  ranks.resize(codes.rows(), codes.cols());
  for (Index i = 0; i < codes.size(); ++i) ranks.data()[i] = rank[codes.data()[i]];
  return distinct;
}

}  // namespace

void EntropyOptions::validate() const {
  if (tau < 1 || tau > 7) throw ValidationError("entropy: tau must lie in [1, 7], got " + std::to_string(tau));
}

QuantizedColors quantize_colors(const io::Image8& rgb, int tau, CodeMode mode) {
  EntropyOptions{tau, mode}.validate();
  require_rgb(rgb);
  const int bits = 8 - tau;
  QuantizedColors out;
  out.codes.resize(rgb.height, rgb.width);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      const int r = rgb.at(y, x, 0) >> tau, g = rgb.at(y, x, 1) >> tau, b = rgb.at(y, x, 2) >> tau;
      out.codes(y, x) = mode == CodeMode::kPaper ? 256 * r + (256 >> tau) * g + b
                                                 : (r << (2 * bits)) + (g << bits) + b;
    }
  LabelGrid ranks;
  out.count = static_cast<int>(rank_codes(out.codes, ranks).size());
  return out;
}

Grid<double> window_area(Index height, Index width) {
  Grid<double> area(height, width);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      const Index rows = std::min(y + kHalf, height - 1) - std::max<Index>(y - kHalf, 0) + 1;
      const Index cols = std::min(x + kHalf, width - 1) - std::max<Index>(x - kHalf, 0) + 1;
      area(y, x) = static_cast<double>(rows * cols);
    }
  return area;
}

EntropyMap entropy_map(const io::Image8& rgb, const EntropyOptions& opts) {
  opts.validate();
  const QuantizedColors q = quantize_colors(rgb, opts.tau, opts.mode);
  LabelGrid ranks;
  const int colors = static_cast<int>(rank_codes(q.codes, ranks).size());
  const Index h = rgb.height, w = rgb.width;
  const Grid<double> area = window_area(h, w);
  const int used = opts.bound == SumBound::kFirstSeven ? std::min(colors, 7) : colors;

  EntropyMap out{Grid<double>::Zero(h, w), opts.tau};
  // Integral image with a one-pixel zero border: sat(y+1, x+1) = sum over [0..y]x[0..x].
  Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sat(h + 1, w + 1);
  for (int color = 0; color < used; ++color) {
    sat.setZero();
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        sat(y + 1, x + 1) = (ranks(y, x) == color ? 1.0 : 0.0) + sat(y, x + 1) + sat(y + 1, x) - sat(y, x);
    for (Index y = 0; y < h; ++y) {
      const Index y0 = std::max<Index>(y - kHalf, 0), y1 = std::min(y + kHalf, h - 1) + 1;
      for (Index x = 0; x < w; ++x) {
        const Index x0 = std::max<Index>(x - kHalf, 0), x1 = std::min(x + kHalf, w - 1) + 1;
        const double count = sat(y1, x1) - sat(y0, x1) - sat(y1, x0) + sat(y0, x0);
        if (count > 0) {
          const double p = count / area(y, x);
          out.values(y, x) -= p * std::log(p);
        }
      }
    }
  }
  // -p ln p sums of a single color can round to -0 or a tiny negative.
  out.values = out.values.max(0.0);
  return out;
}

EntropyMap entropy_map_oracle(const io::Image8& rgb, const EntropyOptions& opts) {
  opts.validate();
  require_rgb(rgb);
  const int h = rgb.height, w = rgb.width;
  // Codes straight from the channel values, independent of quantize_colors.
  const int bits = 8 - opts.tau;
  auto code_at = [&](int y, int x) {
    const int r = rgb.at(y, x, 0) >> opts.tau, g = rgb.at(y, x, 1) >> opts.tau, b = rgb.at(y, x, 2) >> opts.tau;
    return opts.mode == CodeMode::kPaper ? 256 * r + (256 >> opts.tau) * g + b
                                         : r * (1 << (2 * bits)) + g * (1 << bits) + b;
  };
  std::map<int, int> first_seven;
  if (opts.bound == SumBound::kFirstSeven) {
    std::map<int, int> all;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) all[code_at(y, x)] = 0;
    for (auto it = all.begin(); it != all.end() && first_seven.size() < 7; ++it) first_seven[it->first] = 0;
  }

  EntropyMap out{Grid<double>::Zero(h, w), opts.tau};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::map<int, int> hist;
      int area = 0;
      for (int dy = -kHalf; dy <= kHalf; ++dy)
        for (int dx = -kHalf; dx <= kHalf; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          ++area;
          ++hist[code_at(yy, xx)];
        }
      double e = 0;
      for (const auto& [code, n] : hist) {
        if (opts.bound == SumBound::kFirstSeven && !first_seven.count(code)) continue;
        const double p = static_cast<double>(n) / area;
        e -= p * std::log(p);
      }
      out.values(y, x) = std::max(e, 0.0);
    }
  return out;
}

io::Image8 view_bytes(const synth::PolarizedGroup& group, int view) {
  const int h = static_cast<int>(group.height()), w = static_cast<int>(group.width());
  io::Image8 img{h, w, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = io::to_byte(group.at(view, c, y, x));
  return img;
}

Tensor<double> group_entropy(const synth::PolarizedGroup& group, const EntropyOptions& opts) {
  group.validate();
  const Index h = group.height(), w = group.width();
  Tensor<double> out(Shape{kViewCount, h, w, 1});
  for (int v = 0; v < kViewCount; ++v) {
    const EntropyMap e = entropy_map(view_bytes(group, v), opts);
    out.array().segment(v * h * w, h * w) = Eigen::Map<const Eigen::ArrayXd>(e.values.data(), h * w);
  }
  return out;
}

}  // namespace petrosam::entropy
