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
#include <vector>

#include "petrosam/grid.hpp"

namespace petrosam::io {

/// 8-bit image with interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

void write_png(const std::filesystem::path& path, const Image8& image);

/// Reads any PNG and converts it to `channels` (1 or 3).
Image8 read_png(const std::filesystem::path& path, int channels);

/// Binary grid file: ASCII magic "PSGRID01", uint32 LE height, uint32 LE
/// width, then height*width IEEE-754 float64 LE values in row-major order.
void write_grid(const std::filesystem::path& path, const Grid<double>& grid);
Grid<double> read_grid(const std::filesystem::path& path);

/// 8-bit rendering of a non-negative map scaled so that its maximum is 255.
Image8 visualize(const Grid<double>& grid);

inline std::uint8_t to_byte(double v) {
  v = v < 0 ? 0 : (v > 1 ? 1 : v);
  return static_cast<std::uint8_t>(v * 255.0 + 0.5);
}

}  // namespace petrosam::io
