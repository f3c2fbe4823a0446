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

#include "petrosam/image_io.hpp"

#include <png.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "petrosam/error.hpp"

namespace petrosam::io {
namespace {

constexpr std::array<char, 8> kGridMagic = {'P', 'S', 'G', 'R', 'I', 'D', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "grid files are written with a native little-endian layout");

png_uint_32 png_format(int channels) {
  if (channels == 1) return PNG_FORMAT_GRAY;
  if (channels == 3) return PNG_FORMAT_RGB;
  throw ValidationError("png: only 1 or 3 channels are supported");
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.pixels.size() !=
      static_cast<std::size_t>(image.height) * image.width * image.channels)
    throw ValidationError("write_png: pixel buffer size does not match dimensions");
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = png_format(image.channels);
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw RuntimeFailure("write_png: " + path.string() + ": " + png.message);
}

Image8 read_png(const std::filesystem::path& path, int channels) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw RuntimeFailure("read_png: " + path.string() + ": " + png.message);
  png.format = png_format(channels);
  Image8 out;
  out.height = static_cast<int>(png.height);
  out.width = static_cast<int>(png.width);
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw RuntimeFailure("read_png: " + path.string() + ": " + png.message);
  }
  return out;
}

void write_grid(const std::filesystem::path& path, const Grid<double>& grid) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("write_grid: cannot open " + path.string());
  const std::uint32_t h = static_cast<std::uint32_t>(grid.rows());
  const std::uint32_t w = static_cast<std::uint32_t>(grid.cols());
  f.write(kGridMagic.data(), kGridMagic.size());
  f.write(reinterpret_cast<const char*>(&h), sizeof h);
  f.write(reinterpret_cast<const char*>(&w), sizeof w);
  f.write(reinterpret_cast<const char*>(grid.data()),
          static_cast<std::streamsize>(grid.size() * sizeof(double)));
  if (!f) throw RuntimeFailure("write_grid: write failed for " + path.string());
}

Grid<double> read_grid(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("read_grid: cannot open " + path.string());
  std::array<char, 8> magic{};
  std::uint32_t h = 0, w = 0;
  f.read(magic.data(), magic.size());
  f.read(reinterpret_cast<char*>(&h), sizeof h);
  f.read(reinterpret_cast<char*>(&w), sizeof w);
  if (!f || magic != kGridMagic) throw RuntimeFailure("read_grid: bad header in " + path.string());
  Grid<double> grid(h, w);
  f.read(reinterpret_cast<char*>(grid.data()), static_cast<std::streamsize>(grid.size() * sizeof(double)));
  if (!f) throw RuntimeFailure("read_grid: truncated data in " + path.string());
  return grid;
}

Image8 visualize(const Grid<double>& grid) {
  Image8 img{static_cast<int>(grid.rows()), static_cast<int>(grid.cols()), 1, {}};
  img.pixels.resize(static_cast<std::size_t>(grid.size()));
  const double mx = grid.size() ? grid.maxCoeff() : 0.0;
  for (Eigen::Index i = 0; i < grid.size(); ++i)
    img.pixels[static_cast<std::size_t>(i)] = mx > 0 ? to_byte(grid.data()[i] / mx) : 0;
  return img;
}

}  // namespace petrosam::io
