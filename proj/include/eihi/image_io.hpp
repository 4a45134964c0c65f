// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "eihi/tensor.hpp"

namespace eihi {

/// 8-bit raster, interleaved channels, row-major.
struct Raster8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 3 for P6, 1 for P5
  std::vector<std::uint8_t> pixels;
};

// Binary netpbm with maxval 255 only. `origin` names the source in errors.
Raster8 parse_ppm(std::string_view bytes, const std::string& origin = "<memory>");
Raster8 parse_pgm(std::string_view bytes, const std::string& origin = "<memory>");
std::string encode_ppm(const Raster8& raster);
std::string encode_pgm(const Raster8& raster);

Raster8 read_ppm(const std::filesystem::path& path);
Raster8 read_pgm(const std::filesystem::path& path);

/// c x h x w tensor in [0, 1] <-> 8-bit raster (round to nearest, clamped).
Tensor raster_to_tensor(const Raster8& raster);
Raster8 tensor_to_raster(const Tensor& image);

/// Binary mask (h x w, values 0/1) <-> P5 raster with values 0/255.
Raster8 mask_to_raster(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width);
std::vector<std::uint8_t> raster_to_mask(const Raster8& raster, const std::string& origin);

/// Bilinear resize of a c x h x w tensor (pixel-center aligned).
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

}  // namespace eihi
