// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "eihi/checkpoint.hpp"
#include "eihi/error.hpp"

namespace eihi {

namespace {

class HeaderReader {
 public:
  HeaderReader(std::string_view bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      ++pos_;
      if (++digits > 9) fail(std::string(what) + " is too large");
    }
    if (digits == 0) fail(std::string("malformed header: expected ") + what);
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(origin_ + ": " + msg); }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }
  std::string_view rest() const { return bytes_.substr(pos_); }

 private:
  std::string_view bytes_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

Raster8 parse_netpbm(std::string_view bytes, const std::string& origin, std::string_view magic,
                     std::size_t channels) {
  HeaderReader r(bytes, origin);
  if (bytes.substr(0, 2) != magic)
    r.fail("malformed header: expected magic " + std::string(magic));
  for (int i = 0; i < 2; ++i) r.advance();
  Raster8 img;
  img.channels = channels;
  img.width = r.number("width");
  img.height = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (img.width == 0 || img.height == 0) r.fail("zero image extent");
  if (maxval != 255) r.fail("maxval must be 255, got " + std::to_string(maxval));
  const auto tail = r.rest();
  if (tail.empty() || !std::isspace(static_cast<unsigned char>(tail[0])))
    r.fail("malformed header: missing separator before pixel data");
  const auto payload = tail.substr(1);
  const std::size_t need = img.width * img.height * channels;
  if (payload.size() < need)
    r.fail("truncated payload: " + std::to_string(need) + " bytes required, " +
           std::to_string(payload.size()) + " present");
  img.pixels.assign(payload.begin(), payload.begin() + static_cast<std::ptrdiff_t>(need));
  return img;
}

std::string encode_netpbm(const Raster8& raster, const char* magic, std::size_t channels) {
  if (raster.channels != channels || raster.pixels.size() != raster.width * raster.height * channels)
    throw ContractError(std::string("raster does not match ") + magic + " layout");
  std::string out = std::string(magic) + "\n" + std::to_string(raster.width) + " " +
                    std::to_string(raster.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(raster.pixels.data()), raster.pixels.size());
  return out;
}

}  // namespace

Raster8 parse_ppm(std::string_view bytes, const std::string& origin) {
  return parse_netpbm(bytes, origin, "P6", 3);
}

Raster8 parse_pgm(std::string_view bytes, const std::string& origin) {
  return parse_netpbm(bytes, origin, "P5", 1);
}

std::string encode_ppm(const Raster8& raster) { return encode_netpbm(raster, "P6", 3); }
std::string encode_pgm(const Raster8& raster) { return encode_netpbm(raster, "P5", 1); }

Raster8 read_ppm(const std::filesystem::path& path) {
  return parse_ppm(read_file_bytes(path), path.string());
}

Raster8 read_pgm(const std::filesystem::path& path) {
  return parse_pgm(read_file_bytes(path), path.string());
}

Tensor raster_to_tensor(const Raster8& raster) {
  const std::size_t c = raster.channels, h = raster.height, w = raster.width;
  Tensor t({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        t[(ch * h + y) * w + x] = raster.pixels[(y * w + x) * c + ch] / 255.0;
  return t;
}

Raster8 tensor_to_raster(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("tensor_to_raster expects c x h x w");
  Raster8 r{image.dim(2), image.dim(1), image.dim(0), {}};
  r.pixels.resize(image.size());
  const std::size_t c = r.channels, h = r.height, w = r.width;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = std::clamp(image[(ch * h + y) * w + x], 0.0, 1.0);
        r.pixels[(y * w + x) * c + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return r;
}

Raster8 mask_to_raster(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width) {
  if (mask.size() != height * width) throw ShapeError("mask size does not match h x w");
  Raster8 r{width, height, 1, {}};
  r.pixels.reserve(mask.size());
  for (auto m : mask) r.pixels.push_back(m ? 255 : 0);
  return r;
}

std::vector<std::uint8_t> raster_to_mask(const Raster8& raster, const std::string& origin) {
  if (raster.channels != 1) throw ParseError(origin + ": mask must be single-channel");
  std::vector<std::uint8_t> mask;
  mask.reserve(raster.pixels.size());
  for (std::size_t i = 0; i < raster.pixels.size(); ++i) {
    const auto v = raster.pixels[i];
    if (v != 0 && v != 255)
      throw ParseError(origin + ": mask pixel " + std::to_string(i) + " is " + std::to_string(v) +
                       ", only 0 and 255 allowed");
    mask.push_back(v ? 1 : 0);
  }
  return mask;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear expects c x h x w");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image;
  Tensor out({c, height, width});
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto at = [&](std::size_t yy, std::size_t xx) { return image[(ch * h + yy) * w + xx]; };
        out[(ch * height + y) * width + x] =
            (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
            wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
      }
    }
  }
  return out;
}

}  // namespace eihi
