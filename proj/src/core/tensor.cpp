// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "eihi/error.hpp"

namespace eihi {

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto e : shape_)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
  if (values_.size() != shape_size(shape_))
    throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(values_.size()));
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), values_);
}

void Tensor::fill(double v) noexcept { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (rank() == 0 || begin >= end || end > shape_[0])
    throw ShapeError("bad row slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") of " + shape_string(shape_));
  const std::size_t stride = values_.size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<double>(values_.begin() + begin * stride,
                                                  values_.begin() + end * stride));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  Shape s{items.size()};
  for (auto e : items[0].shape()) s.push_back(e);
  std::vector<double> v;
  v.reserve(shape_size(s));
  for (const auto& t : items) {
    if (t.shape() != items[0].shape())
      throw ShapeError("stack: shape " + shape_string(t.shape()) + " differs from " +
                       shape_string(items[0].shape()));
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  return Tensor(std::move(s), std::move(v));
}

}  // namespace eihi
