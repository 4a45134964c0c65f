// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eihi/autograd.hpp"
#include "eihi/tensor.hpp"

namespace eihi {

enum class LayerKind { Conv, Relu, MaxPool, AvgPool, GlobalMean, Flatten, Dense };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t out = 0;     // conv channels or dense width
  std::size_t kernel = 0;  // conv kernel, pool window
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Input geometry plus an ordered layer list. Parameter layout is a pure
/// function of this struct.
struct BackboneSpec {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<LayerSpec> layers;

  /// 3 x (conv3x3-ReLU-maxpool2) with widths {8,16,32}, flatten, dense -> `embedding_dim`.
  static BackboneSpec standard(std::size_t height, std::size_t width,
                               std::size_t embedding_dim = 64);

  /// Validates the chain and returns the per-sample output shape of each layer.
  std::vector<Shape> layer_shapes() const;
  std::size_t embedding_dim() const;

  /// Shapes of parameter tensors in storage order (weight then bias per layer).
  std::vector<Shape> parameter_shapes() const;
  std::size_t parameter_count() const;

  nlohmann::json to_json() const;
  static BackboneSpec from_json(const nlohmann::json& j);

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

bool operator==(const LayerSpec& a, const LayerSpec& b);

struct BackboneParams {
  BackboneSpec spec;
  std::vector<Tensor> tensors;

  std::size_t embedding_dim() const { return spec.embedding_dim(); }
  /// FNV-1a over the raw bytes of every parameter; used for cache keys and
  /// for checking that frozen parameters were not touched.
  std::uint64_t checksum() const;
};

/// Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)); zero biases.
BackboneParams init_backbone(const BackboneSpec& spec, std::uint64_t seed);

/// Records the backbone on `tape`; `params` are the tape handles for
/// BackboneParams::tensors in order. Returns the n x d embedding batch.
Var forward_backbone(const BackboneSpec& spec, std::span<const Var> params, Var batch);

/// Value-only forward over a frozen backbone. Thread-safe for concurrent callers.
Tensor forward_backbone(const BackboneParams& params, const Tensor& batch);

/// Forward in chunks of `chunk` rows to bound memory.
Tensor embed_all(const BackboneParams& params, const Tensor& batch, std::size_t chunk = 256);

}  // namespace eihi
