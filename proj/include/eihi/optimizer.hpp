// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eihi/tensor.hpp"

namespace eihi {

enum class OptimizerKind { Sgd, Momentum, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 0.01;
  double momentum = 0.9;  // Momentum only
  double beta1 = 0.9;     // Adam only
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // L2, folded into the gradient

  void validate() const;
  nlohmann::json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& j);
};

// Stateful first-order update over a fixed list of parameter tensors.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

  void step(std::span<Tensor> params, std::span<const Tensor> grads);
  std::size_t steps() const noexcept { return steps_; }
  const OptimizerConfig& config() const noexcept { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::size_t steps_ = 0;
};

}  // namespace eihi
