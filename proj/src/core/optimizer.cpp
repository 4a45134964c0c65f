// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/optimizer.hpp"

#include <cmath>

#include "eihi/error.hpp"

namespace eihi {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Momentum: return "momentum";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "momentum") return OptimizerKind::Momentum;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd, momentum or adam)");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning rate must be finite and nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
}

nlohmann::json OptimizerConfig::to_json() const {
  return {{"kind", to_string(kind)}, {"learning_rate", learning_rate}, {"momentum", momentum},
          {"beta1", beta1}, {"beta2", beta2}, {"epsilon", epsilon},
          {"weight_decay", weight_decay}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  try {
    if (j.contains("kind")) c.kind = optimizer_kind_from_string(j.at("kind").get<std::string>());
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("optimizer config: ") + e.what());
  }
  c.validate();
  return c;
}

void Optimizer::step(std::span<Tensor> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size())
    throw ContractError("optimizer: parameter and gradient counts differ");
  if (first_.empty()) {
    for (const auto& p : params) {
      first_.emplace_back(p.shape());
      second_.emplace_back(p.shape());
    }
  } else if (first_.size() != params.size()) {
    throw ContractError("optimizer: parameter list changed between steps");
  }
  ++steps_;
  const double lr = config_.learning_rate, wd = config_.weight_decay;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    const auto& g = grads[t];
    if (p.shape() != g.shape())
      throw ShapeError("optimizer: gradient shape " + shape_string(g.shape()) +
                       " does not match parameter " + shape_string(p.shape()));
    auto& m = first_[t];
    auto& v = second_[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + wd * p[i];
      switch (config_.kind) {
        case OptimizerKind::Sgd:
          p[i] -= lr * gi;
          break;
        case OptimizerKind::Momentum:
          m[i] = config_.momentum * m[i] + gi;
          p[i] -= lr * m[i];
          break;
        case OptimizerKind::Adam: {
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
          v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
          p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.epsilon);
          break;
        }
      }
    }
  }
}

}  // namespace eihi
