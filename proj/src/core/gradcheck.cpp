// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/gradcheck.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "eihi/error.hpp"
#include "eihi/rng.hpp"

namespace eihi {

namespace {

double evaluate(const LossBuilder& loss, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(tape.constant(p));
  const Var out = loss(tape, vars);
  if (out.value().size() != 1) throw ContractError("gradient check needs a scalar loss");
  return out.value()[0];
}

}  // namespace

double relative_error(double a, double b) noexcept {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

GradReport finite_diff_check(const LossBuilder& loss, std::vector<Tensor> params, double step,
                             std::size_t min_scalars, std::uint64_t seed) {
  if (!(step > 0.0)) throw ContractError("finite_diff_check: step must be positive");

  Tape tape;
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  const Var out = loss(tape, vars);
  const double base = out.value().size() == 1 ? out.value()[0] : 0.0;
  tape.backward(out);
  std::vector<Tensor> grads;
  for (const auto& v : vars) grads.push_back(tape.grad(v));

  const double again = evaluate(loss, params);
  if (std::bit_cast<std::uint64_t>(again) != std::bit_cast<std::uint64_t>(base))
    throw DeterminismError("loss function returned different values at the same point");

  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t i = 0; i < params[t].size(); ++i) all.emplace_back(t, i);
  if (all.size() > min_scalars) {
    CounterRng rng(seed);
    rng.shuffle(std::span(all));
    all.resize(min_scalars);
    std::sort(all.begin(), all.end());
  }

  GradReport report;
  for (const auto& [t, i] : all) {
    const double orig = params[t][i];
    params[t][i] = orig + step;
    const double up = evaluate(loss, params);
    params[t][i] = orig - step;
    const double down = evaluate(loss, params);
    params[t][i] = orig;
    GradCheckEntry e{t, i, grads[t][i], (up - down) / (2.0 * step), 0.0};
    e.rel_error = relative_error(e.analytic, e.numeric);
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace eihi
