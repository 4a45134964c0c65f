// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "eihi/autograd.hpp"

namespace eihi {

/// Builds a scalar loss on `tape` from the parameter handles.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckEntry {
  std::size_t tensor = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b) noexcept;

/// Central differences (f(p+h) - f(p-h)) / 2h on every scalar when there are at
/// most `min_scalars` of them, otherwise on a seeded sample of `min_scalars`.
/// Throws DeterminismError if two evaluations at the same point disagree.
GradReport finite_diff_check(const LossBuilder& loss, std::vector<Tensor> params, double step,
                             std::size_t min_scalars = 64, std::uint64_t seed = 0);

}  // namespace eihi
