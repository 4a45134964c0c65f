// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace eihi {

std::uint64_t CounterRng::below(std::uint64_t bound) noexcept {
  // Reject the tail so every residue is equally likely.
  const std::uint64_t limit = bound * (UINT64_MAX / bound);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % bound;
}

double CounterRng::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::size_t> CounterRng::permutation(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(idx));
  return idx;
}

}  // namespace eihi
