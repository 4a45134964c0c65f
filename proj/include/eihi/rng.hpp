// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace eihi {

/// Counter-based generator: output k of stream `key` is SplitMix64's finalizer
/// applied to key * phi + k * gamma. No hidden state beyond (key, counter),
/// so any draw can be reproduced on any platform from those two integers.
///
/// std::mt19937 is portable but std::*_distribution is not, so the
/// distribution helpers below are implemented here explicitly.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key = 0, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  static std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Derive an independent stream key from a parent key and a tag.
  static std::uint64_t derive(std::uint64_t key, std::uint64_t tag) noexcept {
    return mix(mix(key ^ 0x9e3779b97f4a7c15ULL) + tag * 0xd1b54a32d192ed03ULL);
  }

  CounterRng fork(std::uint64_t tag) const { return CounterRng(derive(key_, tag)); }

  std::uint64_t next_u64() noexcept {
    return mix(key_ * 0x9e3779b97f4a7c15ULL + (++counter_) * 0xbf58476d1ce4e5b9ULL +
               0x632be59bd9b4e019ULL);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound) by rejection; bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;

  /// Standard normal via Box-Muller (one value per call; the pair's sine half
  /// is discarded so the stream position stays a pure function of call count).
  double normal() noexcept;

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace eihi
