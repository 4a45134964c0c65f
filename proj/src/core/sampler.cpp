// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/sampler.hpp"

#include <algorithm>
#include <string>

#include "eihi/error.hpp"

namespace eihi {

ClassIndex::ClassIndex(const SampleSet& samples) {
  for (const auto& s : samples) members_[s->class_label].push_back(s);
  total_ = samples.size();
  for (const auto& [c, v] : members_) {
    if (v.size() < 2)
      throw SamplerError("class " + std::to_string(c) +
                         " has a single sample; no positive can be drawn");
    classes_.push_back(c);
  }
  if (classes_.size() < 2)
    throw SamplerError(classes_.empty() ? "empty train set"
                                        : "only one class present; no negatives can be drawn");
}

const SampleSet& ClassIndex::members(int class_label) const {
  auto it = members_.find(class_label);
  if (it == members_.end())
    throw SamplerError("class " + std::to_string(class_label) + " not in train set");
  return it->second;
}

ElementBatch build_batch(const ClassIndex& index, std::span<const SamplePtr> originals,
                         std::size_t M, CounterRng& rng) {
  if (M < 1) throw SamplerError("M must be at least 1");
  if (originals.empty()) throw SamplerError("batch needs at least one original");
  ElementBatch batch;
  batch.negatives_per_element = M;
  batch.elements.reserve(originals.size());
  std::vector<std::vector<std::size_t>> unused;  // per foreign class, remaining member indices
  for (const auto& orig : originals) {
    MinimalLearningElement el;
    el.original = orig;
    const auto& same = index.members(orig->class_label);
    // Uniform over same-class members excluding the original.
    std::size_t self = 0;
    while (self < same.size() && same[self]->id != orig->id) ++self;
    if (self == same.size())
      throw SamplerError("original " + std::to_string(orig->id) + " is not in the train set");
    auto pick = static_cast<std::size_t>(rng.below(same.size() - 1));
    if (pick >= self) ++pick;
    el.positive = same[pick];

    std::vector<int> foreign;
    for (int c : index.classes())
      if (c != orig->class_label) foreign.push_back(c);
    const bool replace = index.foreign_pool(orig->class_label) < M;
    unused.assign(foreign.size(), {});
    for (std::size_t f = 0; f < foreign.size(); ++f) {
      unused[f].resize(index.members(foreign[f]).size());
      for (std::size_t i = 0; i < unused[f].size(); ++i) unused[f][i] = i;
    }
    std::vector<std::size_t> live(foreign.size());
    for (std::size_t f = 0; f < live.size(); ++f) live[f] = f;
    el.negatives.reserve(M);
    for (std::size_t m = 0; m < M; ++m) {
      const auto li = static_cast<std::size_t>(rng.below(live.size()));
      const std::size_t f = live[li];
      auto& pool = unused[f];
      const auto j = static_cast<std::size_t>(rng.below(pool.size()));
      el.negatives.push_back(index.members(foreign[f])[pool[j]]);
      if (!replace) {
        pool[j] = pool.back();
        pool.pop_back();
        if (pool.empty()) {
          live[li] = live.back();
          live.pop_back();
        }
      }
    }
    batch.elements.push_back(std::move(el));
  }
  return batch;
}

ElementBatch sample_batch(const SampleSet& train, std::size_t n, std::size_t M, CounterRng& rng) {
  if (n < 1) throw SamplerError("batch size n must be at least 1");
  if (n > train.size())
    throw SamplerError("batch size " + std::to_string(n) + " exceeds train set size " +
                       std::to_string(train.size()));
  ClassIndex index(train);
  SampleSet pool = train;
  for (std::size_t i = 0; i < n; ++i) {  // partial Fisher-Yates
    const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  return build_batch(index, std::span<const SamplePtr>(pool.data(), n), M, rng);
}

EpochIterator::EpochIterator(const SampleSet& train, std::size_t n, std::size_t M,
                             std::uint64_t seed)
    : index_(train), order_(train), n_(n), M_(M), seed_(seed) {
  if (n < 1) throw SamplerError("batch size n must be at least 1");
  if (M < 1) throw SamplerError("M must be at least 1");
  CounterRng rng(CounterRng::derive(seed, 0));
  rng.shuffle(std::span<SamplePtr>(order_));
}

std::size_t EpochIterator::num_batches() const { return (order_.size() + n_ - 1) / n_; }

ElementBatch EpochIterator::batch(std::size_t k) const {
  if (k >= num_batches()) throw SamplerError("batch index past the end of the epoch");
  const std::size_t lo = k * n_, hi = std::min(order_.size(), lo + n_);
  CounterRng rng(CounterRng::derive(CounterRng::derive(seed_, 1), k));
  return build_batch(index_, std::span<const SamplePtr>(order_).subspan(lo, hi - lo), M_, rng);
}

}  // namespace eihi
