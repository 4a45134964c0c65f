// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "eihi/rng.hpp"
#include "eihi/synthdata.hpp"

namespace eihi {

// One original, one same-class positive and M foreign-class negatives.
struct MinimalLearningElement {
  SamplePtr original;
  SamplePtr positive;
  std::vector<SamplePtr> negatives;
};

struct ElementBatch {
  std::vector<MinimalLearningElement> elements;
  std::size_t negatives_per_element = 0;

  std::size_t size() const { return elements.size(); }
};

// Train set grouped by class label, validated for contrastive sampling.
class ClassIndex {
 public:
  explicit ClassIndex(const SampleSet& samples);

  std::span<const int> classes() const { return classes_; }
  const SampleSet& members(int class_label) const;
  std::size_t foreign_pool(int class_label) const { return total_ - members(class_label).size(); }

 private:
  std::vector<int> classes_;
  std::map<int, SampleSet> members_;
  std::size_t total_ = 0;
};

// Completes elements for the given originals. Negatives are drawn
// class-uniform, then sample-uniform within the class, without replacement
// inside one element unless the foreign pool is smaller than M.
ElementBatch build_batch(const ClassIndex& index, std::span<const SamplePtr> originals,
                         std::size_t M, CounterRng& rng);

// n originals drawn uniformly without replacement from the train set.
ElementBatch sample_batch(const SampleSet& train, std::size_t n, std::size_t M, CounterRng& rng);

// Walks one epoch: originals are a seeded permutation of the train set cut
// into batches of n (the last may be short). Batch k draws from a stream
// derived from (seed, k) alone, so batches can be built in any order.
class EpochIterator {
 public:
  EpochIterator(const SampleSet& train, std::size_t n, std::size_t M, std::uint64_t seed);

  std::size_t num_batches() const;
  ElementBatch batch(std::size_t k) const;
  std::span<const SamplePtr> order() const { return order_; }

 private:
  ClassIndex index_;
  SampleSet order_;
  std::size_t n_;
  std::size_t M_;
  std::uint64_t seed_;
};

}  // namespace eihi
