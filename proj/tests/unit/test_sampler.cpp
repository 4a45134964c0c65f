// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <cmath>
#include <map>
#include <set>

#include "eihi/error.hpp"
#include "eihi/sampler.hpp"

using namespace eihi;

namespace {

// Bare samples: the sampler only reads ids and labels.
SampleSet labelled(const std::vector<int>& classes) {
  SampleSet out;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    Sample s;
    s.id = i;
    s.class_label = classes[i];
    s.image = Tensor({1});
    out.push_back(std::make_shared<const Sample>(std::move(s)));
  }
  return out;
}

SampleSet random_set(CounterRng& rng, std::size_t classes, std::size_t max_per_class) {
  std::vector<int> labels;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto k = 2 + rng.below(max_per_class - 1);
    for (std::size_t i = 0; i < k; ++i) labels.push_back(static_cast<int>(c));
  }
  return labelled(labels);
}

void check_element(const MinimalLearningElement& el, std::size_t M, std::size_t foreign_pool) {
  CHECK(el.positive->class_label == el.original->class_label);
  CHECK(el.positive->id != el.original->id);
  REQUIRE(el.negatives.size() == M);
  std::set<std::size_t> ids;
  for (const auto& neg : el.negatives) {
    CHECK(neg->class_label != el.original->class_label);
    ids.insert(neg->id);
  }
  if (foreign_pool >= M) CHECK(ids.size() == M);
}

}  // namespace

TEST_CASE("sample_batch emits elements with M foreign negatives") {
  CounterRng data_rng(3);
  const auto train = random_set(data_rng, 10, 12);
  CounterRng rng(11);
  const auto batch = sample_batch(train, 32, 9, rng);
  CHECK(batch.size() == 32);
  CHECK(batch.negatives_per_element == 9);
  std::set<std::size_t> originals;
  for (const auto& el : batch.elements) {
    check_element(el, 9, train.size());
    originals.insert(el.original->id);
  }
  CHECK(originals.size() == 32);
}

TEST_CASE("element constraints hold over random datasets") {
  CounterRng meta(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto classes = 2 + meta.below(6);
    const auto train = random_set(meta, classes, 6);
    const auto M = 1 + meta.below(12);
    ClassIndex index(train);
    EpochIterator it(train, 1 + meta.below(8), M, meta.next_u64());
    for (std::size_t k = 0; k < it.num_batches(); ++k)
      for (const auto& el : it.batch(k).elements)
        check_element(el, M, index.foreign_pool(el.original->class_label));
  }
}

TEST_CASE("forced positive and small foreign pool") {
  const auto train = labelled({0, 0, 1, 1});
  ClassIndex index(train);
  CounterRng rng(5);
  const SamplePtr originals[] = {train[0]};
  for (int rep = 0; rep < 20; ++rep) {
    const auto b = build_batch(index, originals, 3, rng);
    CHECK(b.elements[0].positive->id == 1);
    // Two foreign samples for M = 3: duplicates are unavoidable.
    for (const auto& neg : b.elements[0].negatives) CHECK(neg->class_label == 1);
  }
}

TEST_CASE("sampling is deterministic under rng state") {
  CounterRng data_rng(1);
  const auto train = random_set(data_rng, 4, 10);
  CounterRng a(77), b(77);
  const auto x = sample_batch(train, 8, 5, a);
  const auto y = sample_batch(train, 8, 5, b);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x.elements[i].original == y.elements[i].original);
    CHECK(x.elements[i].positive == y.elements[i].positive);
    CHECK(x.elements[i].negatives == y.elements[i].negatives);
  }
}

TEST_CASE("sampler errors") {
  CounterRng rng(0);
  try {
    ClassIndex index(labelled({0, 0, 1, 2, 2}));
    FAIL("expected a sampler error");
  } catch (const SamplerError& e) {
    CHECK(std::string(e.what()).find("class 1") != std::string::npos);
  }
  CHECK_THROWS_AS(ClassIndex(labelled({3, 3, 3})), SamplerError);
  CHECK_THROWS_AS(sample_batch(labelled({0, 0, 1, 1}), 5, 1, rng), SamplerError);
  CHECK_THROWS_AS(sample_batch(labelled({0, 0, 1, 1}), 2, 0, rng), SamplerError);
  CHECK_THROWS_AS(EpochIterator(labelled({0, 0, 1, 1}), 0, 1, 0), SamplerError);
}

TEST_CASE("epoch iterator covers the train set once") {
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i % 4);
  const auto train = labelled(labels);
  EpochIterator it(train, 32, 9, 123);
  REQUIRE(it.num_batches() == 4);
  std::vector<std::size_t> sizes;
  std::multiset<std::size_t> seen;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto b = it.batch(k);
    sizes.push_back(b.size());
    for (const auto& el : b.elements) seen.insert(el.original->id);
  }
  CHECK(sizes == std::vector<std::size_t>{32, 32, 32, 4});
  CHECK(seen.size() == 100);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 100);
  CHECK_THROWS_AS(it.batch(4), SamplerError);

  // Batches are a function of (seed, k), regardless of the order they are built in.
  const auto late = it.batch(2);
  EpochIterator again(train, 32, 9, 123);
  const auto direct = again.batch(2);
  for (std::size_t i = 0; i < late.size(); ++i)
    CHECK(late.elements[i].negatives == direct.elements[i].negatives);

  EpochIterator s0(train, 32, 9, 0), s1(train, 32, 9, 1);
  std::vector<std::size_t> o0, o1;
  for (const auto& s : s0.order()) o0.push_back(s->id);
  for (const auto& s : s1.order()) o1.push_back(s->id);
  CHECK(o0 != o1);
}

TEST_CASE("positives are uniform over eligible same-class samples") {
  const auto train = labelled({0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2});
  ClassIndex index(train);
  CounterRng rng(2024);
  const SamplePtr originals[] = {train[2]};
  const int draws = 20000;
  std::map<std::size_t, int> counts;
  std::map<int, int> neg_class;
  for (int i = 0; i < draws; ++i) {
    const auto b = build_batch(index, originals, 1, rng);
    ++counts[b.elements[0].positive->id];
    ++neg_class[b.elements[0].negatives[0]->class_label];
  }
  CHECK(counts.size() == 4);
  CHECK(counts.count(2) == 0);
  const double p = 0.25, se = std::sqrt(draws * p * (1 - p));
  for (const auto& [id, n] : counts) CHECK(std::abs(n - draws * p) < 5 * se);
  // Class-uniform negatives: class 2 (two samples) is drawn as often as class 1 (four).
  const double se2 = std::sqrt(draws * 0.25);
  CHECK(std::abs(neg_class[1] - draws / 2.0) < 5 * se2);
  CHECK(std::abs(neg_class[2] - draws / 2.0) < 5 * se2);
}
