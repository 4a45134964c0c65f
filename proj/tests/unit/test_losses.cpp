// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <cmath>
#include <vector>

#include "../oracles/loss_oracle.hpp"
#include "eihi/error.hpp"
#include "eihi/losses.hpp"
#include "eihi/rng.hpp"

using namespace eihi;

namespace {

Tensor mat(std::size_t n, std::size_t d, std::vector<double> v) { return Tensor({n, d}, std::move(v)); }

Tensor random_mat(std::size_t n, std::size_t d, CounterRng& rng) {
  Tensor t({n, d});
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

oracle::Mat rows(const Tensor& t) {
  oracle::Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
  return m;
}

}  // namespace

TEST_CASE("cosine similarity examples") {
  const Tensor a = mat(2, 2, {1, 0, 1, 1});
  CHECK(cosine_similarities(a, a).values()[0] == doctest::Approx(1.0).epsilon(1e-15));
  const Tensor b = mat(2, 2, {0, 1, 1, 0});
  const Tensor s = cosine_similarities(a, b);
  CHECK(s.values()[0] == 0.0);
  CHECK(s.values()[1] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_similarities(mat(2, 2, {1, 0, 0, 0}), a), NumericError);
  CHECK_THROWS_AS(cosine_similarities(a, mat(1, 2, {1, 0})), ShapeError);
}

TEST_CASE("info_nce examples") {
  // Every similarity equal: uniform softmax over ten slots.
  const Tensor ones = mat(3, 2, {1, 1, 2, 2, -1, 3});
  std::vector<Tensor> negs(9, ones);
  CHECK(std::abs(info_nce(ones, ones, negs, 0.01) - std::log(10.0)) < 1e-12);

  const Tensor o = mat(1, 2, {1, 0});
  const std::vector<Tensor> n1{mat(1, 2, {0, 1})};
  CHECK(info_nce(o, o, n1, 1.0) == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1))).epsilon(1e-14));
  CHECK(std::abs(info_nce(o, o, n1, 1.0) - 0.31326169) < 1e-8);

  const std::vector<Tensor> anti{mat(1, 2, {-1, 0}), mat(1, 2, {-2, 0})};
  CHECK(info_nce(o, o, anti, 0.01) < 1e-8);

  CHECK_THROWS_AS(info_nce(o, o, std::vector<Tensor>{}, 1.0), ContractError);
  CHECK_THROWS_AS(info_nce(o, o, n1, 0.0), ContractError);
}

TEST_CASE("cov_penalty examples") {
  CHECK(std::abs(cov_penalty(mat(2, 2, {1, 0, 0, 1})) - 0.25) < 1e-12);
  CounterRng rng(8);
  CHECK(cov_penalty(random_mat(7, 1, rng)) == 0.0);
  CHECK_THROWS_AS(cov_penalty(mat(1, 3, {1, 2, 3})), ContractError);

  // Independent columns: off-diagonal covariances shrink like 1/sqrt(n).
  Tensor big({10000, 4});
  for (auto& v : big.values()) v = rng.normal();
  CHECK(cov_penalty(big) < 1e-3);
}

TEST_CASE("total_loss reductions") {
  CounterRng rng(21);
  const Tensor a = random_mat(4, 5, rng), b = random_mat(4, 5, rng);
  const std::vector<Tensor> negs{random_mat(4, 5, rng), random_mat(4, 5, rng)};
  LossConfig zero;
  zero.lambda = 0.0;
  Tensor all({8, 5});
  for (std::size_t i = 0; i < 20; ++i) {
    all.values()[i] = negs[0].values()[i];
    all.values()[20 + i] = negs[1].values()[i];
  }
  CHECK(total_loss(a, b, negs, zero) == cov_penalty(a) + cov_penalty(b) + cov_penalty(all));

  const Tensor a1 = random_mat(4, 1, rng), b1 = random_mat(4, 1, rng);
  const std::vector<Tensor> n1{random_mat(4, 1, rng)};
  LossConfig cfg;
  cfg.lambda = 0.7;
  CHECK(total_loss(a1, b1, n1, cfg) == doctest::Approx(0.7 * info_nce(a1, b1, n1, cfg.temperature)).epsilon(1e-15));

  LossConfig nocov;
  nocov.covariance = false;
  CHECK(total_loss(a, b, negs, nocov) == info_nce(a, b, negs, nocov.temperature));
}

TEST_CASE("total_loss equals a straight-line recomputation") {
  CounterRng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(4), d = 1 + rng.below(6), m = 1 + rng.below(4);
    const double t = trial % 2 ? 1.0 : 0.01;
    const Tensor a = random_mat(n, d, rng), b = random_mat(n, d, rng);
    std::vector<Tensor> negs;
    std::vector<oracle::Mat> on;
    for (std::size_t k = 0; k < m; ++k) {
      negs.push_back(random_mat(n, d, rng));
      on.push_back(rows(negs.back()));
    }
    LossConfig cfg;
    cfg.temperature = t;
    cfg.lambda = rng.uniform(0.0, 2.0);
    const double want = oracle::total_loss(rows(a), rows(b), on, t, cfg.lambda);
    CHECK(std::abs(total_loss(a, b, negs, cfg) - want) <= 1e-10 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("loss invariants") {
  CounterRng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = random_mat(5, 4, rng), b = random_mat(5, 4, rng);
    const std::vector<Tensor> negs{random_mat(5, 4, rng), random_mat(5, 4, rng), random_mat(5, 4, rng)};
    const double base = info_nce(a, b, negs, 0.1);

    // Positive row rescaling
    Tensor scaled = a;
    const std::size_t r = rng.below(5);
    const double alpha = rng.uniform(0.1, 10.0);
    for (std::size_t j = 0; j < 4; ++j) scaled.at(r, j) *= alpha;
    CHECK(std::abs(info_nce(scaled, b, negs, 0.1) - base) < 1e-12);

    // Moving the positive toward the original (at equal norm) raises sim_pos.
    auto norm = [](const Tensor& t, std::size_t i) {
      double s = 0;
      for (std::size_t j = 0; j < t.dim(1); ++j) s += t.at(i, j) * t.at(i, j);
      return std::sqrt(s);
    };
    Tensor closer = b;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        closer.at(i, j) = 0.5 * (b.at(i, j) + a.at(i, j) * norm(b, i) / norm(a, i));
    CHECK(info_nce(a, closer, negs, 0.1) < base);

    // Covariance: shift and row permutation
    const double c = cov_penalty(a);
    Tensor shifted = a;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j) shifted.at(i, j) += static_cast<double>(j) * 3.0 - 1.0;
    CHECK(std::abs(cov_penalty(shifted) - c) < 1e-12);
    Tensor perm = a;
    for (std::size_t j = 0; j < 4; ++j) std::swap(perm.at(0, j), perm.at(4, j));
    CHECK(std::abs(cov_penalty(perm) - c) < 1e-14);
  }
  // Columns with zero off-diagonal covariance by construction.
  const Tensor diag = mat(4, 2, {1, 1, -1, 1, 1, -1, -1, -1});
  CHECK(cov_penalty(diag) == 0.0);
  CHECK(cov_penalty(mat(4, 2, {1, 1, -1, -1, 1, 1, -1, -1})) > 0.0);
}
