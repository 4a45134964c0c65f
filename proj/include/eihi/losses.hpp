// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "eihi/autograd.hpp"

namespace eihi {

/// How the M negative batches enter the covariance term.
enum class NegativeCovariance {
  Concat,     // one (M*n) x d matrix, penalized once
  MeanPerM,   // average of M per-batch penalties
};

struct LossConfig {
  double temperature = 0.01;
  double lambda = 1.0;  // weight on the contrastive term
  bool covariance = true;
  NegativeCovariance negatives = NegativeCovariance::Concat;

  void validate() const;
};

/// Row-wise cosine similarity of two n x d batches. Zero rows raise NumericError.
Var cosine_similarities(Var a, Var b);

/// Mean over rows of -log softmax([s_pos, s_neg1..s_negM] / t)[0].
Var info_nce(Var ori, Var pos, std::span<const Var> negatives, double temperature);

/// Squared off-diagonal entries of the (n-1)-normalized sample covariance,
/// summed and divided by d. Requires n >= 2.
Var cov_penalty(Var z);

/// lambda * info_nce + cov(ori) + cov(pos) + cov(negatives), the latter
/// combined per `config.negatives`. With config.covariance off only the
/// contrastive term remains.
Var total_loss(Var ori, Var pos, std::span<const Var> negatives, const LossConfig& config);

// Value-level wrappers for callers that do not need gradients.
Tensor cosine_similarities(const Tensor& a, const Tensor& b);
double info_nce(const Tensor& ori, const Tensor& pos, std::span<const Tensor> negatives,
                double temperature);
double cov_penalty(const Tensor& z);
double total_loss(const Tensor& ori, const Tensor& pos, std::span<const Tensor> negatives,
                  const LossConfig& config);

// ---- VICReg terms, used only by the implicit-negative baseline ----

struct VicregConfig {
  double invariance_weight = 25.0;
  double variance_weight = 25.0;
  double covariance_weight = 1.0;
  double gamma = 1.0;
  double epsilon = 1e-4;
};

/// mean_j max(0, gamma - sqrt(var_j + eps)) with the (n-1) variance of column j.
Var variance_hinge(Var z, double gamma, double epsilon);
Var vicreg_loss(Var a, Var b, const VicregConfig& config);

}  // namespace eihi
