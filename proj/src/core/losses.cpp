// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/losses.hpp"

#include <cmath>
#include <vector>

#include "eihi/error.hpp"

namespace eihi {

namespace {

void require_batch(const char* op, const Tensor& t) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected an n x d batch, got " +
                     shape_string(t.shape()));
}

}  // namespace

void LossConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
}

Var cosine_similarities(Var a, Var b) {
  require_batch("cosine_similarities", a.value());
  if (a.shape() != b.shape())
    throw ShapeError("cosine_similarities: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  return row_dot(l2_normalize_rows(a), l2_normalize_rows(b));
}

Var info_nce(Var ori, Var pos, std::span<const Var> negatives, double temperature) {
  if (negatives.empty())
    throw ContractError("info_nce needs at least one negative batch (M >= 1)");
  if (!(temperature > 0.0)) throw ContractError("info_nce: temperature must be positive");
  const Var ori_n = l2_normalize_rows(ori);
  auto sim = [&](Var other) {
    if (other.shape() != ori.shape())
      throw ShapeError("info_nce: batch " + shape_string(other.shape()) + " vs original " +
                       shape_string(ori.shape()));
    return scale(row_dot(ori_n, l2_normalize_rows(other)), 1.0 / temperature);
  };
  std::vector<Var> logits{sim(pos)};
  for (const auto& neg : negatives) logits.push_back(sim(neg));
  const Var log_probs = log_softmax_rows(stack_columns(logits));
  return scale(mean(select_column(log_probs, 0)), -1.0);
}

Var cov_penalty(Var z) {
  require_batch("cov_penalty", z.value());
  const std::size_t n = z.value().dim(0), d = z.value().dim(1);
  if (n < 2) throw ContractError("cov_penalty needs at least 2 rows, got " + std::to_string(n));
  const Var centered = center_columns(z);
  const Var cov = scale(matmul(centered, centered, true, false), 1.0 / static_cast<double>(n - 1));
  return scale(sum(square(zero_diagonal(cov))), 1.0 / static_cast<double>(d));
}

Var total_loss(Var ori, Var pos, std::span<const Var> negatives, const LossConfig& config) {
  config.validate();
  Var loss = scale(info_nce(ori, pos, negatives, config.temperature), config.lambda);
  if (!config.covariance) return loss;
  loss = add(loss, cov_penalty(ori));
  loss = add(loss, cov_penalty(pos));
  if (config.negatives == NegativeCovariance::Concat) {
    loss = add(loss, cov_penalty(concat_rows(negatives)));
  } else {
    Var acc = cov_penalty(negatives[0]);
    for (std::size_t m = 1; m < negatives.size(); ++m) acc = add(acc, cov_penalty(negatives[m]));
    loss = add(loss, scale(acc, 1.0 / static_cast<double>(negatives.size())));
  }
  return loss;
}

Tensor cosine_similarities(const Tensor& a, const Tensor& b) {
  Tape tape;
  return cosine_similarities(tape.constant(a), tape.constant(b)).value();
}

double info_nce(const Tensor& ori, const Tensor& pos, std::span<const Tensor> negatives,
                double temperature) {
  Tape tape;
  std::vector<Var> negs;
  for (const auto& n : negatives) negs.push_back(tape.constant(n));
  return info_nce(tape.constant(ori), tape.constant(pos), negs, temperature).value()[0];
}

double cov_penalty(const Tensor& z) {
  Tape tape;
  return cov_penalty(tape.constant(z)).value()[0];
}

double total_loss(const Tensor& ori, const Tensor& pos, std::span<const Tensor> negatives,
                  const LossConfig& config) {
  Tape tape;
  std::vector<Var> negs;
  for (const auto& n : negatives) negs.push_back(tape.constant(n));
  return total_loss(tape.constant(ori), tape.constant(pos), negs, config).value()[0];
}

Var variance_hinge(Var z, double gamma, double epsilon) {
  const Tensor& vz = z.value();
  require_batch("variance_hinge", vz);
  const std::size_t n = vz.dim(0), d = vz.dim(1);
  if (n < 2) throw ContractError("variance_hinge needs at least 2 rows");
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += vz.at(i, j);
  for (auto& m : mu) m /= static_cast<double>(n);
  double loss = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += (vz.at(i, j) - mu[j]) * (vz.at(i, j) - mu[j]);
    sd[j] = std::sqrt(v / static_cast<double>(n - 1) + epsilon);
    loss += std::max(0.0, gamma - sd[j]);
  }
  loss /= static_cast<double>(d);
  Tape* tape = &z.tape();
  const auto iz = z.id();
  return tape->record(
      "variance_hinge", Tensor::scalar(loss), {z},
      [tape, iz, gamma, mu = std::move(mu), sd = std::move(sd)](const Tensor& g,
                                                                std::span<Tensor* const> gi) {
        const Tensor& vz = tape->value(iz);
        const std::size_t n = vz.dim(0), d = vz.dim(1);
        for (std::size_t j = 0; j < d; ++j) {
          if (!(gamma - sd[j] > 0.0)) continue;
          const double c = -g[0] / (static_cast<double>(d) * sd[j] * static_cast<double>(n - 1));
          for (std::size_t i = 0; i < n; ++i) gi[0]->at(i, j) += c * (vz.at(i, j) - mu[j]);
        }
      });
}

Var vicreg_loss(Var a, Var b, const VicregConfig& config) {
  const Var invariance = mean(square(sub(a, b)));
  const Var variance =
      add(variance_hinge(a, config.gamma, config.epsilon), variance_hinge(b, config.gamma, config.epsilon));
  const Var covariance = add(cov_penalty(a), cov_penalty(b));
  return add(add(scale(invariance, config.invariance_weight), scale(variance, config.variance_weight)),
             scale(covariance, config.covariance_weight));
}

}  // namespace eihi
