// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eihi/backbone.hpp"
#include "eihi/synthdata.hpp"
#include "eihi/trainer.hpp"

namespace eihi {

// Per-dimension change magnitude, in percent of the sample embedding norm.
using SensitivityVector = std::vector<double>;

// p[j] = |z_sel[j] - z_obj[j]| / ||z_sel|| * 100. Empty when ||z_sel|| = 0,
// which marks a degenerate pair.
SensitivityVector change_magnitude(std::span<const double> z_sel, std::span<const double> z_obj);

enum class SensitivityRule {
  CumulativeMass,  // minimal prefix holding >= 90% of the total magnitude
  TopDimensions,   // the ceil(90%) largest dimensions
};

std::string to_string(SensitivityRule rule);
SensitivityRule sensitivity_rule_from_string(const std::string& name);

inline constexpr double kSensitiveShare = 0.9;

// Per-pair keep vector: 0 for sensitive dimensions, 1 otherwise. An empty or
// all-zero p keeps everything.
PruneIndicator sensitivity_indicator(const SensitivityVector& p, std::size_t d,
                                     SensitivityRule rule = SensitivityRule::CumulativeMass);

// Elementwise sum of per-pair indicators (I_guid).
std::vector<std::size_t> guidance_vote(std::span<const PruneIndicator> indicators);

// Keep flags from I_guid: a dimension survives unless every pair marked it.
PruneIndicator keep_from_vote(std::span<const std::size_t> votes);

struct GuidancePair {
  std::size_t id = 0;
  SamplePtr sel;
  Tensor obj;                       // sel with background replaced by fill
  std::vector<std::uint8_t> mask;   // h x w, 1 = object
  double fill = 0.0;
};

std::vector<GuidancePair> build_guidance_pairs(std::span<const SamplePtr> samples,
                                               std::span<const std::vector<std::uint8_t>> masks,
                                               double fill = 0.0);

// One sample per class, picked by seeded key, masked with its generator mask.
std::vector<GuidancePair> ground_truth_pairs(const SampleSet& pool, std::uint64_t seed,
                                             double fill = 0.0);

struct GuidanceReport {
  std::vector<SensitivityVector> magnitudes;  // empty entry = degenerate pair
  std::vector<PruneIndicator> per_pair;
  std::vector<std::size_t> votes;             // I_guid
  PruneIndicator keep;
  std::vector<std::size_t> eliminated;

  nlohmann::json to_json() const;  // indicator export
};

GuidanceReport compute_guidance(const BackboneParams& backbone, std::span<const GuidancePair> pairs,
                                SensitivityRule rule = SensitivityRule::CumulativeMass);

// Guidance-pair file: JSON listing sel rasters (PPM) and masks (PGM, 0/255).
void write_guidance_file(const std::filesystem::path& dir, std::span<const GuidancePair> pairs);
std::vector<GuidancePair> read_guidance_file(const std::filesystem::path& file);

// |d(top logit)/d(pixel)|, max over channels, scaled so the maximum is 1.
Tensor saliency_map(const BackboneParams& backbone, const Discriminator& discriminator,
                    const PruneIndicator* keep, const Tensor& image);

// Mean absolute Pearson correlation of each embedding dimension with the
// background factor, split by elimination.
struct AlignmentReport {
  double eliminated = 0.0;
  double retained = 0.0;
  std::size_t eliminated_count = 0;
  std::vector<double> per_dimension;

  nlohmann::json to_json() const;
};

AlignmentReport background_alignment(const BackboneParams& backbone, const SampleSet& samples,
                                     const PruneIndicator& keep);

}  // namespace eihi
