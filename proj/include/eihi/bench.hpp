// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eihi/backbone.hpp"
#include "eihi/pruning.hpp"
#include "eihi/synthdata.hpp"
#include "eihi/trainer.hpp"

namespace eihi {

enum class Method { Erm, EihiStageOne, EihiFull, EihiNoCov, VicregBaseline };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct FolderSource {
  std::filesystem::path root;
  std::size_t height = 32;
  std::size_t width = 32;
};

// Where eihi_full gets its guidance pairs: a pair file, or the generator's
// own object masks (one pair per class, drawn from the training pool).
struct GuidanceSource {
  std::optional<std::filesystem::path> file;
  bool ground_truth = false;
  double fill = 0.0;  // ground-truth pairs only; a pair file carries its own
  SensitivityRule rule = SensitivityRule::CumulativeMass;
};

// Vicreg batch at paper scale; the desk default below stands in for it.
inline constexpr std::size_t kPaperVicregBatch = 990;

struct ExperimentConfig {
  std::string dataset_name = "synthetic";  // table labels
  std::string shift_name;
  std::optional<DatasetSpec> dataset;  // exactly one of dataset / folder
  std::optional<FolderSource> folder;
  ShiftConfig shift;
  Method method = Method::EihiStageOne;
  std::size_t embedding_dim = 64;
  std::optional<BackboneSpec> backbone;  // overrides the standard backbone
  TrainConfig train;
  std::optional<GuidanceSource> guidance;
  bool force_keep_all = false;   // eihi_full with pruning disabled
  bool alignment = true;         // background alignment of eliminated dims
  std::size_t vicreg_batch_size = 128;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t workers = 1;
  std::optional<std::filesystem::path> out_dir;  // per-seed artifacts

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

// Standard shift settings on D domains: the last `targets` domains are held out.
ShiftConfig diversity_shift(std::size_t num_domains, std::size_t targets);
// Same hold-out, and every class keeps `ratio` of its primary-domain count in
// each other source domain; class c's primary is source domain c mod |source|.
ShiftConfig correlation_shift(std::size_t num_classes, std::size_t num_domains,
                              std::size_t targets, Ratio ratio);
ShiftConfig mixed_shift();

struct SeedResult {
  std::uint64_t seed = 0;
  std::optional<double> accuracy;  // target domains
  std::optional<std::string> error;
  std::optional<double> pre_prune_accuracy;  // eihi_full
  std::optional<std::size_t> eliminated_count;
  std::vector<std::size_t> eliminated;
  std::optional<AlignmentReport> alignment;
  TrainTrace train_trace;  // stage one, or ERM
  std::optional<TrainTrace> discriminator_trace;
  std::optional<TrainTrace> retrain_trace;
  double seconds = 0.0;

  nlohmann::json to_json() const;
  static SeedResult from_json(const nlohmann::json& j);
};

struct ExperimentReport {
  std::string dataset;
  std::string shift;
  std::string method;
  std::vector<SeedResult> seeds;
  std::optional<double> mean;  // over completed seeds
  std::optional<double> std;   // n - 1 divisor; absent below two seeds
  bool partial = false;
  nlohmann::json metadata = nlohmann::json::object();

  std::vector<double> accuracies() const;
  nlohmann::json to_json() const;
  static ExperimentReport from_json(const nlohmann::json& j);
};

// Mean and n-1 standard deviation; std is absent for fewer than two values.
std::pair<std::optional<double>, std::optional<double>> mean_std(std::span<const double> values);

// Stage-two seed shared by the pre- and post-pruning discriminators of a run.
std::uint64_t discriminator_seed(std::uint64_t seed);

// Data, split and backbone shape of one seed, as run_seed builds them.
struct PreparedRun {
  SampleSet data;
  DomainSplit split;
  BackboneSpec backbone;
  std::size_t num_classes = 0;
};
PreparedRun prepare_run(const ExperimentConfig& config, std::uint64_t seed);

SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed);
ExperimentReport run_experiment(const ExperimentConfig& config);

struct Table {
  std::string csv;
  std::string markdown;
};

// One row per report; accuracies in percent to two decimals.
Table export_table(std::span<const ExperimentReport> reports);

// RFC 4180 field quoting.
std::string csv_field(const std::string& value);

// Experiment grid: {"defaults": {...}, "experiments": [{...}, ...]}; each
// experiment is merge-patched over the defaults.
std::vector<ExperimentConfig> grid_from_json(const nlohmann::json& j);
// Desk grid: 8:2, 7:3 and 5:1 for every method, plus ERM on the mixed split.
nlohmann::json default_grid_json();

}  // namespace eihi
