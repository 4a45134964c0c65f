// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "eihi/autograd.hpp"
#include "eihi/backbone.hpp"
#include "eihi/losses.hpp"
#include "eihi/optimizer.hpp"
#include "eihi/synthdata.hpp"

namespace eihi {

// Per-dimension keep flags: 1 keeps the embedding coordinate, 0 eliminates it.
using PruneIndicator = std::vector<std::uint8_t>;

std::vector<std::size_t> kept_dimensions(const PruneIndicator& keep);
// Removes eliminated columns from an n x d matrix.
Tensor select_kept(const Tensor& features, const PruneIndicator& keep);

struct DiscriminatorConfig {
  std::vector<std::size_t> hidden{128};  // empty = linear
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer{OptimizerKind::Momentum, 0.02};
  bool standardize = true;  // z-score inputs with train-set statistics

  void validate() const;
  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& j);
};

enum class StageOneObjective { EiHi, Vicreg };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;  // n
  std::size_t negatives = 9;    // M
  OptimizerConfig optimizer;    // plain SGD, alpha = 0.01
  LossConfig loss;
  StageOneObjective objective = StageOneObjective::EiHi;
  VicregConfig vicreg;
  std::uint64_t seed = 0;
  std::size_t probe_every = 5;       // validation probe cadence, in epochs
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::optional<std::filesystem::path> checkpoint_dir;
  DiscriminatorConfig probe{{}, 30, 64, {OptimizerKind::Momentum, 0.05}, true};
  DiscriminatorConfig discriminator;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainTrace {
  std::vector<double> loss;                               // mean batch loss per epoch
  std::vector<std::optional<double>> validation_accuracy;  // null where not probed
  std::size_t best_epoch = 0;
  std::vector<double> seconds;  // wall clock per epoch
  std::size_t optimizer_steps = 0;

  nlohmann::json to_json() const;
  static TrainTrace from_json(const nlohmann::json& j);
};

// Index of the highest probed accuracy, earliest on ties; the last epoch when
// nothing was probed.
std::size_t best_epoch_of(std::span<const std::optional<double>> accuracy);

// Fully connected head: optional z-scoring, then dense layers with ReLU between.
struct Discriminator {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> hidden;
  Tensor shift;  // subtracted per input dimension
  Tensor scale;  // multiplied after the shift
  std::vector<Tensor> params;  // weight (out x in), bias per layer

  Var forward(Tape& tape, std::span<const Var> layer_params, Var features) const;
  Tensor logits(const Tensor& features) const;
  std::vector<int> predict(const Tensor& features) const;

  nlohmann::json spec_json() const;
  void save(const std::filesystem::path& path) const;
  static Discriminator load(const std::filesystem::path& path);
};

Discriminator init_discriminator(std::size_t input_dim, std::size_t num_classes,
                                 std::span<const std::size_t> hidden, std::uint64_t seed);

struct LabeledFeatures {
  Tensor x;  // n x d
  std::vector<int> y;
};

// Embeddings of frozen backbones, keyed by (parameter checksum, sample id).
class EmbeddingCache {
 public:
  Tensor embed(const BackboneParams& params, const SampleSet& samples);
  std::size_t size() const;
  std::size_t hits() const { return hits_; }

 private:
  struct Key {
    std::uint64_t checksum;
    std::size_t id;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };
  mutable std::mutex mutex_;
  std::unordered_map<Key, std::vector<double>, KeyHash> rows_;
  std::size_t hits_ = 0;
};

LabeledFeatures features_of(const BackboneParams& params, const SampleSet& samples,
                            const PruneIndicator* keep, EmbeddingCache* cache);

struct DiscriminatorResult {
  Discriminator discriminator;
  TrainTrace trace;
};

// Cross-entropy training on fixed features; returns the validation-best epoch.
DiscriminatorResult train_discriminator_on_features(const LabeledFeatures& train,
                                                    const LabeledFeatures& validation,
                                                    std::size_t num_classes,
                                                    const DiscriminatorConfig& config,
                                                    std::uint64_t seed);

// Stage two: the backbone is frozen, eliminated dimensions are removed from
// the embeddings before they reach the discriminator.
DiscriminatorResult train_discriminator(const BackboneParams& backbone, const SampleSet& train,
                                        const SampleSet& validation, const PruneIndicator* keep,
                                        std::size_t num_classes, const DiscriminatorConfig& config,
                                        std::uint64_t seed, EmbeddingCache* cache = nullptr);

struct EvalResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  nlohmann::json to_json() const;
};

EvalResult evaluate_features(const Discriminator& discriminator, const LabeledFeatures& data);
EvalResult evaluate(const BackboneParams& backbone, const Discriminator& discriminator,
                    const PruneIndicator* keep, const SampleSet& samples,
                    EmbeddingCache* cache = nullptr);

struct StageOneResult {
  BackboneParams params;
  TrainTrace trace;
};

// Contrastive feature learning over minimal learning elements. Returns the
// parameters of the validation-best probed epoch.
StageOneResult train_stage_one(const SampleSet& train, const SampleSet& validation,
                               const BackboneSpec& spec, const TrainConfig& config);

struct ErmResult {
  BackboneParams params;
  Discriminator head;
  TrainTrace trace;
};

// Plain cross-entropy baseline: backbone and head trained jointly.
ErmResult train_erm(const SampleSet& train, const SampleSet& validation, const BackboneSpec& spec,
                    const TrainConfig& config);

}  // namespace eihi
