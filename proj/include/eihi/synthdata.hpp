// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "eihi/tensor.hpp"

namespace eihi {

/// Rendering knobs of the synthetic generator. Foreground is a class glyph
/// drawn in a fixed color; everything else is background driven by the domain.
struct RenderParams {
  double background_contrast = 0.3;  // brightness gap between first and last domain
  double hue_amplitude = 0.12;       // zero-sum chroma tint carried by the background
  double texture_amplitude = 1.0;    // stripe modulation of the tint, relative to it
  double texture_period = 4.0;       // stripe period in pixels
  double foreground_level = 0.95;
  double factor_jitter = 0.25;       // per-sample jitter of the factor, in domain steps
  double glyph_jitter = 0.10;        // max glyph offset as a fraction of height

  nlohmann::json to_json() const;
  static RenderParams from_json(const nlohmann::json& j);
};

struct DatasetSpec {
  std::size_t num_classes = 8;
  std::size_t num_domains = 10;
  std::size_t samples_per_cell = 60;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  double noise = 0.05;
  std::uint64_t seed = 0;
  RenderParams render;

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

inline constexpr std::size_t kMaxGlyphClasses = 10;
inline constexpr std::size_t kMinGlyphExtent = 16;

struct Sample {
  std::size_t id = 0;
  Tensor image;  // c x h x w in [0, 1]
  int class_label = 0;
  int domain_label = 0;
  std::optional<double> background_factor;  // absent for ingested photos
  std::vector<std::uint8_t> object_mask;    // h x w, 1 = object; empty when unknown
};

using SamplePtr = std::shared_ptr<const Sample>;
using SampleSet = std::vector<SamplePtr>;

/// Exactly C * D * samples_per_cell samples ordered by (class, domain, index);
/// sample id = position in that order. Deterministic under spec.seed.
SampleSet generate_dataset(const DatasetSpec& spec);

/// Renders one sample; exposed so tests can regenerate single cells.
Sample render_sample(const DatasetSpec& spec, int class_label, int domain_label,
                     std::size_t index_in_cell);

/// Binary glyph for `class_label` centred at (cy, cx) with half-extent `radius`.
std::vector<std::uint8_t> render_glyph(int class_label, std::size_t height, std::size_t width,
                                       double cy, double cx, double radius);

/// Positive rational ratio, e.g. 1/5.
struct Ratio {
  std::uint64_t num = 1;
  std::uint64_t den = 1;
};

struct ShiftConfig {
  std::vector<int> source_domains;
  std::vector<int> target_domains;
  /// One primary domain shared by every class ...
  std::optional<int> primary_domain;
  /// ... or one per class (index = class label). At most one of the two is set.
  std::vector<int> class_primary_domains;
  std::optional<Ratio> secondary_ratio;
  /// Train and test both drawn from every domain (the no-shift benchmark).
  bool mixed = false;
  double test_fraction = 0.1;        // mixed mode only
  double validation_fraction = 0.1;  // of the source samples, per cell
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ShiftConfig from_json(const nlohmann::json& j);
};

struct DomainSplit {
  SampleSet train;
  SampleSet validation;
  SampleSet test;
};

DomainSplit split_domains(const SampleSet& samples, const ShiftConfig& shift);

/// Reads root/<class>/<domain>/<file>.ppm; labels follow sorted directory
/// names (domains are numbered over the union of names across classes).
SampleSet load_image_folder(const std::filesystem::path& root, std::size_t height,
                            std::size_t width);

/// Writes manifest.json plus rasters/<id>.ppm (and masks/<id>.pgm when known).
/// Rasters are quantized to 8 bits.
void write_manifest(const std::filesystem::path& dir, const SampleSet& samples,
                    const std::optional<DatasetSpec>& spec);
SampleSet read_manifest(const std::filesystem::path& dir);

/// Per-class sample counts.
std::vector<std::size_t> class_counts(const SampleSet& samples, std::size_t num_classes);
std::size_t count_classes(const SampleSet& samples);

/// Stack sample images into an n x c x h x w batch.
Tensor stack_images(const SampleSet& samples);

}  // namespace eihi
