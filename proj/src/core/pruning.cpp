// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "eihi/autograd.hpp"
#include "eihi/checkpoint.hpp"
#include "eihi/error.hpp"
#include "eihi/image_io.hpp"
#include "eihi/rng.hpp"

namespace eihi {

using nlohmann::json;
namespace fs = std::filesystem;

SensitivityVector change_magnitude(std::span<const double> z_sel, std::span<const double> z_obj) {
  if (z_sel.size() != z_obj.size())
    throw ContractError("change_magnitude: embeddings have " + std::to_string(z_sel.size()) +
                        " and " + std::to_string(z_obj.size()) + " dimensions");
  double sq = 0.0;
  for (double v : z_sel) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm == 0.0) return {};
  SensitivityVector p(z_sel.size());
  for (std::size_t j = 0; j < p.size(); ++j) p[j] = std::abs(z_sel[j] - z_obj[j]) / norm * 100.0;
  return p;
}

std::string to_string(SensitivityRule rule) {
  return rule == SensitivityRule::CumulativeMass ? "cumulative_mass" : "top_dimensions";
}

SensitivityRule sensitivity_rule_from_string(const std::string& name) {
  if (name == "cumulative_mass") return SensitivityRule::CumulativeMass;
  if (name == "top_dimensions") return SensitivityRule::TopDimensions;
  throw ConfigError("unknown sensitivity rule '" + name +
                    "' (expected cumulative_mass or top_dimensions)");
}

PruneIndicator sensitivity_indicator(const SensitivityVector& p, std::size_t d,
                                     SensitivityRule rule) {
  PruneIndicator keep(d, 1);
  if (p.empty()) return keep;  // degenerate pair
  if (p.size() != d)
    throw ContractError("sensitivity vector has " + std::to_string(p.size()) +
                        " entries, expected " + std::to_string(d));
  for (double v : p)
    if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError("sensitivity entries must be finite and nonnegative");

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double total = 0.0;
  for (auto j : order) total += p[j];
  if (total == 0.0) return keep;

  if (rule == SensitivityRule::TopDimensions) {
    const auto k = static_cast<std::size_t>(std::ceil(kSensitiveShare * static_cast<double>(d) - 1e-9));
    for (std::size_t i = 0; i < k; ++i) keep[order[i]] = 0;
    return keep;
  }
  // Relative slack absorbs rounding in the running sum, so exact shares such
  // as 9 of 10 equal entries meet the bound.
  const double bound = kSensitiveShare * total * (1.0 - 1e-12);
  double cum = 0.0;
  for (auto j : order) {
    keep[j] = 0;
    cum += p[j];
    if (cum >= bound) break;
  }
  return keep;
}

std::vector<std::size_t> guidance_vote(std::span<const PruneIndicator> indicators) {
  if (indicators.empty()) throw ContractError("guidance_vote needs at least one pair");
  const std::size_t d = indicators[0].size();
  std::vector<std::size_t> votes(d, 0);
  for (std::size_t k = 0; k < indicators.size(); ++k) {
    if (indicators[k].size() != d)
      throw ContractError("indicator " + std::to_string(k) + " has " +
                          std::to_string(indicators[k].size()) + " dimensions, expected " +
                          std::to_string(d));
    for (std::size_t j = 0; j < d; ++j) votes[j] += indicators[k][j] ? 1 : 0;
  }
  return votes;
}

PruneIndicator keep_from_vote(std::span<const std::size_t> votes) {
  PruneIndicator keep(votes.size());
  for (std::size_t j = 0; j < votes.size(); ++j) keep[j] = votes[j] > 0 ? 1 : 0;
  return keep;
}

std::vector<GuidancePair> build_guidance_pairs(std::span<const SamplePtr> samples,
                                               std::span<const std::vector<std::uint8_t>> masks,
                                               double fill) {
  if (samples.size() != masks.size())
    throw ContractError("build_guidance_pairs: " + std::to_string(samples.size()) + " samples but " +
                        std::to_string(masks.size()) + " masks");
  std::vector<GuidancePair> out;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Tensor& img = samples[k]->image;
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (masks[k].size() != h * w)
      throw ShapeError("guidance pair " + std::to_string(k) + ": mask has " +
                       std::to_string(masks[k].size()) + " pixels, image is " + std::to_string(h) +
                       "x" + std::to_string(w));
    if (std::none_of(masks[k].begin(), masks[k].end(), [](std::uint8_t m) { return m != 0; }))
      throw ContractError("guidance pair " + std::to_string(k) + ": mask selects no object pixels");
    GuidancePair pair;
    pair.id = k;
    pair.sel = samples[k];
    pair.mask.resize(h * w);
    for (std::size_t i = 0; i < h * w; ++i) pair.mask[i] = masks[k][i] ? 1 : 0;
    pair.fill = fill;
    pair.obj = img;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h * w; ++i)
        if (!pair.mask[i]) pair.obj[ch * h * w + i] = fill;
    out.push_back(std::move(pair));
  }
  return out;
}

std::vector<GuidancePair> ground_truth_pairs(const SampleSet& pool, std::uint64_t seed, double fill) {
  std::map<int, SamplePtr> chosen;
  std::map<int, std::uint64_t> best_key;
  for (const auto& s : pool) {
    const auto key = CounterRng::derive(seed, s->id);
    auto it = best_key.find(s->class_label);
    if (it == best_key.end() || key < it->second) {
      best_key[s->class_label] = key;
      chosen[s->class_label] = s;
    }
  }
  if (chosen.empty()) throw ContractError("no samples to draw guidance pairs from");
  std::vector<SamplePtr> samples;
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& [c, s] : chosen) {
    if (s->object_mask.empty())
      throw ContractError("sample " + std::to_string(s->id) + " carries no ground-truth mask");
    samples.push_back(s);
    masks.push_back(s->object_mask);
  }
  return build_guidance_pairs(samples, masks, fill);
}

json GuidanceReport::to_json() const {
  return {{"i_guid", votes}, {"eliminated", eliminated}, {"keep", keep},
          {"pairs", per_pair.size()}};
}

GuidanceReport compute_guidance(const BackboneParams& backbone, std::span<const GuidancePair> pairs,
                                SensitivityRule rule) {
  if (pairs.empty()) throw ContractError("no guidance pairs");
  const std::size_t d = backbone.embedding_dim();
  std::vector<Tensor> images;
  for (const auto& p : pairs) {
    images.push_back(p.sel->image);
    images.push_back(p.obj);
  }
  const Tensor z = forward_backbone(backbone, stack(images));
  GuidanceReport r;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const std::span<const double> sel(z.data() + 2 * k * d, d), obj(z.data() + (2 * k + 1) * d, d);
    r.magnitudes.push_back(change_magnitude(sel, obj));
    r.per_pair.push_back(sensitivity_indicator(r.magnitudes.back(), d, rule));
  }
  r.votes = guidance_vote(r.per_pair);
  r.keep = keep_from_vote(r.votes);
  for (std::size_t j = 0; j < d; ++j)
    if (!r.keep[j]) r.eliminated.push_back(j);
  return r;
}

namespace {

std::string numbered(const char* stem, std::size_t id, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.%s", stem, id, ext);
  return buf;
}

}  // namespace

void write_guidance_file(const fs::path& dir, std::span<const GuidancePair> pairs) {
  fs::create_directories(dir);
  json entries = json::array();
  for (const auto& p : pairs) {
    const std::size_t h = p.sel->image.dim(1), w = p.sel->image.dim(2);
    const auto sel = numbered("sel", p.id, "ppm");
    const auto mask = numbered("mask", p.id, "pgm");
    write_file_bytes(dir / sel, encode_ppm(tensor_to_raster(p.sel->image)));
    write_file_bytes(dir / mask, encode_pgm(mask_to_raster(p.mask, h, w)));
    entries.push_back({{"id", p.id}, {"sel", sel}, {"mask", mask}, {"fill", p.fill},
                       {"class", p.sel->class_label}, {"sample_id", p.sel->id}});
  }
  write_file_bytes(dir / "guidance.json", json{{"pairs", entries}}.dump(2));
}

std::vector<GuidancePair> read_guidance_file(const fs::path& file) {
  json doc;
  try {
    doc = json::parse(read_file_bytes(file));
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  const fs::path base = file.parent_path();
  std::vector<GuidancePair> out;
  try {
    for (const auto& e : doc.at("pairs")) {
      Sample s;
      s.id = e.value("sample_id", e.at("id").get<std::size_t>());
      s.class_label = e.value("class", 0);
      s.image = raster_to_tensor(read_ppm(base / e.at("sel").get<std::string>()));
      const auto mask_path = base / e.at("mask").get<std::string>();
      const auto mask_raster = read_pgm(mask_path);
      if (mask_raster.width != s.image.dim(2) || mask_raster.height != s.image.dim(1))
        throw ShapeError(mask_path.string() + ": mask size differs from its image");
      const auto mask = raster_to_mask(mask_raster, mask_path.string());
      const SamplePtr sp = std::make_shared<const Sample>(std::move(s));
      auto built = build_guidance_pairs(std::span<const SamplePtr>(&sp, 1),
                                        std::span<const std::vector<std::uint8_t>>(&mask, 1),
                                        e.value("fill", 0.0));
      built[0].id = e.at("id").get<std::size_t>();
      out.push_back(std::move(built[0]));
    }
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  return out;
}

Tensor saliency_map(const BackboneParams& backbone, const Discriminator& discriminator,
                    const PruneIndicator* keep, const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("saliency_map expects a c x h x w image");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tape tape;
  std::vector<Var> bp, dp;
  for (const auto& t : backbone.tensors) bp.push_back(tape.constant(t));
  for (const auto& t : discriminator.params) dp.push_back(tape.constant(t));
  Var x = tape.parameter(image.reshaped({1, c, h, w}));
  Var z = forward_backbone(backbone.spec, bp, x);
  if (keep) {
    if (keep->size() != backbone.embedding_dim())
      throw ContractError("keep_dims length differs from the embedding dimension");
    const auto cols = kept_dimensions(*keep);
    if (cols.empty()) throw ContractError("keep_dims eliminates every embedding dimension");
    z = select_columns(z, cols);
  }
  Var logits = discriminator.forward(tape, dp, z);
  std::size_t top = 0;
  for (std::size_t j = 1; j < logits.value().dim(1); ++j)
    if (logits.value().at(0, j) > logits.value().at(0, top)) top = j;
  tape.backward(pick(logits, 0, top));
  const Tensor& g = tape.grad(x);
  Tensor map({h, w}, 0.0);
  double mx = 0.0;
  for (std::size_t i = 0; i < h * w; ++i) {
    double v = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) v = std::max(v, std::abs(g[ch * h * w + i]));
    map[i] = v;
    mx = std::max(mx, v);
  }
  if (mx > 0.0)
    for (std::size_t i = 0; i < h * w; ++i) map[i] /= mx;
  return map;
}

json AlignmentReport::to_json() const {
  return {{"eliminated", eliminated}, {"retained", retained},
          {"eliminated_count", eliminated_count}, {"per_dimension", per_dimension}};
}

AlignmentReport background_alignment(const BackboneParams& backbone, const SampleSet& samples,
                                     const PruneIndicator& keep) {
  if (samples.size() < 2) throw ContractError("alignment needs at least two samples");
  const std::size_t d = backbone.embedding_dim();
  if (keep.size() != d) throw ContractError("keep_dims length differs from the embedding dimension");
  std::vector<double> f;
  for (const auto& s : samples) {
    if (!s->background_factor)
      throw ContractError("sample " + std::to_string(s->id) + " has no background factor");
    f.push_back(*s->background_factor);
  }
  const Tensor z = embed_all(backbone, stack_images(samples));
  const std::size_t n = samples.size();
  const double fm = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(n);
  AlignmentReport r;
  double sum_e = 0.0, sum_r = 0.0;
  std::size_t cnt_r = 0;
  for (std::size_t j = 0; j < d; ++j) {
    double zm = 0.0;
    for (std::size_t i = 0; i < n; ++i) zm += z[i * d + j];
    zm /= static_cast<double>(n);
    double szf = 0.0, szz = 0.0, sff = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = z[i * d + j] - zm, b = f[i] - fm;
      szf += a * b;
      szz += a * a;
      sff += b * b;
    }
    const double corr = (szz > 0.0 && sff > 0.0) ? std::abs(szf) / std::sqrt(szz * sff) : 0.0;
    r.per_dimension.push_back(corr);
    if (keep[j]) {
      sum_r += corr;
      ++cnt_r;
    } else {
      sum_e += corr;
      ++r.eliminated_count;
    }
  }
  r.eliminated = r.eliminated_count ? sum_e / static_cast<double>(r.eliminated_count) : 0.0;
  r.retained = cnt_r ? sum_r / static_cast<double>(cnt_r) : 0.0;
  return r;
}

}  // namespace eihi
