// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>

#include "eihi/checkpoint.hpp"
#include "eihi/error.hpp"
#include "eihi/image_io.hpp"
#include "eihi/rng.hpp"

namespace eihi {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// specs

json RenderParams::to_json() const {
  return {{"background_contrast", background_contrast}, {"hue_amplitude", hue_amplitude},
          {"texture_amplitude", texture_amplitude},     {"texture_period", texture_period},
          {"foreground_level", foreground_level},       {"factor_jitter", factor_jitter},
          {"glyph_jitter", glyph_jitter}};
}

RenderParams RenderParams::from_json(const json& j) {
  RenderParams r;
  r.background_contrast = j.value("background_contrast", r.background_contrast);
  r.hue_amplitude = j.value("hue_amplitude", r.hue_amplitude);
  r.texture_amplitude = j.value("texture_amplitude", r.texture_amplitude);
  r.texture_period = j.value("texture_period", r.texture_period);
  r.foreground_level = j.value("foreground_level", r.foreground_level);
  r.factor_jitter = j.value("factor_jitter", r.factor_jitter);
  r.glyph_jitter = j.value("glyph_jitter", r.glyph_jitter);
  return r;
}

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (num_classes > kMaxGlyphClasses)
    throw ConfigError("at most " + std::to_string(kMaxGlyphClasses) + " glyph classes supported");
  if (num_domains < 2) throw ConfigError("dataset needs at least 2 domains");
  if (samples_per_cell < 1) throw ConfigError("samples_per_cell must be at least 1");
  if (channels != 3) throw ConfigError("synthetic rasters have 3 channels");
  if (height < kMinGlyphExtent || width < kMinGlyphExtent)
    throw ConfigError("image " + std::to_string(height) + "x" + std::to_string(width) +
                      " too small to render class glyphs (minimum " +
                      std::to_string(kMinGlyphExtent) + ")");
  if (!(noise >= 0.0)) throw ConfigError("noise level must be nonnegative");
  if (!(render.texture_period > 0.0)) throw ConfigError("texture_period must be positive");
}

json DatasetSpec::to_json() const {
  return {{"num_classes", num_classes}, {"num_domains", num_domains},
          {"samples_per_cell", samples_per_cell}, {"channels", channels},
          {"height", height}, {"width", width}, {"noise", noise}, {"seed", seed},
          {"render", render.to_json()}};
}

DatasetSpec DatasetSpec::from_json(const json& j) {
  try {
    DatasetSpec s;
    s.num_classes = j.value("num_classes", s.num_classes);
    s.num_domains = j.value("num_domains", s.num_domains);
    s.samples_per_cell = j.value("samples_per_cell", s.samples_per_cell);
    s.channels = j.value("channels", s.channels);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
    if (j.contains("render")) s.render = RenderParams::from_json(j.at("render"));
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// rendering

std::vector<std::uint8_t> render_glyph(int class_label, std::size_t height, std::size_t width,
                                       double cy, double cx, double radius) {
  std::vector<std::uint8_t> mask(height * width, 0);
  const double r = radius;
  const double s = std::max(1.0, 0.3 * r);  // stroke half-width
  const double diag = s * std::numbers::sqrt2;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double ax = std::abs(dx), ay = std::abs(dy);
      const double box = std::max(ax, ay);
      const double dist = std::hypot(dx, dy);
      bool on = false;
      switch (class_label) {
        case 0: on = ay <= s && ax <= r; break;                                   // bar
        case 1: on = ax <= s && ay <= r; break;                                   // pillar
        case 2: on = (ay <= s && ax <= r) || (ax <= s && ay <= r); break;         // plus
        case 3: on = dist <= r; break;                                            // disc
        case 4: on = dist <= r && dist >= 0.45 * r; break;                         // ring
        case 5: on = box <= r && (std::abs(dx - dy) <= diag || std::abs(dx + dy) <= diag); break;
        case 6: on = box <= r && dx * dy > 0; break;                               // checker
        case 7: on = ay <= r && ax <= (dy + r) / 2.0; break;                      // triangle
        case 8: on = dist <= r && dy <= 0.0; break;                                // dome
        case 9: on = (ax <= r && dy >= -r && dy <= -r + 2 * s) || (ax <= s && ay <= r); break;
        default: throw ConfigError("no glyph for class " + std::to_string(class_label));
      }
      mask[y * width + x] = on ? 1 : 0;
    }
  return mask;
}

Sample render_sample(const DatasetSpec& spec, int class_label, int domain_label,
                     std::size_t index_in_cell) {
  const std::size_t C = spec.num_classes, D = spec.num_domains;
  const std::size_t h = spec.height, w = spec.width;
  const auto& rp = spec.render;
  Sample smp;
  smp.id = (static_cast<std::size_t>(class_label) * D + static_cast<std::size_t>(domain_label)) *
               spec.samples_per_cell +
           index_in_cell;
  (void)C;
  smp.class_label = class_label;
  smp.domain_label = domain_label;
  CounterRng rng(CounterRng::derive(spec.seed, smp.id));

  const double level = static_cast<double>(domain_label) / static_cast<double>(D - 1);
  const double step = 1.0 / static_cast<double>(D - 1);
  const double factor =
      std::clamp(level + rp.factor_jitter * step * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
  smp.background_factor = factor;

  const auto max_shift = static_cast<std::int64_t>(std::floor(rp.glyph_jitter * static_cast<double>(h)));
  const auto span = static_cast<std::uint64_t>(2 * max_shift + 1);
  const double oy = static_cast<double>(static_cast<std::int64_t>(rng.below(span)) - max_shift);
  const double ox = static_cast<double>(static_cast<std::int64_t>(rng.below(span)) - max_shift);
  const double radius = 0.3 * static_cast<double>(std::min(h, w));
  smp.object_mask = render_glyph(class_label, h, w, static_cast<double>(h) / 2.0 + oy,
                                 static_cast<double>(w) / 2.0 + ox, radius);

  // Brightness follows the domain level; chroma tint and stripe texture follow
  // the jittered factor. The tint sums to zero over channels, so the mean of a
  // background pixel is its brightness.
  const double brightness = 0.5 + rp.background_contrast * (level - 0.5);
  const double hue = 2.0 * std::numbers::pi * 0.8 * factor;
  const double orient = 0.75 * std::numbers::pi * factor;
  const double phase = 2.0 * std::numbers::pi * rng.uniform();
  const double kx = 2.0 * std::numbers::pi / rp.texture_period * std::cos(orient);
  const double ky = 2.0 * std::numbers::pi / rp.texture_period * std::sin(orient);
  double tint[3];
  for (int ch = 0; ch < 3; ++ch)
    tint[ch] = rp.hue_amplitude * std::cos(hue + 2.0 * std::numbers::pi * ch / 3.0);

  smp.image = Tensor({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const bool object = smp.object_mask[y * w + x] != 0;
      const double tex = std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y) + phase);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double v = object ? rp.foreground_level
                          : brightness + tint[ch] * (1.0 + rp.texture_amplitude * tex);
        if (spec.noise > 0.0) v += spec.noise * rng.normal();
        smp.image[(ch * h + y) * w + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  return smp;
}

SampleSet generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  SampleSet out;
  out.reserve(spec.num_classes * spec.num_domains * spec.samples_per_cell);
  for (std::size_t c = 0; c < spec.num_classes; ++c)
    for (std::size_t d = 0; d < spec.num_domains; ++d)
      for (std::size_t i = 0; i < spec.samples_per_cell; ++i)
        out.push_back(std::make_shared<const Sample>(
            render_sample(spec, static_cast<int>(c), static_cast<int>(d), i)));
  return out;
}

// ---------------------------------------------------------------------------
// splitting

json ShiftConfig::to_json() const {
  json j{{"source", source_domains}, {"target", target_domains}, {"mixed", mixed},
         {"test_fraction", test_fraction}, {"validation_fraction", validation_fraction},
         {"seed", seed}};
  if (primary_domain) j["primary_domain"] = *primary_domain;
  if (!class_primary_domains.empty()) j["class_primary_domains"] = class_primary_domains;
  if (secondary_ratio) j["secondary_ratio"] = {secondary_ratio->num, secondary_ratio->den};
  return j;
}

ShiftConfig ShiftConfig::from_json(const json& j) {
  try {
    ShiftConfig s;
    s.source_domains = j.value("source", std::vector<int>{});
    s.target_domains = j.value("target", std::vector<int>{});
    if (j.contains("primary_domain") && !j.at("primary_domain").is_null())
      s.primary_domain = j.at("primary_domain").get<int>();
    s.class_primary_domains = j.value("class_primary_domains", std::vector<int>{});
    if (j.contains("secondary_ratio") && !j.at("secondary_ratio").is_null()) {
      const auto& r = j.at("secondary_ratio");
      s.secondary_ratio = Ratio{r.at(0).get<std::uint64_t>(), r.at(1).get<std::uint64_t>()};
    }
    s.mixed = j.value("mixed", false);
    s.test_fraction = j.value("test_fraction", s.test_fraction);
    s.validation_fraction = j.value("validation_fraction", s.validation_fraction);
    s.seed = j.value("seed", s.seed);
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("shift config: ") + e.what());
  }
}

namespace {

using Cell = std::pair<int, int>;  // (class, domain)

std::string cell_name(Cell c) {
  return "(class " + std::to_string(c.first) + ", domain " + std::to_string(c.second) + ")";
}

std::size_t round_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
}

}  // namespace

DomainSplit split_domains(const SampleSet& samples, const ShiftConfig& shift) {
  if (samples.empty()) throw ShiftConfigError("no samples to split");
  if (!(shift.validation_fraction >= 0.0 && shift.validation_fraction < 1.0))
    throw ShiftConfigError("validation_fraction must lie in [0, 1)");

  std::set<int> domains;
  std::set<int> classes;
  for (const auto& s : samples) {
    domains.insert(s->domain_label);
    classes.insert(s->class_label);
  }

  // Deterministic per-sample ordering key.
  auto key = [&](const SamplePtr& s) { return CounterRng::derive(shift.seed, s->id); };
  std::map<Cell, SampleSet> cells;
  for (const auto& s : samples) cells[{s->class_label, s->domain_label}].push_back(s);
  for (auto& [c, v] : cells)
    std::sort(v.begin(), v.end(), [&](const SamplePtr& a, const SamplePtr& b) {
      const auto ka = key(a), kb = key(b);
      return ka != kb ? ka < kb : a->id < b->id;
    });

  std::set<int> source, target;
  if (shift.mixed) {
    if (!(shift.test_fraction > 0.0 && shift.test_fraction < 1.0))
      throw ShiftConfigError("test_fraction must lie in (0, 1)");
    source = domains;
  } else {
    source.insert(shift.source_domains.begin(), shift.source_domains.end());
    target.insert(shift.target_domains.begin(), shift.target_domains.end());
    if (source.empty()) throw ShiftConfigError("source domain set is empty");
    if (target.empty()) throw ShiftConfigError("target domain set is empty");
    for (int d : source)
      if (target.count(d))
        throw ShiftConfigError("domain " + std::to_string(d) + " is both source and target");
    std::set<int> both = source;
    both.insert(target.begin(), target.end());
    if (both != domains)
      throw ShiftConfigError("source and target domains must cover exactly the dataset's domains");
  }
  if (shift.primary_domain && !shift.class_primary_domains.empty())
    throw ShiftConfigError("set either primary_domain or class_primary_domains, not both");
  if (shift.secondary_ratio) {
    if (shift.secondary_ratio->num == 0 || shift.secondary_ratio->den == 0)
      throw ShiftConfigError("secondary_ratio must be a positive rational");
    if (!shift.primary_domain && shift.class_primary_domains.empty())
      throw ShiftConfigError("secondary_ratio requires a primary domain");
  }
  auto primary_of = [&](int cls) -> int {
    if (shift.primary_domain) return *shift.primary_domain;
    if (static_cast<std::size_t>(cls) >= shift.class_primary_domains.size())
      throw ShiftConfigError("class_primary_domains has no entry for class " + std::to_string(cls));
    return shift.class_primary_domains[static_cast<std::size_t>(cls)];
  };

  DomainSplit out;
  for (int cls : classes) {
    const int primary = shift.secondary_ratio ? primary_of(cls) : -1;
    if (shift.secondary_ratio && !source.count(primary))
      throw ShiftConfigError("primary domain " + std::to_string(primary) + " of class " +
                             std::to_string(cls) + " is not a source domain");
    const std::size_t primary_count =
        shift.secondary_ratio ? cells[{cls, primary}].size() : 0;
    for (int dom : domains) {
      const Cell cell{cls, dom};
      SampleSet members = cells[cell];
      if (target.count(dom)) {
        out.test.insert(out.test.end(), members.begin(), members.end());
        continue;
      }
      if (shift.secondary_ratio && dom != primary) {
        const auto keep = static_cast<std::size_t>(
            (static_cast<unsigned __int128>(primary_count) * shift.secondary_ratio->num) /
            shift.secondary_ratio->den);
        if (keep == 0) throw ShiftConfigError("subsampling leaves cell " + cell_name(cell) + " empty");
        if (keep > members.size())
          throw ShiftConfigError("cell " + cell_name(cell) + " has " +
                                 std::to_string(members.size()) + " samples, ratio needs " +
                                 std::to_string(keep));
        members.resize(keep);
      }
      if (members.empty()) throw ShiftConfigError("cell " + cell_name(cell) + " is empty");
      std::size_t pos = 0;
      if (shift.mixed) {
        const std::size_t n_test = round_count(shift.test_fraction, members.size());
        if (n_test == 0 || n_test >= members.size())
          throw ShiftConfigError("cell " + cell_name(cell) + " too small for a test/train split");
        out.test.insert(out.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
        pos = n_test;
      }
      const std::size_t remaining = members.size() - pos;
      std::size_t n_val = round_count(shift.validation_fraction, remaining);
      if (n_val >= remaining) n_val = remaining - 1;
      out.validation.insert(out.validation.end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                            members.begin() + static_cast<std::ptrdiff_t>(pos + n_val));
      out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(pos + n_val),
                       members.end());
    }
  }
  auto by_id = [](const SamplePtr& a, const SamplePtr& b) { return a->id < b->id; };
  std::sort(out.train.begin(), out.train.end(), by_id);
  std::sort(out.validation.begin(), out.validation.end(), by_id);
  std::sort(out.test.begin(), out.test.end(), by_id);
  return out;
}

// ---------------------------------------------------------------------------
// ingestion and manifests

namespace {

std::vector<fs::path> sorted_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string id_name(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", id);
  return buf;
}

}  // namespace

SampleSet load_image_folder(const fs::path& root, std::size_t height, std::size_t width) {
  if (!fs::is_directory(root)) throw IoError("image folder " + root.string() + " does not exist");
  if (height == 0 || width == 0) throw ConfigError("target raster size must be positive");
  const auto class_dirs = sorted_dirs(root);
  if (class_dirs.empty()) throw IoError(root.string() + ": no class directories");
  std::set<std::string> domain_names;
  for (const auto& cd : class_dirs)
    for (const auto& dd : sorted_dirs(cd)) domain_names.insert(dd.filename().string());
  const std::vector<std::string> domain_list(domain_names.begin(), domain_names.end());

  SampleSet out;
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    std::size_t files_in_class = 0;
    for (const auto& dd : sorted_dirs(class_dirs[c])) {
      const auto dom = static_cast<int>(
          std::lower_bound(domain_list.begin(), domain_list.end(), dd.filename().string()) -
          domain_list.begin());
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dd))
        if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        Sample s;
        s.id = out.size();
        s.class_label = static_cast<int>(c);
        s.domain_label = dom;
        s.image = resize_bilinear(raster_to_tensor(read_ppm(f)), height, width);
        out.push_back(std::make_shared<const Sample>(std::move(s)));
        ++files_in_class;
      }
    }
    if (files_in_class == 0)
      throw IoError(class_dirs[c].string() + ": class directory contains no .ppm images");
  }
  return out;
}

void write_manifest(const fs::path& dir, const SampleSet& samples,
                    const std::optional<DatasetSpec>& spec) {
  fs::create_directories(dir / "rasters");
  json entries = json::array();
  for (const auto& s : samples) {
    const std::string raster = "rasters/" + id_name(s->id) + ".ppm";
    write_file_bytes(dir / raster, encode_ppm(tensor_to_raster(s->image)));
    json e{{"id", s->id}, {"class", s->class_label}, {"domain", s->domain_label}, {"raster", raster}};
    e["background_factor"] = s->background_factor ? json(*s->background_factor) : json(nullptr);
    if (!s->object_mask.empty()) {
      const std::string mask = "masks/" + id_name(s->id) + ".pgm";
      write_file_bytes(dir / mask, encode_pgm(mask_to_raster(s->object_mask, s->image.dim(1),
                                                             s->image.dim(2))));
      e["mask"] = mask;
    }
    entries.push_back(std::move(e));
  }
  json manifest{{"format", "eihi-dataset"}, {"version", 1}, {"samples", std::move(entries)}};
  manifest["spec"] = spec ? spec->to_json() : json(nullptr);
  manifest["seed"] = spec ? json(spec->seed) : json(nullptr);
  write_file_bytes(dir / "manifest.json", manifest.dump(2));
}

SampleSet read_manifest(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file_bytes(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "eihi-dataset")
    throw ParseError((dir / "manifest.json").string() + ": not a dataset manifest");
  SampleSet out;
  try {
    for (const auto& e : manifest.at("samples")) {
      Sample s;
      s.id = e.at("id").get<std::size_t>();
      s.class_label = e.at("class").get<int>();
      s.domain_label = e.at("domain").get<int>();
      if (!e.at("background_factor").is_null())
        s.background_factor = e.at("background_factor").get<double>();
      s.image = raster_to_tensor(read_ppm(dir / e.at("raster").get<std::string>()));
      if (e.contains("mask")) {
        const auto p = dir / e.at("mask").get<std::string>();
        s.object_mask = raster_to_mask(read_pgm(p), p.string());
      }
      out.push_back(std::make_shared<const Sample>(std::move(s)));
    }
  } catch (const json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  return out;
}

std::vector<std::size_t> class_counts(const SampleSet& samples, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& s : samples) {
    if (s->class_label < 0 || static_cast<std::size_t>(s->class_label) >= num_classes)
      throw ContractError("class label " + std::to_string(s->class_label) + " out of range");
    ++counts[static_cast<std::size_t>(s->class_label)];
  }
  return counts;
}

std::size_t count_classes(const SampleSet& samples) {
  int mx = -1;
  for (const auto& s : samples) mx = std::max(mx, s->class_label);
  return static_cast<std::size_t>(mx + 1);
}

Tensor stack_images(const SampleSet& samples) {
  if (samples.empty()) throw ContractError("stack_images of an empty set");
  const Shape& s = samples[0]->image.shape();
  std::vector<double> v;
  v.reserve(samples.size() * samples[0]->image.size());
  for (const auto& smp : samples) {
    if (smp->image.shape() != s) throw ShapeError("stack_images: mixed raster shapes");
    v.insert(v.end(), smp->image.values().begin(), smp->image.values().end());
  }
  return Tensor({samples.size(), s[0], s[1], s[2]}, std::move(v));
}

}  // namespace eihi
