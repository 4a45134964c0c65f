// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "eihi/checkpoint.hpp"
#include "eihi/error.hpp"
#include "eihi/rng.hpp"

namespace eihi {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kTagDiscriminator = 0xd15c0001;

const std::pair<Method, const char*> kMethodNames[] = {
    {Method::Erm, "erm"},
    {Method::EihiStageOne, "eihi_stage_one"},
    {Method::EihiFull, "eihi_full"},
    {Method::EihiNoCov, "eihi_no_cov"},
    {Method::VicregBaseline, "vicreg_baseline"},
};

template <class T>
std::optional<T> opt_value(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string to_string(Method method) {
  for (const auto& [m, name] : kMethodNames)
    if (m == method) return name;
  return "unknown";
}

Method method_from_string(const std::string& name) {
  for (const auto& [m, n] : kMethodNames)
    if (name == n) return m;
  throw ConfigError("unknown method '" + name +
                    "' (expected erm, eihi_stage_one, eihi_full, eihi_no_cov, vicreg_baseline)");
}

// ---------------------------------------------------------------------------
// config

void ExperimentConfig::validate() const {
  if (dataset.has_value() == folder.has_value())
    throw ConfigError("experiment needs exactly one of 'dataset' or 'folder'");
  if (dataset) dataset->validate();
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds must be distinct");
  if (workers == 0) throw ConfigError("workers must be at least 1");
  if (embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
  if (vicreg_batch_size < 2) throw ConfigError("vicreg_batch_size must be at least 2");
  train.validate();
  if (method == Method::EihiFull) {
    if (!guidance) throw ConfigError("eihi_full requires a guidance source");
    if (guidance->file.has_value() == guidance->ground_truth)
      throw ConfigError("guidance: set exactly one of 'file' or 'ground_truth'");
    if (guidance->ground_truth && folder)
      throw ConfigError("guidance: ground-truth masks exist only for synthetic data");
  } else {
    if (guidance) throw ConfigError("guidance pairs are only accepted by eihi_full");
    if (force_keep_all) throw ConfigError("force_keep_all applies only to eihi_full");
  }
}

json ExperimentConfig::to_json() const {
  json j{{"dataset_name", dataset_name},
         {"shift_name", shift_name},
         {"shift", shift.to_json()},
         {"method", eihi::to_string(method)},
         {"embedding_dim", embedding_dim},
         {"train", train.to_json()},
         {"force_keep_all", force_keep_all},
         {"alignment", alignment},
         {"vicreg_batch_size", vicreg_batch_size},
         {"seeds", seeds},
         {"workers", workers}};
  if (dataset) j["dataset"] = dataset->to_json();
  if (folder)
    j["folder"] = {{"path", folder->root.string()}, {"height", folder->height},
                   {"width", folder->width}};
  if (backbone) j["backbone"] = backbone->to_json();
  if (guidance) {
    json g{{"fill", guidance->fill}, {"rule", eihi::to_string(guidance->rule)}};
    if (guidance->file) g["file"] = guidance->file->string();
    if (guidance->ground_truth) g["ground_truth"] = true;
    j["guidance"] = g;
  }
  if (out_dir) j["out_dir"] = out_dir->string();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  static const std::set<std::string> known{
      "dataset_name", "shift_name", "dataset", "folder", "shift", "method", "embedding_dim",
      "backbone", "train", "guidance", "force_keep_all", "alignment", "vicreg_batch_size",
      "seeds", "workers", "out_dir"};
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown experiment key '" + k + "'");
  ExperimentConfig c;
  try {
    c.dataset_name = j.value("dataset_name", c.dataset_name);
    c.shift_name = j.value("shift_name", c.shift_name);
    if (j.contains("dataset")) c.dataset = DatasetSpec::from_json(j.at("dataset"));
    if (j.contains("folder")) {
      const auto& f = j.at("folder");
      FolderSource src;
      src.root = f.at("path").get<std::string>();
      src.height = f.value("height", src.height);
      src.width = f.value("width", src.width);
      c.folder = src;
      if (!j.contains("dataset_name")) c.dataset_name = src.root.filename().string();
    }
    if (j.contains("shift")) c.shift = ShiftConfig::from_json(j.at("shift"));
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    if (j.contains("backbone")) c.backbone = BackboneSpec::from_json(j.at("backbone"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("guidance") && !j.at("guidance").is_null()) {
      const auto& g = j.at("guidance");
      GuidanceSource src;
      if (g.contains("file")) src.file = g.at("file").get<std::string>();
      src.ground_truth = g.value("ground_truth", false);
      src.fill = g.value("fill", src.fill);
      if (g.contains("rule")) src.rule = sensitivity_rule_from_string(g.at("rule").get<std::string>());
      c.guidance = src;
    }
    c.force_keep_all = j.value("force_keep_all", c.force_keep_all);
    c.alignment = j.value("alignment", c.alignment);
    c.vicreg_batch_size = j.value("vicreg_batch_size", c.vicreg_batch_size);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.workers = j.value("workers", c.workers);
    if (j.contains("out_dir") && !j.at("out_dir").is_null())
      c.out_dir = j.at("out_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// shift presets

ShiftConfig diversity_shift(std::size_t num_domains, std::size_t targets) {
  if (targets == 0 || targets >= num_domains)
    throw ConfigError("held-out domain count must lie in [1, D)");
  ShiftConfig s;
  for (std::size_t d = 0; d < num_domains; ++d)
    (d + targets < num_domains ? s.source_domains : s.target_domains).push_back(static_cast<int>(d));
  return s;
}

ShiftConfig correlation_shift(std::size_t num_classes, std::size_t num_domains,
                              std::size_t targets, Ratio ratio) {
  ShiftConfig s = diversity_shift(num_domains, targets);
  const std::size_t sources = s.source_domains.size();
  for (std::size_t c = 0; c < num_classes; ++c)
    s.class_primary_domains.push_back(s.source_domains[c % sources]);
  s.secondary_ratio = ratio;
  return s;
}

ShiftConfig mixed_shift() {
  ShiftConfig s;
  s.mixed = true;
  return s;
}

// ---------------------------------------------------------------------------
// reports

json SeedResult::to_json() const {
  json j{{"seed", seed},
         {"accuracy", opt_json(accuracy)},
         {"error", error ? json(*error) : json(nullptr)},
         {"train_trace", train_trace.to_json()},
         {"seconds", seconds}};
  if (pre_prune_accuracy) j["pre_prune_accuracy"] = *pre_prune_accuracy;
  if (eliminated_count) {
    j["eliminated_count"] = *eliminated_count;
    j["eliminated"] = eliminated;
  }
  if (alignment) j["alignment"] = alignment->to_json();
  if (discriminator_trace) j["discriminator_trace"] = discriminator_trace->to_json();
  if (retrain_trace) j["retrain_trace"] = retrain_trace->to_json();
  return j;
}

SeedResult SeedResult::from_json(const json& j) {
  SeedResult r;
  try {
    r.seed = j.at("seed").get<std::uint64_t>();
    r.accuracy = opt_value<double>(j, "accuracy");
    r.error = opt_value<std::string>(j, "error");
    r.pre_prune_accuracy = opt_value<double>(j, "pre_prune_accuracy");
    r.eliminated_count = opt_value<std::size_t>(j, "eliminated_count");
    if (j.contains("eliminated")) r.eliminated = j.at("eliminated").get<std::vector<std::size_t>>();
    if (j.contains("alignment")) {
      const auto& a = j.at("alignment");
      AlignmentReport al;
      al.eliminated = a.at("eliminated").get<double>();
      al.retained = a.at("retained").get<double>();
      al.eliminated_count = a.at("eliminated_count").get<std::size_t>();
      al.per_dimension = a.at("per_dimension").get<std::vector<double>>();
      r.alignment = al;
    }
    if (j.contains("train_trace")) r.train_trace = TrainTrace::from_json(j.at("train_trace"));
    if (j.contains("discriminator_trace"))
      r.discriminator_trace = TrainTrace::from_json(j.at("discriminator_trace"));
    if (j.contains("retrain_trace")) r.retrain_trace = TrainTrace::from_json(j.at("retrain_trace"));
    r.seconds = j.value("seconds", 0.0);
  } catch (const json::exception& e) {
    throw ParseError(std::string("seed result: ") + e.what());
  }
  return r;
}

std::vector<double> ExperimentReport::accuracies() const {
  std::vector<double> out;
  for (const auto& s : seeds)
    if (s.accuracy) out.push_back(*s.accuracy);
  return out;
}

json ExperimentReport::to_json() const {
  json per = json::array();
  for (const auto& s : seeds) per.push_back(s.to_json());
  return {{"format", "eihi-report"}, {"version", 1},      {"dataset", dataset},
          {"shift", shift},          {"method", method},  {"seeds", per},
          {"mean", opt_json(mean)},  {"std", opt_json(std)}, {"partial", partial},
          {"metadata", metadata}};
}

ExperimentReport ExperimentReport::from_json(const json& j) {
  ExperimentReport r;
  try {
    if (j.value("format", std::string()) != "eihi-report")
      throw ParseError("not an eihi report (format field missing or wrong)");
    r.dataset = j.at("dataset").get<std::string>();
    r.shift = j.at("shift").get<std::string>();
    r.method = j.at("method").get<std::string>();
    for (const auto& s : j.at("seeds")) r.seeds.push_back(SeedResult::from_json(s));
    r.mean = opt_value<double>(j, "mean");
    r.std = opt_value<double>(j, "std");
    r.partial = j.value("partial", false);
    if (j.contains("metadata")) r.metadata = j.at("metadata");
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  return r;
}

std::pair<std::optional<double>, std::optional<double>> mean_std(std::span<const double> values) {
  if (values.empty()) return {std::nullopt, std::nullopt};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return {mean, std::nullopt};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

// ---------------------------------------------------------------------------
// running

namespace {

SampleSet load_data(const ExperimentConfig& config, std::uint64_t seed) {
  if (config.dataset) {
    DatasetSpec spec = *config.dataset;
    spec.seed = seed;
    return generate_dataset(spec);
  }
  return load_image_folder(config.folder->root, config.folder->height, config.folder->width);
}

BackboneSpec backbone_for(const ExperimentConfig& config, const SampleSet& data) {
  if (config.backbone) return *config.backbone;
  const Shape& s = data.front()->image.shape();
  return BackboneSpec::standard(s[1], s[2], config.embedding_dim);
}

void write_json(const std::filesystem::path& path, const json& j) {
  write_file_bytes(path, j.dump(2) + "\n");
}

}  // namespace

PreparedRun prepare_run(const ExperimentConfig& config, std::uint64_t seed) {
  PreparedRun run;
  run.data = load_data(config, seed);
  if (run.data.empty()) throw ContractError("dataset is empty");
  ShiftConfig shift = config.shift;
  shift.seed = seed;
  run.split = split_domains(run.data, shift);
  if (run.split.test.empty()) throw ShiftConfigError("split produced no target samples");
  run.num_classes = count_classes(run.data);
  run.backbone = backbone_for(config, run.data);
  return run;
}

std::uint64_t discriminator_seed(std::uint64_t seed) {
  return CounterRng::derive(seed, kTagDiscriminator);
}

SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  SeedResult r;
  r.seed = seed;
  try {
    const PreparedRun run = prepare_run(config, seed);
    const DomainSplit& split = run.split;
    const std::size_t num_classes = run.num_classes;
    const BackboneSpec& spec = run.backbone;

    TrainConfig tc = config.train;
    tc.seed = seed;
    std::optional<std::filesystem::path> dir;
    if (config.out_dir) {
      dir = *config.out_dir / ("seed_" + std::to_string(seed));
      std::filesystem::create_directories(*dir);
      if (!tc.checkpoint_dir) tc.checkpoint_dir = *dir;
    }
    const std::uint64_t disc_seed = discriminator_seed(seed);

    if (config.method == Method::Erm) {
      ErmResult erm = train_erm(split.train, split.validation, spec, tc);
      r.train_trace = erm.trace;
      r.accuracy = evaluate(erm.params, erm.head, nullptr, split.test).accuracy;
      if (dir) {
        save_backbone(*dir / "backbone.ckpt", erm.params);
        erm.head.save(*dir / "head.ckpt");
      }
    } else {
      if (config.method == Method::EihiNoCov) tc.loss.covariance = false;
      if (config.method == Method::VicregBaseline) {
        tc.objective = StageOneObjective::Vicreg;
        tc.batch_size = config.vicreg_batch_size;
      }
      StageOneResult stage = train_stage_one(split.train, split.validation, spec, tc);
      r.train_trace = stage.trace;
      EmbeddingCache cache;
      DiscriminatorResult disc = train_discriminator(stage.params, split.train, split.validation,
                                                     nullptr, num_classes, tc.discriminator,
                                                     disc_seed, &cache);
      r.discriminator_trace = disc.trace;
      const double before =
          evaluate(stage.params, disc.discriminator, nullptr, split.test, &cache).accuracy;
      if (dir) {
        save_backbone(*dir / "backbone.ckpt", stage.params);
        disc.discriminator.save(*dir / "discriminator.ckpt");
      }

      if (config.method != Method::EihiFull) {
        r.accuracy = before;
      } else {
        const GuidanceSource& g = *config.guidance;
        const std::vector<GuidancePair> pairs =
            g.ground_truth ? ground_truth_pairs(split.train, seed, g.fill)
                           : read_guidance_file(*g.file);
        GuidanceReport report = compute_guidance(stage.params, pairs, g.rule);
        PruneIndicator keep = report.keep;
        if (config.force_keep_all) keep.assign(keep.size(), 1);
        DiscriminatorResult re = train_discriminator(stage.params, split.train, split.validation,
                                                     &keep, num_classes, tc.discriminator,
                                                     disc_seed, &cache);
        r.retrain_trace = re.trace;
        r.pre_prune_accuracy = before;
        r.accuracy = evaluate(stage.params, re.discriminator, &keep, split.test, &cache).accuracy;
        if (!config.force_keep_all) r.eliminated = report.eliminated;
        r.eliminated_count = r.eliminated.size();
        const bool factors_known =
            std::all_of(split.train.begin(), split.train.end(),
                        [](const SamplePtr& s) { return s->background_factor.has_value(); });
        if (config.alignment && factors_known && split.train.size() >= 2)
          r.alignment = background_alignment(stage.params, split.train, keep);
        if (dir) {
          write_json(*dir / "indicator.json", report.to_json());
          re.discriminator.save(*dir / "discriminator_pruned.ckpt");
        }
      }
    }
  } catch (const std::exception& e) {
    r.accuracy.reset();
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentReport report;
  report.dataset = config.dataset_name;
  report.shift = config.shift_name;
  report.method = to_string(config.method);
  report.seeds.resize(config.seeds.size());

  // Seeds are independent; each slot writes only its own entry.
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < config.seeds.size();)
      report.seeds[i] = run_seed(config, config.seeds[i]);
  };
  const std::size_t slots = std::min(config.workers, config.seeds.size());
  if (slots <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < slots; ++w) pool.emplace_back(worker);
  }

  const auto acc = report.accuracies();
  std::tie(report.mean, report.std) = mean_std(acc);
  report.partial = acc.size() != report.seeds.size();
  report.metadata["config"] = config.to_json();
  if (config.method == Method::VicregBaseline)
    report.metadata["vicreg_batch_size"] = {{"used", config.vicreg_batch_size},
                                            {"paper_scale", kPaperVicregBatch},
                                            {"scaled", config.vicreg_batch_size != kPaperVicregBatch}};
  if (config.out_dir) {
    std::filesystem::create_directories(*config.out_dir);
    write_json(*config.out_dir / "report.json", report.to_json());
  }
  return report;
}

// ---------------------------------------------------------------------------
// tables

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\r\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string md_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out;
}

}  // namespace

Table export_table(std::span<const ExperimentReport> reports) {
  if (reports.empty()) throw ContractError("export_table: no reports");
  Table t;
  t.csv = "dataset,shift,method,mean,std,seeds,accuracy\r\n";
  t.markdown = "| Dataset | Shift | Method | Accuracy (%) | Seeds |\n|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    const auto acc = r.accuracies();
    const auto [mean, sd] = mean_std(acc);
    const std::string m = mean ? fixed2(*mean * 100.0) : "";
    const std::string s = sd ? fixed2(*sd * 100.0) : "";
    std::string cell = mean ? m + "\xC2\xB1" + (sd ? s : "n/a") : "n/a";
    if (r.partial || acc.size() != r.seeds.size()) cell += " (partial)";
    const std::string seeds = std::to_string(acc.size());
    t.csv += csv_field(r.dataset) + "," + csv_field(r.shift) + "," + csv_field(r.method) + "," +
             m + "," + s + "," + seeds + "," + csv_field(cell) + "\r\n";
    t.markdown += "| " + md_cell(r.dataset) + " | " + md_cell(r.shift) + " | " +
                  md_cell(r.method) + " | " + cell + " | " + seeds + " |\n";
  }
  return t;
}

// ---------------------------------------------------------------------------
// grid

std::vector<ExperimentConfig> grid_from_json(const json& j) {
  if (!j.is_object() || !j.contains("experiments") || !j.at("experiments").is_array())
    throw ConfigError("grid config needs an 'experiments' array");
  const json defaults = j.value("defaults", json::object());
  std::vector<ExperimentConfig> out;
  for (const auto& e : j.at("experiments")) {
    json merged = defaults;
    merged.merge_patch(e);
    out.push_back(ExperimentConfig::from_json(merged));
  }
  if (out.empty()) throw ConfigError("grid has no experiments");
  return out;
}

json default_grid_json() {
  DatasetSpec ds;
  const std::size_t c = ds.num_classes, d = ds.num_domains;
  json defaults{{"dataset", ds.to_json()}, {"seeds", {1, 2, 3, 4, 5}}};
  struct Setting {
    const char* name;
    ShiftConfig shift;
  };
  const Setting settings[] = {
      {"8:2", diversity_shift(d, 2)},
      {"7:3", diversity_shift(d, 3)},
      {"5:1", correlation_shift(c, d, 2, Ratio{1, 5})},
  };
  json experiments = json::array();
  experiments.push_back({{"shift_name", "mixed"}, {"shift", mixed_shift().to_json()},
                         {"method", "erm"}});
  for (const auto& s : settings)
    for (const auto& [m, name] : kMethodNames) {
      json e{{"shift_name", s.name}, {"shift", s.shift.to_json()}, {"method", name}};
      if (m == Method::EihiFull) e["guidance"] = {{"ground_truth", true}};
      experiments.push_back(e);
    }
  return {{"defaults", defaults}, {"experiments", experiments}};
}

}  // namespace eihi
