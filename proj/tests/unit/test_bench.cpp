// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "eihi/bench.hpp"
#include "eihi/error.hpp"

using namespace eihi;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(Method method) {
  ExperimentConfig c;
  DatasetSpec ds;
  ds.num_classes = 3;
  ds.num_domains = 4;
  ds.samples_per_cell = 6;
  ds.height = 16;
  ds.width = 16;
  c.dataset = ds;
  c.shift = diversity_shift(4, 1);
  c.shift_name = "3:1";
  c.method = method;
  c.backbone = BackboneSpec{3, 16, 16,
                            {{LayerKind::Conv, 4, 3, 1, 1}, {LayerKind::Relu},
                             {LayerKind::MaxPool, 0, 4}, {LayerKind::Flatten},
                             {LayerKind::Dense, 12}}};
  c.train.epochs = 2;
  c.train.batch_size = 8;
  c.train.negatives = 3;
  c.train.probe_every = 1;
  c.train.probe.epochs = 5;
  c.train.discriminator.epochs = 8;
  c.train.discriminator.hidden = {16};
  c.vicreg_batch_size = 16;
  c.seeds = {7};
  if (method == Method::EihiFull) c.guidance = GuidanceSource{std::nullopt, true, 0.0, {}};
  return c;
}

// Minimal RFC 4180 reader for the round-trip check.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows(1);
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      rows.back().push_back(field);
      field.clear();
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      rows.back().push_back(field);
      field.clear();
      rows.emplace_back();
      ++i;
    } else {
      field += c;
    }
  }
  if (rows.back().empty()) rows.pop_back();
  return rows;
}

ExperimentReport fake_report(std::vector<std::optional<double>> acc) {
  ExperimentReport r;
  r.dataset = "synthetic";
  r.shift = "8:2";
  r.method = "eihi_stage_one";
  std::uint64_t seed = 1;
  for (auto a : acc) {
    SeedResult s;
    s.seed = seed++;
    s.accuracy = a;
    if (!a) s.error = "boom";
    r.seeds.push_back(s);
  }
  const auto v = r.accuracies();
  std::tie(r.mean, r.std) = mean_std(v);
  r.partial = v.size() != r.seeds.size();
  return r;
}

}  // namespace

TEST_CASE("table cell for two seeds uses the n-1 deviation") {
  const std::vector<ExperimentReport> reports{fake_report({0.50, 0.60})};
  const Table t = export_table(reports);
  CHECK(t.markdown.find("55.00\xC2\xB1" "7.07") != std::string::npos);
  const auto rows = parse_csv(t.csv);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1][3] == "55.00");
  CHECK(rows[1][4] == "7.07");
  CHECK(rows[1][5] == "2");
}

TEST_CASE("export_table rejects an empty list") {
  CHECK_THROWS_AS(export_table(std::span<const ExperimentReport>{}), ContractError);
}

TEST_CASE("CSV round-trips fields and printed numerics") {
  std::vector<ExperimentReport> reports;
  reports.push_back(fake_report({0.123456, 0.654321, 0.5}));
  reports.back().dataset = "nico, \"animal\"";
  reports.push_back(fake_report({0.25, std::nullopt}));
  reports.back().method = "line\nbreak";
  const Table t = export_table(reports);
  const auto rows = parse_csv(t.csv);
  REQUIRE(rows.size() == 3);
  for (const auto& row : rows) CHECK(row.size() == 7);
  CHECK(rows[1][0] == "nico, \"animal\"");
  CHECK(rows[2][2] == "line\nbreak");
  for (std::size_t i = 0; i < 2; ++i) {
    const auto acc = reports[i].accuracies();
    double sum = 0;
    for (double a : acc) sum += a;
    const double mean = 100.0 * sum / static_cast<double>(acc.size());
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", mean);
    CHECK(rows[i + 1][3] == buf);
    // Parse back: exact at two decimals.
    CHECK(std::stod(rows[i + 1][3]) == std::stod(buf));
  }
  CHECK(rows[2][4].empty());  // one completed seed: no deviation
  CHECK(rows[2][6].find("partial") != std::string::npos);
}

TEST_CASE("mean_std against hand arithmetic") {
  const std::vector<double> v{0.2, 0.4, 0.9};
  const auto [m, s] = mean_std(v);
  CHECK(*m == doctest::Approx(0.5).epsilon(1e-15));
  // deviations -0.3, -0.1, 0.4 -> squares 0.26, / 2 = 0.13
  CHECK(*s == doctest::Approx(std::sqrt(0.13)).epsilon(1e-14));
  const std::vector<double> one{0.3};
  CHECK(!mean_std(one).second);
}

TEST_CASE("config invariants") {
  auto full = tiny_config(Method::EihiFull);
  full.guidance.reset();
  CHECK_THROWS_AS(full.validate(), ConfigError);
  auto erm = tiny_config(Method::Erm);
  erm.guidance = GuidanceSource{fs::path("pairs/guidance.json"), false, 0.0, {}};
  CHECK_THROWS_AS(erm.validate(), ConfigError);
  auto both = tiny_config(Method::EihiFull);
  both.guidance->file = "x.json";
  CHECK_THROWS_AS(both.validate(), ConfigError);

  auto j = tiny_config(Method::EihiFull).to_json();
  const auto back = ExperimentConfig::from_json(j);
  CHECK(back.to_json() == j);
  j["colour"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  CHECK_THROWS_AS(method_from_string("dann"), ConfigError);
}

TEST_CASE("shift presets") {
  const auto d = diversity_shift(10, 2);
  CHECK(d.source_domains == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(d.target_domains == std::vector<int>{8, 9});
  const auto c = correlation_shift(9, 10, 2, Ratio{1, 5});
  CHECK(c.class_primary_domains == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 0});
  CHECK(c.secondary_ratio->den == 5);
  CHECK_THROWS_AS(diversity_shift(4, 4), ConfigError);
}

TEST_CASE("one seed gives one entry, and reruns are bit-identical") {
  const auto cfg = tiny_config(Method::EihiStageOne);
  const auto a = run_experiment(cfg);
  REQUIRE(a.seeds.size() == 1);
  CHECK(!a.seeds[0].error);
  CHECK(!a.partial);
  const auto b = run_experiment(cfg);
  CHECK(*a.seeds[0].accuracy == *b.seeds[0].accuracy);
  CHECK(a.seeds[0].train_trace.loss == b.seeds[0].train_trace.loss);
}

TEST_CASE("forced all-keep pruning reproduces stage one exactly") {
  auto full = tiny_config(Method::EihiFull);
  full.force_keep_all = true;
  full.seeds = {3, 4};
  auto stage = tiny_config(Method::EihiStageOne);
  stage.seeds = {3, 4};
  const auto rf = run_experiment(full);
  const auto rs = run_experiment(stage);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(rf.seeds[i].accuracy);
    CHECK(*rf.seeds[i].accuracy == *rs.seeds[i].accuracy);
    CHECK(*rf.seeds[i].pre_prune_accuracy == *rs.seeds[i].accuracy);
    CHECK(*rf.seeds[i].eliminated_count == 0);
  }
}

TEST_CASE("eihi_full reports pruning details") {
  const auto r = run_experiment(tiny_config(Method::EihiFull));
  const auto& s = r.seeds.at(0);
  REQUIRE(!s.error);
  CHECK(s.pre_prune_accuracy.has_value());
  CHECK(*s.eliminated_count == s.eliminated.size());
  CHECK(s.eliminated.size() < 12);
  REQUIRE(s.alignment.has_value());
  CHECK(s.alignment->per_dimension.size() == 12);
  CHECK(s.retrain_trace.has_value());
}

TEST_CASE("worker slots do not change results") {
  auto cfg = tiny_config(Method::Erm);
  cfg.seeds = {1, 2, 3};
  const auto serial = run_experiment(cfg);
  cfg.workers = 3;
  const auto parallel = run_experiment(cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(serial.seeds[i].seed == parallel.seeds[i].seed);
    CHECK(*serial.seeds[i].accuracy == *parallel.seeds[i].accuracy);
  }
  CHECK(*serial.mean == *parallel.mean);
}

TEST_CASE("seed failures are recorded and flag the report partial") {
  auto cfg = tiny_config(Method::EihiFull);
  cfg.guidance = GuidanceSource{fs::path("/nonexistent/guidance.json"), false, 0.0, {}};
  cfg.seeds = {1, 2};
  const auto r = run_experiment(cfg);
  CHECK(r.partial);
  CHECK(!r.mean);
  for (const auto& s : r.seeds) {
    CHECK(!s.accuracy);
    REQUIRE(s.error);
  }
}

TEST_CASE("report aggregation matches recomputation and survives JSON") {
  auto cfg = tiny_config(Method::VicregBaseline);
  cfg.seeds = {5, 6};
  const fs::path dir = fs::temp_directory_path() / "eihi_bench_report";
  fs::remove_all(dir);
  cfg.out_dir = dir;
  const auto r = run_experiment(cfg);
  REQUIRE(r.accuracies().size() == 2);
  const double a = r.seeds[0].accuracy.value(), b = r.seeds[1].accuracy.value();
  CHECK(*r.mean == doctest::Approx((a + b) / 2).epsilon(1e-15));
  CHECK(*r.std == doctest::Approx(std::abs(a - b) / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(r.metadata.at("vicreg_batch_size").at("used") == 16);
  CHECK(r.metadata.at("vicreg_batch_size").at("scaled") == true);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "seed_5" / "backbone.ckpt"));
  const auto back = ExperimentReport::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  fs::remove_all(dir);
}

TEST_CASE("grid expansion") {
  const auto grid = grid_from_json(default_grid_json());
  CHECK(grid.size() == 1 + 3 * 5);
  CHECK(grid[0].shift.mixed);
  std::size_t full = 0;
  for (const auto& e : grid) {
    CHECK(e.dataset.has_value());
    CHECK(e.seeds.size() == 5);
    if (e.method == Method::EihiFull) {
      ++full;
      CHECK(e.guidance->ground_truth);
    }
  }
  CHECK(full == 3);
  CHECK_THROWS_AS(grid_from_json(nlohmann::json::object()), ConfigError);
}
