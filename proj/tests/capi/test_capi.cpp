// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "eihi/eihi.h"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_experiment(const std::string& method) {
  return {
      {"dataset",
       {{"num_classes", 3}, {"num_domains", 4}, {"samples_per_cell", 6}, {"height", 16},
        {"width", 16}}},
      {"shift", {{"source", {0, 1, 2}}, {"target", {3}}}},
      {"shift_name", "3:1"},
      {"method", method},
      {"embedding_dim", 8},
      {"train",
       {{"epochs", 2}, {"batch_size", 8}, {"negatives", 3}, {"probe_every", 1},
        {"discriminator", {{"epochs", 5}, {"hidden", {8}}}}}},
      {"seeds", {1, 2}}};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  eihi_string_free(s);
  return out;
}

}  // namespace

TEST_CASE("status codes and messages") {
  eihi_report* r = nullptr;
  CHECK(eihi_experiment_run(nullptr, &r) == EIHI_ERR_INVALID_ARGUMENT);
  CHECK(std::string(eihi_last_error()).find("config_json") != std::string::npos);
  CHECK(eihi_experiment_run("{oops", &r) == EIHI_ERR_PARSE);
  CHECK(r == nullptr);
  auto bad = tiny_experiment("eihi_full");  // no guidance source
  CHECK(eihi_experiment_run(bad.dump().c_str(), &r) == EIHI_ERR_CONFIG);
  CHECK(std::string(eihi_last_error()).find("guidance") != std::string::npos);
  char* csv = nullptr;
  char* md = nullptr;
  CHECK(eihi_export_table(nullptr, 0, &csv, &md) == EIHI_ERR_CONTRACT);
  CHECK(eihi_prune("/no/such.ckpt", "/no/guidance.json", "sideways", &csv) ==
        EIHI_ERR_INVALID_ARGUMENT);
  CHECK(eihi_prune("/no/such.ckpt", "/no/guidance.json", nullptr, &csv) == EIHI_ERR_IO);
  CHECK(std::string(eihi_status_name(EIHI_ERR_SHIFT_CONFIG)) == "shift_config");
  CHECK(eihi_experiment_run(tiny_experiment("erm").dump().c_str(), &r) == EIHI_OK);
  CHECK(std::string(eihi_last_error()).empty());
  eihi_report_free(r);
  eihi_report_free(nullptr);
  eihi_service_free(nullptr);
}

TEST_CASE("experiment, report and table through the C layer") {
  eihi_report* r = nullptr;
  REQUIRE(eihi_experiment_run(tiny_experiment("eihi_stage_one").dump().c_str(), &r) == EIHI_OK);
  double mean = -1;
  int has = 0, partial = 1;
  CHECK(eihi_report_mean(r, &mean, &has) == EIHI_OK);
  CHECK(has == 1);
  CHECK(eihi_report_partial(r, &partial) == EIHI_OK);
  CHECK(partial == 0);
  char* text = nullptr;
  REQUIRE(eihi_report_json(r, &text) == EIHI_OK);
  const std::string report = take(text);
  const json j = json::parse(report);
  CHECK(j.at("seeds").size() == 2);
  CHECK(j.at("mean").get<double>() == mean);

  eihi_report* back = nullptr;
  REQUIRE(eihi_report_parse(report.c_str(), &back) == EIHI_OK);
  const eihi_report* list[] = {r, back};
  char* csv = nullptr;
  char* md = nullptr;
  REQUIRE(eihi_export_table(list, 2, &csv, &md) == EIHI_OK);
  const std::string c = take(csv), m = take(md);
  CHECK(std::count(c.begin(), c.end(), '\n') == 3);
  CHECK(m.find("eihi_stage_one") != std::string::npos);
  eihi_report_free(r);
  eihi_report_free(back);
  CHECK(eihi_report_parse(R"({"format": "other"})", &back) == EIHI_ERR_PARSE);
}

TEST_CASE("grid helpers") {
  char* g = nullptr;
  REQUIRE(eihi_grid_default(&g) == EIHI_OK);
  const std::string grid = take(g);
  char* list = nullptr;
  REQUIRE(eihi_grid_expand(grid.c_str(), &list) == EIHI_OK);
  CHECK(json::parse(take(list)).size() == 16);
  CHECK(eihi_grid_expand("{}", &list) == EIHI_ERR_CONFIG);
}

TEST_CASE("dataset, prune and service through the C layer") {
  const fs::path dir = fs::temp_directory_path() / "eihi_capi_test";
  fs::remove_all(dir);
  size_t n = 0;
  const json spec{{"num_classes", 3}, {"num_domains", 4}, {"samples_per_cell", 6},
                  {"height", 16},     {"width", 16},      {"seed", 9}};
  REQUIRE(eihi_dataset_generate(spec.dump().c_str(), (dir / "data").c_str(), &n) == EIHI_OK);
  CHECK(n == 72);
  CHECK(fs::exists(dir / "data" / "manifest.json"));

  auto cfg = tiny_experiment("eihi_stage_one");
  cfg["seeds"] = {1};
  cfg["out_dir"] = (dir / "run").string();
  eihi_report* r = nullptr;
  REQUIRE(eihi_experiment_run(cfg.dump().c_str(), &r) == EIHI_OK);
  eihi_report_free(r);
  const fs::path ckpt = dir / "run" / "seed_1" / "backbone.ckpt";
  REQUIRE(fs::exists(ckpt));

  // A guidance file pointing at generated rasters and their object masks.
  json pairs = json::array();
  for (int k = 0; k < 3; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "%06d", k * 24);
    pairs.push_back({{"id", k},
                     {"sel", std::string("../data/rasters/") + name + ".ppm"},
                     {"mask", std::string("../data/masks/") + name + ".pgm"},
                     {"fill", 0.0}});
  }
  fs::create_directories(dir / "guidance");
  std::ofstream(dir / "guidance" / "guidance.json") << json{{"pairs", pairs}}.dump();
  char* ind = nullptr;
  REQUIRE(eihi_prune(ckpt.c_str(), (dir / "guidance" / "guidance.json").c_str(), nullptr, &ind) ==
          EIHI_OK);
  const json indicator = json::parse(take(ind));
  CHECK(indicator.at("i_guid").size() == 8);
  for (const auto& v : indicator.at("i_guid")) CHECK(v.get<int>() <= 3);

  json svc_cfg{{"experiment", cfg}, {"seed", 1}, {"backbone", ckpt.string()},
               {"work_dir", (dir / "work").string()}};
  eihi_service* svc = nullptr;
  REQUIRE(eihi_service_create(svc_cfg.dump().c_str(), &svc) == EIHI_OK);
  int port = 0;
  REQUIRE(eihi_service_start(svc, "127.0.0.1", 0, &port) == EIHI_OK);
  CHECK(port > 0);
  CHECK(eihi_service_stop(svc) == EIHI_OK);
  eihi_service_free(svc);
  svc_cfg["backbone"] = "/missing.ckpt";
  CHECK(eihi_service_create(svc_cfg.dump().c_str(), &svc) == EIHI_ERR_IO);
  CHECK(svc == nullptr);
  fs::remove_all(dir);
}
