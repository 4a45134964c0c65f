// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Talks to the library through the C interface only.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "eihi/eihi.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliError {
  int code;
  std::string message;
};

void check(eihi_status s, const std::string& what) {
  if (s != EIHI_OK)
    throw CliError{static_cast<int>(s),
                   what + ": " + eihi_status_name(s) + ": " + eihi_last_error()};
}

struct CString {
  char* p = nullptr;
  ~CString() { eihi_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

struct ReportPtr {
  eihi_report* p = nullptr;
  ReportPtr() = default;
  ReportPtr(ReportPtr&& o) noexcept : p(o.p) { o.p = nullptr; }
  ~ReportPtr() { eihi_report_free(p); }
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError{EIHI_ERR_IO, "cannot read " + path.string()};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw CliError{EIHI_ERR_IO, "cannot write " + path.string()};
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw CliError{EIHI_ERR_PARSE, path.string() + ": " + e.what()};
  }
}

std::string pct(eihi_report* r) {
  double mean = 0;
  int has = 0;
  eihi_report_mean(r, &mean, &has);
  if (!has) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * mean);
  return buf;
}

ReportPtr run_one(json experiment, const std::optional<std::uint64_t>& seed,
                  const std::optional<fs::path>& out_dir) {
  if (seed) experiment["seeds"] = {*seed};
  if (out_dir) experiment["out_dir"] = out_dir->string();
  ReportPtr r;
  check(eihi_experiment_run(experiment.dump().c_str(), &r.p), "experiment");
  return r;
}

std::string report_text(eihi_report* r) {
  CString s;
  check(eihi_report_json(r, &s.p), "report");
  return s.str();
}

eihi_service* g_service = nullptr;

void on_signal(int) {
  if (g_service) eihi_service_stop(g_service);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eihi: contrastive O.o.D. training, guidance pruning and benchmarks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(eihi_version()));

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;

  auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset to a manifest directory");
  gen->add_option("--config", config, "dataset spec (JSON); defaults when omitted")
      ->check(CLI::ExistingFile);
  gen->add_option("--seed", seed, "generator seed (overrides the config)");
  gen->add_option("--out-dir", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "run one experiment config over its seeds");
  train->add_option("--config", config, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "run this single seed instead of the config's list");
  train->add_option("--out-dir", out_dir, "report and per-seed checkpoints");

  std::string backbone, guidance, rule = "cumulative_mass";
  auto* prune = app.add_subcommand("prune", "eliminate background-sensitive dimensions");
  prune->add_option("--config", config,
                    "JSON with backbone, guidance and optional rule (flags override)")
      ->check(CLI::ExistingFile);
  prune->add_option("--backbone", backbone, "stage-one checkpoint");
  prune->add_option("--guidance", guidance, "guidance-pair file (guidance.json)");
  prune->add_option("--rule", rule, "cumulative_mass | top_dimensions");
  prune->add_option("--seed", seed, "unused; accepted for uniformity");
  prune->add_option("--out-dir", out_dir, "writes indicator.json here");

  bool print_default = false;
  auto* grid = app.add_subcommand("run-grid", "run an experiment grid and tabulate it");
  grid->add_option("--config", config, "grid config (JSON); the desk grid when omitted")
      ->check(CLI::ExistingFile);
  grid->add_option("--seed", seed, "run every experiment on this single seed");
  grid->add_option("--out-dir", out_dir, "reports and tables")->required();
  grid->add_flag("--print-default", print_default, "print the default grid config and exit");

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "HTTP backend for interactive guidance");
  serve->add_option("--config", config, "service config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  serve->add_option("--seed", seed, "run seed the checkpoint belongs to (overrides the config)");
  serve->add_option("--out-dir", out_dir, "work directory for uploaded guidance");
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port (0 picks a free one)");

  std::vector<std::string> reports;
  auto* exp = app.add_subcommand("export", "tabulate report files as CSV and Markdown");
  exp->add_option("reports", reports, "report.json files")->required()->check(CLI::ExistingFile);
  exp->add_option("--config", config, "unused; accepted for uniformity");
  exp->add_option("--seed", seed, "unused; accepted for uniformity");
  exp->add_option("--out-dir", out_dir, "writes table.csv and table.md here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      json spec = config.empty() ? json::object() : read_json(config);
      if (seed) spec["seed"] = *seed;
      size_t n = 0;
      check(eihi_dataset_generate(spec.dump().c_str(), out_dir.c_str(), &n), "gen-data");
      std::cout << "wrote " << n << " samples to " << out_dir << "\n";
    } else if (*train) {
      std::optional<fs::path> dir;
      if (!out_dir.empty()) dir = out_dir;
      ReportPtr r = run_one(read_json(config), seed, dir);
      const std::string text = report_text(r.p);
      if (!dir) std::cout << text << "\n";
      int partial = 0;
      eihi_report_partial(r.p, &partial);
      std::cerr << "mean target accuracy " << pct(r.p) << (partial ? " (partial)" : "") << "\n";
      return partial ? 3 : 0;
    } else if (*prune) {
      if (!config.empty()) {
        const json c = read_json(config);
        if (backbone.empty()) backbone = c.value("backbone", "");
        if (guidance.empty()) guidance = c.value("guidance", "");
        if (prune->count("--rule") == 0) rule = c.value("rule", rule);
      }
      if (backbone.empty() || guidance.empty())
        throw CliError{EIHI_ERR_INVALID_ARGUMENT, "prune needs --backbone and --guidance"};
      CString ind;
      check(eihi_prune(backbone.c_str(), guidance.c_str(), rule.c_str(), &ind.p), "prune");
      if (out_dir.empty()) {
        std::cout << ind.str() << "\n";
      } else {
        write_text(fs::path(out_dir) / "indicator.json", ind.str() + "\n");
        std::cout << "wrote " << (fs::path(out_dir) / "indicator.json").string() << "\n";
      }
    } else if (*grid) {
      json g;
      if (config.empty()) {
        CString d;
        check(eihi_grid_default(&d.p), "grid");
        g = json::parse(d.str());
      } else {
        g = read_json(config);
      }
      if (print_default) {
        std::cout << g.dump(2) << "\n";
        return 0;
      }
      CString expanded;
      check(eihi_grid_expand(g.dump().c_str(), &expanded.p), "grid");
      const json list = json::parse(expanded.str());
      std::vector<ReportPtr> done;
      std::size_t i = 0;
      bool partial_any = false;
      for (const auto& e : list) {
        const std::string name = std::to_string(i++) + "_" + e.value("shift_name", "") + "_" +
                                 e.value("method", "");
        std::string safe;
        for (char c : name) safe += std::isalnum(static_cast<unsigned char>(c)) || c == '_' ? c : '-';
        const fs::path dir = fs::path(out_dir) / "runs" / safe;
        std::cerr << "[" << i << "/" << list.size() << "] " << safe << " ... " << std::flush;
        done.push_back(run_one(e, seed, dir));
        int partial = 0;
        eihi_report_partial(done.back().p, &partial);
        partial_any |= partial != 0;
        std::cerr << pct(done.back().p) << (partial ? " (partial)" : "") << "\n";
      }
      std::vector<const eihi_report*> ptrs;
      for (const auto& r : done) ptrs.push_back(r.p);
      CString csv, md;
      check(eihi_export_table(ptrs.data(), ptrs.size(), &csv.p, &md.p), "export");
      write_text(fs::path(out_dir) / "table.csv", csv.str());
      write_text(fs::path(out_dir) / "table.md", md.str());
      std::cout << md.str();
      return partial_any ? 3 : 0;
    } else if (*serve) {
      json c = read_json(config);
      if (seed) c["seed"] = *seed;
      if (!out_dir.empty()) c["work_dir"] = out_dir;
      eihi_service* svc = nullptr;
      check(eihi_service_create(c.dump().c_str(), &svc), "serve");
      std::unique_ptr<eihi_service, void (*)(eihi_service*)> owner(svc, eihi_service_free);
      g_service = svc;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "serving on " << host << ":" << port << "\n";
      check(eihi_service_run(svc, host.c_str(), port), "serve");
      g_service = nullptr;
    } else if (*exp) {
      std::vector<ReportPtr> loaded;
      for (const auto& f : reports) {
        ReportPtr r;
        check(eihi_report_parse(read_text(f).c_str(), &r.p), f);
        loaded.push_back(std::move(r));
      }
      std::vector<const eihi_report*> ptrs;
      for (const auto& r : loaded) ptrs.push_back(r.p);
      CString csv, md;
      check(eihi_export_table(ptrs.data(), ptrs.size(), &csv.p, &md.p), "export");
      if (!out_dir.empty()) {
        write_text(fs::path(out_dir) / "table.csv", csv.str());
        write_text(fs::path(out_dir) / "table.md", md.str());
      }
      std::cout << md.str();
    }
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code == 0 ? 1 : e.code + 10;
  }
  return 0;
}
