// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "eihi/eihi.h"

#include <cstring>
#include <new>
#include <string>

#include "eihi/bench.hpp"
#include "eihi/checkpoint.hpp"
#include "eihi/error.hpp"
#include "eihi/pruning.hpp"
#include "eihi/service.hpp"
#include "eihi/synthdata.hpp"

struct eihi_report {
  eihi::ExperimentReport report;
};

struct eihi_service {
  std::unique_ptr<eihi::Service> service;
};

namespace {

using json = nlohmann::json;

thread_local std::string g_last_error;

eihi_status from_kind(eihi::ErrorKind kind) {
  using K = eihi::ErrorKind;
  switch (kind) {
    case K::Shape: return EIHI_ERR_SHAPE;
    case K::Numeric: return EIHI_ERR_NUMERIC;
    case K::Contract: return EIHI_ERR_CONTRACT;
    case K::Config: return EIHI_ERR_CONFIG;
    case K::ShiftConfig: return EIHI_ERR_SHIFT_CONFIG;
    case K::Parse: return EIHI_ERR_PARSE;
    case K::Io: return EIHI_ERR_IO;
    case K::Sampler: return EIHI_ERR_SAMPLER;
    case K::Determinism: return EIHI_ERR_DETERMINISM;
    case K::Aborted: return EIHI_ERR_ABORTED;
  }
  return EIHI_ERR_INTERNAL;
}

eihi_status fail(eihi_status s, std::string message) {
  g_last_error = std::move(message);
  return s;
}

template <class F>
eihi_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return EIHI_OK;
  } catch (const eihi::Error& e) {
    return fail(from_kind(e.kind()), e.what());
  } catch (const json::parse_error& e) {
    return fail(EIHI_ERR_PARSE, e.what());
  } catch (const json::exception& e) {
    return fail(EIHI_ERR_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return fail(EIHI_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(EIHI_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define EIHI_REQUIRE_ARG(p) \
  if (!(p)) return fail(EIHI_ERR_INVALID_ARGUMENT, #p " must not be null")

}  // namespace

extern "C" {

const char* eihi_version(void) { return "0.1.0"; }

const char* eihi_status_name(eihi_status status) {
  switch (status) {
    case EIHI_OK: return "ok";
    case EIHI_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case EIHI_ERR_SHAPE: return "shape";
    case EIHI_ERR_NUMERIC: return "numeric";
    case EIHI_ERR_CONTRACT: return "contract";
    case EIHI_ERR_CONFIG: return "config";
    case EIHI_ERR_SHIFT_CONFIG: return "shift_config";
    case EIHI_ERR_PARSE: return "parse";
    case EIHI_ERR_IO: return "io";
    case EIHI_ERR_SAMPLER: return "sampler";
    case EIHI_ERR_DETERMINISM: return "determinism";
    case EIHI_ERR_ABORTED: return "aborted";
    case EIHI_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* eihi_last_error(void) { return g_last_error.c_str(); }

void eihi_string_free(char* s) { std::free(s); }

eihi_status eihi_dataset_generate(const char* spec_json, const char* out_dir, size_t* count) {
  EIHI_REQUIRE_ARG(spec_json);
  EIHI_REQUIRE_ARG(out_dir);
  return guarded([&] {
    const auto spec = eihi::DatasetSpec::from_json(json::parse(spec_json));
    const auto data = eihi::generate_dataset(spec);
    eihi::write_manifest(out_dir, data, spec);
    if (count) *count = data.size();
  });
}

eihi_status eihi_experiment_run(const char* config_json, eihi_report** out) {
  EIHI_REQUIRE_ARG(config_json);
  EIHI_REQUIRE_ARG(out);
  *out = nullptr;
  return guarded([&] {
    const auto cfg = eihi::ExperimentConfig::from_json(json::parse(config_json));
    *out = new eihi_report{eihi::run_experiment(cfg)};
  });
}

eihi_status eihi_report_parse(const char* report_json, eihi_report** out) {
  EIHI_REQUIRE_ARG(report_json);
  EIHI_REQUIRE_ARG(out);
  *out = nullptr;
  return guarded([&] {
    *out = new eihi_report{eihi::ExperimentReport::from_json(json::parse(report_json))};
  });
}

eihi_status eihi_report_json(const eihi_report* report, char** out) {
  EIHI_REQUIRE_ARG(report);
  EIHI_REQUIRE_ARG(out);
  return guarded([&] { *out = dup_string(report->report.to_json().dump(2)); });
}

eihi_status eihi_report_mean(const eihi_report* report, double* mean, int* has_mean) {
  EIHI_REQUIRE_ARG(report);
  EIHI_REQUIRE_ARG(mean);
  EIHI_REQUIRE_ARG(has_mean);
  *has_mean = report->report.mean.has_value();
  *mean = report->report.mean.value_or(0.0);
  return EIHI_OK;
}

eihi_status eihi_report_partial(const eihi_report* report, int* partial) {
  EIHI_REQUIRE_ARG(report);
  EIHI_REQUIRE_ARG(partial);
  *partial = report->report.partial;
  return EIHI_OK;
}

void eihi_report_free(eihi_report* report) { delete report; }

eihi_status eihi_grid_expand(const char* grid_json, char** experiments_json) {
  EIHI_REQUIRE_ARG(grid_json);
  EIHI_REQUIRE_ARG(experiments_json);
  return guarded([&] {
    json arr = json::array();
    for (const auto& e : eihi::grid_from_json(json::parse(grid_json))) arr.push_back(e.to_json());
    *experiments_json = dup_string(arr.dump());
  });
}

eihi_status eihi_grid_default(char** grid_json) {
  EIHI_REQUIRE_ARG(grid_json);
  return guarded([&] { *grid_json = dup_string(eihi::default_grid_json().dump(2)); });
}

eihi_status eihi_export_table(const eihi_report* const* reports, size_t count, char** csv,
                              char** markdown) {
  EIHI_REQUIRE_ARG(csv);
  EIHI_REQUIRE_ARG(markdown);
  if (count > 0 && !reports) return fail(EIHI_ERR_INVALID_ARGUMENT, "reports must not be null");
  return guarded([&] {
    std::vector<eihi::ExperimentReport> list;
    for (size_t i = 0; i < count; ++i) {
      if (!reports[i]) throw eihi::ContractError("report " + std::to_string(i) + " is null");
      list.push_back(reports[i]->report);
    }
    const auto t = eihi::export_table(list);
    char* c = dup_string(t.csv);
    try {
      *markdown = dup_string(t.markdown);
    } catch (...) {
      std::free(c);
      throw;
    }
    *csv = c;
  });
}

eihi_status eihi_prune(const char* backbone_path, const char* guidance_file, const char* rule,
                       char** indicator_json) {
  EIHI_REQUIRE_ARG(backbone_path);
  EIHI_REQUIRE_ARG(guidance_file);
  EIHI_REQUIRE_ARG(indicator_json);
  eihi::SensitivityRule r = eihi::SensitivityRule::CumulativeMass;
  if (rule) {
    try {
      r = eihi::sensitivity_rule_from_string(rule);
    } catch (const std::exception& e) {
      return fail(EIHI_ERR_INVALID_ARGUMENT, e.what());
    }
  }
  return guarded([&] {
    const auto backbone = eihi::load_backbone(backbone_path);
    const auto pairs = eihi::read_guidance_file(guidance_file);
    const auto report = eihi::compute_guidance(backbone, pairs, r);
    json j = report.to_json();
    j["rule"] = eihi::to_string(r);
    j["k"] = pairs.size();
    j["d"] = backbone.embedding_dim();
    *indicator_json = dup_string(j.dump(2));
  });
}

eihi_status eihi_service_create(const char* config_json, eihi_service** out) {
  EIHI_REQUIRE_ARG(config_json);
  EIHI_REQUIRE_ARG(out);
  *out = nullptr;
  return guarded([&] {
    const auto cfg = eihi::ServiceConfig::from_json(json::parse(config_json));
    auto svc = std::make_unique<eihi::Service>(cfg);
    *out = new eihi_service{std::move(svc)};
  });
}

eihi_status eihi_service_start(eihi_service* service, const char* host, int port,
                               int* bound_port) {
  EIHI_REQUIRE_ARG(service);
  EIHI_REQUIRE_ARG(host);
  return guarded([&] {
    const int p = service->service->start(host, port);
    if (bound_port) *bound_port = p;
  });
}

eihi_status eihi_service_run(eihi_service* service, const char* host, int port) {
  EIHI_REQUIRE_ARG(service);
  EIHI_REQUIRE_ARG(host);
  return guarded([&] { service->service->run(host, port); });
}

eihi_status eihi_service_stop(eihi_service* service) {
  EIHI_REQUIRE_ARG(service);
  return guarded([&] { service->service->stop(); });
}

void eihi_service_free(eihi_service* service) { delete service; }

}  // extern "C"
