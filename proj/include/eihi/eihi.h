/* Copyright 2026 The EiHi Lab Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the eihi library. Every call returns a status; on failure
 * eihi_last_error() describes it (per thread, valid until the next call).
 * Strings handed out by the library are released with eihi_string_free.
 */
#ifndef EIHI_EIHI_H
#define EIHI_EIHI_H

#include <stddef.h>

#if defined(_WIN32)
#define EIHI_API __declspec(dllexport)
#else
#define EIHI_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum eihi_status {
  EIHI_OK = 0,
  EIHI_ERR_INVALID_ARGUMENT = 1, /* null pointer or bad enum text */
  EIHI_ERR_SHAPE = 2,
  EIHI_ERR_NUMERIC = 3,
  EIHI_ERR_CONTRACT = 4,
  EIHI_ERR_CONFIG = 5,
  EIHI_ERR_SHIFT_CONFIG = 6,
  EIHI_ERR_PARSE = 7,
  EIHI_ERR_IO = 8,
  EIHI_ERR_SAMPLER = 9,
  EIHI_ERR_DETERMINISM = 10,
  EIHI_ERR_ABORTED = 11,
  EIHI_ERR_INTERNAL = 12
} eihi_status;

typedef struct eihi_report eihi_report;
typedef struct eihi_service eihi_service;

EIHI_API const char* eihi_version(void);
EIHI_API const char* eihi_status_name(eihi_status status);
EIHI_API const char* eihi_last_error(void);
EIHI_API void eihi_string_free(char* s);

/* Synthetic data: writes a manifest directory; *count receives the sample count. */
EIHI_API eihi_status eihi_dataset_generate(const char* spec_json, const char* out_dir,
                                           size_t* count);

/* Experiments */
EIHI_API eihi_status eihi_experiment_run(const char* config_json, eihi_report** out);
EIHI_API eihi_status eihi_report_parse(const char* report_json, eihi_report** out);
EIHI_API eihi_status eihi_report_json(const eihi_report* report, char** out);
/* *has_mean is 0 when no seed completed. */
EIHI_API eihi_status eihi_report_mean(const eihi_report* report, double* mean, int* has_mean);
EIHI_API eihi_status eihi_report_partial(const eihi_report* report, int* partial);
EIHI_API void eihi_report_free(eihi_report* report);

/* Grid: expands {"defaults", "experiments"} into a JSON array of experiment configs. */
EIHI_API eihi_status eihi_grid_expand(const char* grid_json, char** experiments_json);
EIHI_API eihi_status eihi_grid_default(char** grid_json);

EIHI_API eihi_status eihi_export_table(const eihi_report* const* reports, size_t count,
                                       char** csv, char** markdown);

/* Pruning from a stage-one checkpoint and a guidance-pair file. rule may be
 * NULL ("cumulative_mass") or "top_dimensions". Output is the indicator JSON. */
EIHI_API eihi_status eihi_prune(const char* backbone_path, const char* guidance_file,
                                const char* rule, char** indicator_json);

/* Guidance service */
EIHI_API eihi_status eihi_service_create(const char* config_json, eihi_service** out);
/* Serves on a background thread; port 0 picks one, returned in *bound_port. */
EIHI_API eihi_status eihi_service_start(eihi_service* service, const char* host, int port,
                                        int* bound_port);
/* Serves on the calling thread until eihi_service_stop. */
EIHI_API eihi_status eihi_service_run(eihi_service* service, const char* host, int port);
EIHI_API eihi_status eihi_service_stop(eihi_service* service);
EIHI_API void eihi_service_free(eihi_service* service);

#ifdef __cplusplus
}
#endif

#endif /* EIHI_EIHI_H */
