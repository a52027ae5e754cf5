/* SPDX-License-Identifier: Apache-2.0
 * Copyright 2026 The patchot Authors
 *
 * C interface to patchot. Every function returns a pot_status; on failure a
 * description of the most recent error on the calling thread is available
 * from pot_last_error(). Handles are opaque and owned by the caller.
 */

#ifndef PATCHOT_PATCHOT_H_
#define PATCHOT_PATCHOT_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define POT_API __declspec(dllexport)
#else
#define POT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pot_status {
  POT_OK = 0,
  POT_ERR_INVALID_ARGUMENT = 1,
  POT_ERR_CONFIG = 2,
  POT_ERR_DIVERGENCE = 3,
  POT_ERR_IO = 4,
  POT_ERR_VERSION = 5,
  POT_ERR_NON_CONVERGENCE = 6,
  POT_ERR_DEGENERATE = 7,
  POT_ERR_CHECK_FAILED = 8,
  POT_ERR_INTERNAL = 70
} pot_status;

POT_API const char* pot_version(void);

/* Message for the last failing call on this thread, "" if none. */
POT_API const char* pot_last_error(void);

POT_API const char* pot_status_name(pot_status status);

/* ---- runs ------------------------------------------------------------- */

typedef struct pot_run pot_run;

/* Starts from a JSON config document (may be NULL or "" for an empty one). */
POT_API pot_status pot_run_create(const char* config_json, pot_run** out);

/* Starts from a JSON config file. */
POT_API pot_status pot_run_create_from_file(const char* path, pot_run** out);

POT_API void pot_run_destroy(pot_run* run);

/* Overrides one field by dotted key, e.g. "bench.episodes". The value is
 * parsed as JSON; if that fails it is taken as a string. */
POT_API pot_status pot_run_set(pot_run* run, const char* dotted_key, const char* value);

/* Validates the merged config and executes it, writing the report, the
 * metrics stream and (for training commands) a checkpoint under the output
 * directory. */
POT_API pot_status pot_run_execute(pot_run* run);

/* Resolved config (after validation) as JSON. Valid until the next call on
 * this handle. */
POT_API pot_status pot_run_config_json(pot_run* run, const char** out);

/* Report of the last successful execute as JSON. */
POT_API pot_status pot_run_report_json(pot_run* run, const char** out);

/* ---- numerics --------------------------------------------------------- */

/* Arrays are row-major. plan_out receives n*m entries. */
POT_API pot_status pot_sinkhorn(size_t n, size_t m, const double* r, const double* c,
                                const double* cost, double epsilon, double tolerance,
                                int max_iterations, int log_domain, double* plan_out,
                                int* iterations_out);

POT_API pot_status pot_emd(size_t n, size_t m, const double* r, const double* c,
                           const double* cost, double* plan_out, double* cost_out);

POT_API pot_status pot_kl(size_t n, const double* p, const double* q, double* out);

/* Chain-decomposed KL of softmax(teacher) to softmax(student). */
POT_API pot_status pot_decomposed_kl(size_t classes, const double* teacher_logits,
                                     const double* student_logits, double* out);

POT_API pot_status pot_ukd_div(size_t classes, const double* teacher_logits,
                               const double* student_logits, double* out);

/* Adaptive score of two n x d feature sets at the given epsilon. */
POT_API pot_status pot_adaptive_score(size_t n, size_t d, const double* u, const double* v,
                                      double epsilon, double* out);

#ifdef __cplusplus
}
#endif

#endif /* PATCHOT_PATCHOT_H_ */
