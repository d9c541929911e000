/*
 * Copyright (c) 2026 The probe-sim Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the planner, simulator and predictor. Handles are opaque;
 * every call returns a probe_status and leaves a message for
 * probe_last_error() on failure. Results own their text artifacts (JSON/CSV)
 * until probe_result_free.
 */
#ifndef PROBE_PROBE_H_
#define PROBE_PROBE_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PROBE_API __declspec(dllexport)
#else
#define PROBE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum probe_status {
  PROBE_OK = 0,
  PROBE_ERR_PARSE = 1,      /* malformed JSON or wrong field type */
  PROBE_ERR_INVALID = 2,    /* input violates an invariant */
  PROBE_ERR_ARGUMENT = 3,   /* bad argument, e.g. too many steps */
  PROBE_ERR_RUNTIME = 4,    /* divergence or internal failure */
  PROBE_ERR_NULL = 5        /* null handle or output pointer */
} probe_status;

typedef struct probe_scenario probe_scenario;
typedef struct probe_result probe_result;

PROBE_API const char* probe_version(void);
/* Message of the last failed call on this thread; empty when none. */
PROBE_API const char* probe_last_error(void);

PROBE_API probe_status probe_scenario_parse(const char* json, size_t len, probe_scenario** out);
PROBE_API void probe_scenario_free(probe_scenario* s);
/* Re-derives the workload and predictor seeds from one seed. */
PROBE_API probe_status probe_scenario_set_seed(probe_scenario* s, uint64_t seed);

/* Plans the scenario routing, or every layer of the workload's first step
 * when there is no routing. Artifacts: plan.json, plan_layers.csv. */
PROBE_API probe_status probe_plan(const probe_scenario* s, probe_result** out);
/* modes: comma separated subset of baseline,probe,one_shot_history, or NULL
 * for the scenario's own. steps: 0 for the scenario's own. Artifacts:
 * steps.csv, events.csv. */
PROBE_API probe_status probe_simulate(const probe_scenario* s, const char* modes, int steps, probe_result** out);
/* Batch sweep. Artifact: sweep.csv. */
PROBE_API probe_status probe_sweep(const probe_scenario* s, probe_result** out);
/* config_json may be NULL for defaults. Artifacts: checkpoint.json, fidelity.csv. */
PROBE_API probe_status probe_train_predictor(const char* config_json, size_t len, const uint64_t* seed,
                                             probe_result** out);

PROBE_API size_t probe_result_artifact_count(const probe_result* r);
PROBE_API const char* probe_result_artifact_name(const probe_result* r, size_t i);
PROBE_API const char* probe_result_artifact_data(const probe_result* r, size_t i, size_t* len);
PROBE_API const char* probe_result_summary(const probe_result* r);
/* 1 when every feasibility certificate in the result holds. */
PROBE_API int probe_result_feasible(const probe_result* r);
PROBE_API void probe_result_free(probe_result* r);

#ifdef __cplusplus
}
#endif

#endif /* PROBE_PROBE_H_ */
