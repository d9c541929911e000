// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Discrete-event model of one decoding step across all MoE layers. The main
// track runs attention, dispatch, expert compute and combine per layer. In
// probe mode an auxiliary track predicts, plans and prefetches the next
// layer's replicas inside the current layer's compute and the next layer's
// attention; whatever does not fit is charged to the critical path.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "probe/planner.hpp"
#include "probe/predictor.hpp"
#include "probe/types.hpp"
#include "probe/workload.hpp"

namespace probe {

enum class Phase { kAttention, kDispatch, kMoeCompute, kCombine, kPredict, kPlan, kPrefetchPart1, kPrefetchPart2, kUpdate };
enum class Resource { kCompute, kNetwork, kControl };

std::string to_string(Phase p);
std::string to_string(Resource r);

struct PhaseEvent {
  RankId rank = 0;
  int layer = 0;
  Phase phase = Phase::kAttention;
  Seconds start = 0.0;
  Seconds end = 0.0;
  Resource resource = Resource::kCompute;
  friend bool operator==(const PhaseEvent&, const PhaseEvent&) = default;
};

enum class SimMode { kBaseline, kProbe };

struct SimOptions {
  PlannerOptions planner;
  bool planning_enabled = true;
  // Window handed to the planner instead of the estimate; the timeline still
  // uses the real window.
  std::optional<Seconds> planner_window_override;
  bool record_events = true;
};

struct LayerResult {
  int layer = 0;
  Seconds baseline_latency = 0.0;
  Seconds latency = 0.0;
  Seconds exposed = 0.0;  // stall added to this layer by auxiliary work
  double ir_tokens_pre = 1.0;
  double ir_tokens_post = 1.0;
  double skew_pre = 1.0;  // max / mean per-rank latency
  double skew_post = 1.0;
  int replicas = 0;
  int iterations = 0;
  bool planned = false;        // a plan targeted this layer
  bool plan_feasible = true;   // its certificates hold against the real window
  bool fell_back = false;      // dispatcher kept the sharded split
  std::vector<Seconds> transfer;  // per rank, prefetch for this layer
  std::vector<Seconds> window;    // per rank, real hiding window
};

struct StepResult {
  Seconds baseline_latency = 0.0;
  Seconds probe_latency = 0.0;
  std::vector<LayerResult> layers;
  std::vector<PhaseEvent> events;

  Seconds exposed_total() const;
  // Means over layers that received a plan slot (layer 0 excluded).
  double mean_ir_pre() const;
  double mean_ir_post() const;
  double mean_skew_pre() const;
  double mean_skew_post() const;
};

// truth[L] is layer L's routing; predicted[L] is the lookahead for layer L
// (predicted[0] is unused). Throws std::invalid_argument when the two
// sequences are misaligned.
StepResult simulate_step(std::span<const SourceRouting> truth, std::span<const SourceRouting> predicted,
                         const ClusterSpec& spec, SimMode mode, const SimOptions& options = {});

// Hiding window the planner is given for the next layer: what is left of the
// current layer's expert compute once prediction and a full k_max planning
// budget are done, plus the next layer's attention. Dispatch starts at 0.
Seconds estimate_window(const MoeStepLatency& current, const SourceRouting& current_routing, const ClusterSpec& spec);

// Per-rank windows for planning a single routing in isolation, sized from its
// own sharded baseline.
std::vector<Seconds> default_windows(const SourceRouting& routing, const ClusterSpec& spec);

// Applies a plan's per-(source, expert) target fractions to another routing
// of the same shape. Largest remainder, ties to the lower rank. Pairs the
// plan never saw stay local when the source hosts the expert, else go home.
Assignment realize_assignment(const Plan& plan, const SourceRouting& planned_on, const SourceRouting& truth);

// slots[layer][rank] = (expert, slot) pairs. Layer L uses bank L % 2 of each
// rank's replica region.
struct SlotSchedule {
  std::vector<std::vector<std::vector<std::pair<ExpertId, int>>>> slots;
  int slots_used() const;
};

// Throws InvariantError naming rank and layer when a plan exceeds the per-rank
// replica budget.
SlotSchedule replica_slot_manager(std::span<const Plan> plans, const ClusterSpec& spec);

enum class PredictorMode { kPerfect, kNoisyOracle };

struct ExperimentOptions {
  bool baseline = true;
  bool probe = true;
  bool one_shot_history = false;
  PredictorMode predictor = PredictorMode::kPerfect;
  NoisyOracleConfig noisy;
  int steps = 0;          // 0 means the script's length
  int warmup_steps = 20;  // statistics window of the one-shot balancer
  SimOptions sim;
};

struct StepRow {
  int step = 0;
  Seconds baseline_latency = 0.0;
  Seconds probe_latency = 0.0;
  Seconds one_shot_latency = 0.0;
  double baseline_tps = 0.0;
  double probe_tps = 0.0;
  double one_shot_tps = 0.0;
  double ir_pre = 1.0;
  double ir_post = 1.0;
  Seconds exposed = 0.0;
  int replicas = 0;
};

struct ExperimentResult {
  std::vector<StepRow> rows;
  std::vector<PhaseEvent> first_step_events;  // probe timeline of step 0
};

// Throws std::invalid_argument when steps exceeds the script length.
ExperimentResult run_experiment(const WorkloadScript& script, const ClusterSpec& spec,
                                const ExperimentOptions& options = {});

struct SweepRow {
  TokenCount batch = 0;
  double baseline_tps = 0.0;
  double probe_tps = 0.0;
};

std::vector<SweepRow> sweep_batches(const WorkloadScript& script, const ClusterSpec& spec,
                                    std::span<const TokenCount> batches, const ExperimentOptions& options = {});

// CSV: rank,layer,phase,start,end,resource
std::string events_csv(std::span<const PhaseEvent> events);
// CSV: layer,baseline_s,probe_s,exposed_s,ir_pre,ir_post,skew_pre,skew_post,replicas,iterations,fell_back
std::string layers_csv(std::span<const LayerResult> layers);
// CSV with the selected series only.
std::string steps_csv(std::span<const StepRow> rows, const ExperimentOptions& options);
// CSV: batch,baseline_tps,probe_tps,speedup
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace probe
