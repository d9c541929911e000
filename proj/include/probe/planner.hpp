// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Greedy balance-optimal planning: replicate hot experts from the bottleneck
// rank onto the least loaded rank and water-fill remote-origin tokens across
// the replicas, as long as every weight transfer fits its rank's hiding
// window.

#pragma once

#include <optional>
#include <set>
#include <span>
#include <tuple>
#include <vector>

#include "probe/perf_model.hpp"
#include "probe/types.hpp"

namespace probe {

struct PlannerOptions {
  // Convergence threshold as a fraction of the initial bottleneck latency,
  // used when ClusterSpec::solver_epsilon is unset.
  double relative_epsilon = 0.005;
  // Cap on replicas across all ranks (the per-rank budget always applies).
  std::optional<int> max_total_replicas;
  // Reject moves that would raise the layer's T_MoE (compute max + both
  // All-to-All phases), not only the per-rank objective.
  bool guard_step_latency = true;
  // The greedy is continued from this many of the best first moves and the
  // best finished plan is kept. 1 gives the plain greedy.
  int first_move_branches = 4;
  // Branching is repeated for this many leading moves (beam-free tree search,
  // first_move_branches^branch_depth greedy runs at most).
  int branch_depth = 2;
};

// A new replica of `expert` on `dst`; the weights come from the base host.
struct ReplicaMove {
  ExpertId expert;
  RankId dst;
};

Assignment init_locality_first(const SourceRouting& routing, const Placement& base_placement);

// Mutable solver bookkeeping. Latencies always equal a from-scratch
// perf_model evaluation of the current assignment.
class SolverState {
 public:
  SolverState(const SourceRouting& routing, const Placement& base_placement, const ClusterSpec& spec,
              std::vector<Seconds> windows, DedupFactors dedup, PlannerOptions options = {});

  const ClusterSpec& spec() const { return *spec_; }
  const SourceRouting& routing() const { return *routing_; }
  const Placement& baseline() const { return *baseline_; }
  const DedupFactors& dedup() const { return dedup_; }
  const PlannerOptions& options() const { return options_; }

  const Assignment& assignment() const { return assignment_; }
  const Placement& placement() const { return placement_; }
  const std::vector<Seconds>& latencies() const { return latencies_; }
  const std::vector<Seconds>& windows() const { return windows_; }
  Seconds max_latency() const;
  Seconds step_latency() const { return step_latency_; }
  const MoeStepLatency& detail() const { return detail_; }
  // Remote tokens received / sent by r under the current assignment.
  double ingress_tokens(RankId r) const { return in_tokens_[r]; }
  double egress_tokens(RankId r) const { return out_tokens_[r]; }
  const std::vector<std::vector<ExpertId>>& delta_in() const { return delta_in_; }
  const std::vector<std::vector<ExpertId>>& delta_out() const { return delta_out_; }
  int iteration() const { return iteration_; }

  // Tokens of e processed on r that originated elsewhere.
  TokenCount movable_mass(RankId r, ExpertId e) const;

  bool is_invalid(RankId src, RankId dst, ExpertId e) const { return invalid_.count({src, dst, e}) != 0; }
  void mark_invalid(RankId src, RankId dst, ExpertId e) { invalid_.insert({src, dst, e}); }

  // Commits a rebalanced assignment plus the replica moves it needs; moves to
  // ranks already hosting the expert are no-ops.
  void accept(std::span<const ReplicaMove> moves, Assignment next);

  // Per-rank objective (compute + dispatch + combine) of an assignment.
  std::vector<Seconds> evaluate(const Assignment& a, const Placement& p, MoeStepLatency* detail = nullptr) const;
  // Current placement plus the given replicas.
  Placement placement_with(std::span<const ReplicaMove> moves) const;

  Plan to_plan() const;

 private:
  void refresh();

  const SourceRouting* routing_;
  const Placement* baseline_;
  const ClusterSpec* spec_;
  std::vector<Seconds> windows_;
  DedupFactors dedup_;
  PlannerOptions options_;

  Assignment assignment_;
  Placement placement_;
  std::vector<Seconds> latencies_;
  Seconds step_latency_ = 0.0;
  MoeStepLatency detail_;
  std::vector<double> in_tokens_, out_tokens_;
  std::vector<std::vector<ExpertId>> delta_in_;
  std::vector<std::vector<ExpertId>> delta_out_;
  int iteration_ = 0;
  std::set<std::tuple<RankId, RankId, ExpertId>> invalid_;
};

// Expert on rank with the largest remote-origin mass, ignoring experts for
// which (rank, dst, e) was marked invalid. Ties go to the lower expert id.
std::optional<ExpertId> select_heavy_expert(RankId rank, const SolverState& state, RankId dst = -1);

// Budget gate for replicating e from the bottleneck src onto dst. True when dst
// already hosts e. Otherwise requires room in dst's replica budget and both
// ends of the transfer (dst receiving, base host sending) to stay within their
// hiding windows.
bool check_dual_budget(RankId src, RankId dst, ExpertId e, const SolverState& state, const ClusterSpec& spec);

struct RebalanceResult {
  Assignment assignment;
  std::vector<ReplicaMove> replicas;  // needed by the new assignment
  TokenCount moved = 0;
  // Reduction of the bottleneck pair's latency: L_src - max(L'_src, L'_dst).
  Seconds gain = 0.0;
  std::vector<Seconds> latencies;
  Seconds max_latency = 0.0;
  Seconds step_latency = 0.0;
};

// Moves remote-origin tokens of e from src to dst one at a time (local-origin
// tokens stay pinned) and keeps the prefix that minimises max(L_src, L_dst).
RebalanceResult water_filling_rebalance(ExpertId e, RankId src, RankId dst, const SolverState& state);

// Two experts at once: fwd moves src -> dst and back moves dst -> src, each
// preferring tokens that become local. One token per step, whichever side
// gives the lower pair latency; best prefix kept.
RebalanceResult exchange_rebalance(ExpertId fwd, ExpertId back, RankId src, RankId dst, const SolverState& state);

// Runs the greedy loop and returns a plan whose feasibility certificates are
// filled from the given windows. Throws std::invalid_argument when windows has
// the wrong length or negative entries.
Plan plan(const SourceRouting& routing, const Placement& base_placement, const ClusterSpec& spec,
          std::span<const Seconds> windows, const PlannerOptions& options = {});

// Fills feasibility certificates of a plan against the given windows.
void certify(Plan& plan, const ClusterSpec& spec, std::span<const Seconds> windows);

}  // namespace probe
