// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exhaustive reference solver for tiny planning instances. It enumerates every
// replica set within the budgets and every token split discretised to a fixed
// granularity, so it shares no search logic with the greedy planner.

#pragma once

#include <cstddef>
#include <span>

#include "probe/types.hpp"

namespace probe {

struct OracleLimits {
  int max_ep = 4;
  int max_experts = 8;
  int max_total_replicas = 3;
  TokenCount granularity = 10;
  // Tokens that originate on an expert's base host stay there, as in the
  // greedy planner. Off gives the unconstrained optimum.
  bool pin_home_tokens = true;
};

struct OracleResult {
  Seconds best_latency = 0.0;      // min over candidates of max_r (compute + comm)
  Seconds baseline_latency = 0.0;  // sharded, no replicas
  Plan best_plan;
  std::size_t replica_sets = 0;
  std::size_t evaluations = 0;
};

// Throws std::invalid_argument("instance too large for oracle") when the
// instance exceeds the limits.
OracleResult oracle_optimal(const SourceRouting& routing, const Placement& base_placement, const ClusterSpec& spec,
                            std::span<const Seconds> windows, const OracleLimits& limits = {});

}  // namespace probe
