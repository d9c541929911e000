// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytical latency model for one expert-parallel MoE layer: per-expert GEMM
// time under an efficiency curve, straggler-bound layer compute, directional
// All-to-All volumes with deduplication, and hidden/exposed expert transfers.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "probe/types.hpp"

namespace probe {

// Per-rank deduplication factors (lambda_in, lambda_out), each >= 1.
struct DedupFactors {
  std::vector<double> in;
  std::vector<double> out;

  static DedupFactors uniform(int ep, double lambda_in = 1.0, double lambda_out = 1.0);
  // Constant model: the spec's lambdas. Fan-in model: expert hits per unique
  // remote token, measured on the routing trace against the placement
  // (falls back to 1 when the routing carries no trace).
  static DedupFactors resolve(const ClusterSpec& spec, const SourceRouting& routing, const Placement& placement);
};

struct RankLatency {
  Seconds compute = 0.0;
  double ingress_volume = 0.0;  // bytes
  double egress_volume = 0.0;   // bytes
  Seconds comm = 0.0;           // dispatch + combine
  Seconds total = 0.0;
};

struct LayerCompute {
  Seconds max = 0.0;
  double ir_proxy = 1.0;  // max / mean
};

struct TrafficVolume {
  double ingress = 0.0;
  double egress = 0.0;
};

struct MoeStepLatency {
  Seconds t_moe = 0.0;
  Seconds compute_max = 0.0;
  Seconds comm_max = 0.0;  // one direction: max_r V_r / BW
  std::vector<RankLatency> ranks;
};

Seconds expert_compute_time(TokenCount tokens, const ClusterSpec& spec);

std::vector<Seconds> rank_compute_latency(const Assignment& assignment, const Placement& placement,
                                          const ClusterSpec& spec);

LayerCompute layer_compute_latency(std::span<const Seconds> per_rank);

std::vector<TrafficVolume> traffic_volumes(const Assignment& assignment, const Placement& placement,
                                           const ClusterSpec& spec, const DedupFactors& dedup);
std::vector<TrafficVolume> traffic_volumes(const Assignment& assignment, const Placement& placement,
                                           const ClusterSpec& spec);

// T_MoE = max_r T_comp^r + 2 * max_r max(V_in, V_out) / BW.
MoeStepLatency moe_step_latency(const Assignment& assignment, const Placement& placement, const ClusterSpec& spec,
                                const DedupFactors& dedup);
MoeStepLatency moe_step_latency(const Assignment& assignment, const Placement& placement, const ClusterSpec& spec);

Seconds transfer_latency(std::size_t delta_in, std::size_t delta_out, const ClusterSpec& spec);

// max(0, max_r (transfer_r - window_r)).
Seconds exposed_overhead(std::span<const Seconds> transfer, std::span<const Seconds> window);

// CSV: rank,compute_s,v_in_bytes,v_out_bytes,comm_s,total_s
std::string breakdown_csv(std::span<const RankLatency> ranks);

}  // namespace probe
