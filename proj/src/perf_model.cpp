// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/perf_model.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace probe {

DedupFactors DedupFactors::uniform(int ep, double lambda_in, double lambda_out) {
  return {std::vector<double>(std::size_t(ep), lambda_in), std::vector<double>(std::size_t(ep), lambda_out)};
}

DedupFactors DedupFactors::resolve(const ClusterSpec& spec, const SourceRouting& routing,
                                   const Placement& placement) {
  if (spec.dedup_model.kind == DedupModel::Kind::kConstant)
    return uniform(spec.ep, spec.dedup_model.lambda_in, spec.dedup_model.lambda_out);
  DedupFactors f = uniform(spec.ep);
  if (!routing.trace) return f;
  const auto& tr = *routing.trace;
  // hits / unique tokens, per receiving rank and per sending rank.
  std::vector<double> in_hits(std::size_t(spec.ep), 0), in_unique(std::size_t(spec.ep), 0);
  std::vector<double> out_hits(std::size_t(spec.ep), 0), out_unique(std::size_t(spec.ep), 0);
  std::vector<int> per_rank(static_cast<std::size_t>(spec.ep));
  for (std::size_t t = 0; t < tr.size(); ++t) {
    std::fill(per_rank.begin(), per_rank.end(), 0);
    const RankId src = tr.source[t];
    for (ExpertId e : tr.experts_of(t)) per_rank[placement.home(e)] += 1;
    bool any_remote = false;
    for (RankId r = 0; r < spec.ep; ++r) {
      if (r == src || per_rank[r] == 0) continue;
      in_hits[r] += per_rank[r];
      in_unique[r] += 1;
      out_hits[src] += per_rank[r];
      any_remote = true;
    }
    if (any_remote) out_unique[src] += 1;
  }
  for (RankId r = 0; r < spec.ep; ++r) {
    if (in_unique[r] > 0) f.in[r] = std::max(1.0, in_hits[r] / in_unique[r]);
    if (out_unique[r] > 0) f.out[r] = std::max(1.0, out_hits[r] / out_unique[r]);
  }
  return f;
}

Seconds expert_compute_time(TokenCount tokens, const ClusterSpec& spec) {
  if (tokens <= 0) return 0.0;
  const double eta = spec.efficiency_curve(tokens);
  return static_cast<double>(tokens) * spec.per_token_flops / (eta * spec.peak_flops);
}

std::vector<Seconds> rank_compute_latency(const Assignment& assignment, const Placement& placement,
                                          const ClusterSpec& spec) {
  std::vector<Seconds> out(std::size_t(assignment.ep()), 0.0);
  for (ExpertId e = 0; e < assignment.num_experts(); ++e)
    for (RankId r = 0; r < assignment.ep(); ++r) {
      const TokenCount n = assignment.expert_on_rank(e, r);
      if (n == 0) continue;
      if (!placement.hosts(r, e))
        throw InvariantError(fmt::format("assignment routes expert {} to rank {} which does not host it", e, r));
      out[r] += expert_compute_time(n, spec);
    }
  return out;
}

LayerCompute layer_compute_latency(std::span<const Seconds> per_rank) {
  if (per_rank.empty()) throw std::invalid_argument("layer_compute_latency: empty rank list");
  const Seconds mx = *std::max_element(per_rank.begin(), per_rank.end());
  const Seconds mean = std::accumulate(per_rank.begin(), per_rank.end(), 0.0) / double(per_rank.size());
  return {mx, mean > 0.0 ? mx / mean : 1.0};
}

std::vector<TrafficVolume> traffic_volumes(const Assignment& assignment, const Placement& placement,
                                           const ClusterSpec& spec, const DedupFactors& dedup) {
  const int ep = assignment.ep();
  std::vector<double> in_tokens(std::size_t(ep), 0.0), out_tokens(std::size_t(ep), 0.0);
  for (RankId s = 0; s < ep; ++s)
    for (ExpertId e = 0; e < assignment.num_experts(); ++e)
      for (RankId t = 0; t < ep; ++t) {
        if (t == s) continue;
        const TokenCount n = assignment.at(s, e, t);
        if (n == 0) continue;
        if (!placement.hosts(t, e))
          throw InvariantError(fmt::format("assignment routes expert {} to rank {} which does not host it", e, t));
        in_tokens[t] += double(n);
        out_tokens[s] += double(n);
      }
  std::vector<TrafficVolume> out(static_cast<std::size_t>(ep));
  for (RankId r = 0; r < ep; ++r) {
    out[r].ingress = spec.hidden_dim / dedup.in[r] * in_tokens[r];
    out[r].egress = spec.hidden_dim / dedup.out[r] * out_tokens[r];
  }
  return out;
}

std::vector<TrafficVolume> traffic_volumes(const Assignment& assignment, const Placement& placement,
                                           const ClusterSpec& spec) {
  return traffic_volumes(assignment, placement, spec,
                         DedupFactors::uniform(assignment.ep(), spec.dedup_model.lambda_in, spec.dedup_model.lambda_out));
}

MoeStepLatency moe_step_latency(const Assignment& assignment, const Placement& placement, const ClusterSpec& spec,
                                const DedupFactors& dedup) {
  const auto compute = rank_compute_latency(assignment, placement, spec);
  const auto volumes = traffic_volumes(assignment, placement, spec, dedup);
  MoeStepLatency out;
  out.ranks.resize(compute.size());
  for (std::size_t r = 0; r < compute.size(); ++r) {
    auto& rl = out.ranks[r];
    rl.compute = compute[r];
    rl.ingress_volume = volumes[r].ingress;
    rl.egress_volume = volumes[r].egress;
    const Seconds one_way = std::max(rl.ingress_volume, rl.egress_volume) / spec.net_bandwidth;
    rl.comm = 2.0 * one_way;
    rl.total = rl.compute + rl.comm;
    out.compute_max = std::max(out.compute_max, rl.compute);
    out.comm_max = std::max(out.comm_max, one_way);
  }
  out.t_moe = out.compute_max + 2.0 * out.comm_max;
  return out;
}

MoeStepLatency moe_step_latency(const Assignment& assignment, const Placement& placement, const ClusterSpec& spec) {
  return moe_step_latency(assignment, placement, spec,
                          DedupFactors::uniform(assignment.ep(), spec.dedup_model.lambda_in, spec.dedup_model.lambda_out));
}

Seconds transfer_latency(std::size_t delta_in, std::size_t delta_out, const ClusterSpec& spec) {
  return static_cast<double>(std::max(delta_in, delta_out)) * spec.expert_weight_bytes / spec.net_bandwidth;
}

Seconds exposed_overhead(std::span<const Seconds> transfer, std::span<const Seconds> window) {
  if (transfer.size() != window.size())
    throw std::invalid_argument("exposed_overhead: transfer and window lists differ in length");
  Seconds worst = 0.0;
  for (std::size_t r = 0; r < transfer.size(); ++r) worst = std::max(worst, transfer[r] - window[r]);
  return worst;
}

std::string breakdown_csv(std::span<const RankLatency> ranks) {
  std::string out = "rank,compute_s,v_in_bytes,v_out_bytes,comm_s,total_s\n";
  for (std::size_t r = 0; r < ranks.size(); ++r) {
    const auto& x = ranks[r];
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r, x.compute, x.ingress_volume,
                       x.egress_volume, x.comm, x.total);
  }
  return out;
}

}  // namespace probe
