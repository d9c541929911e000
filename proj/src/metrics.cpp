// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/metrics.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace probe {

namespace {

template <class T>
double ratio(std::span<const T> loads) {
  if (loads.empty()) throw std::invalid_argument("empty workload");
  double sum = 0.0, mx = 0.0;
  for (T v : loads) {
    sum += double(v);
    mx = std::max(mx, double(v));
  }
  if (!(mx > 0.0)) throw std::invalid_argument("empty workload");
  return mx / (sum / double(loads.size()));
}

}  // namespace

double imbalance_ratio(std::span<const TokenCount> loads) { return ratio(loads); }
double imbalance_ratio(std::span<const double> loads) { return ratio(loads); }

std::vector<TokenCount> rank_loads(const SourceRouting& routing, const Placement& placement) {
  std::vector<TokenCount> out(std::size_t(placement.ep()), 0);
  const auto n = routing.expert_loads();
  for (ExpertId e = 0; e < routing.num_experts(); ++e) {
    const RankId r = placement.home(e);
    if (r < 0) throw InvariantError(fmt::format("placement: expert {} has no base host", e));
    out[r] += n[e];
  }
  return out;
}

std::vector<TokenCount> rank_loads(const Assignment& assignment) { return assignment.rank_loads(); }

void IRSeries::push(int label, double tokens, double latency) {
  labels.push_back(label);
  ir_tokens.push_back(tokens);
  ir_latency.push_back(latency);
}

std::string IRSeries::to_csv() const {
  std::string out = "step,ir_tokens,ir_latency\n";
  for (std::size_t i = 0; i < labels.size(); ++i)
    out += fmt::format("{},{:.17g},{:.17g}\n", labels[i], ir_tokens[i], ir_latency[i]);
  return out;
}

}  // namespace probe
