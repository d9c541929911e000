// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "probe/types.hpp"

namespace probe {

// max_r L_r / mean_r L_r. Throws std::invalid_argument("empty workload") when
// no load is positive.
double imbalance_ratio(std::span<const TokenCount> loads);
double imbalance_ratio(std::span<const double> loads);

// Sharded semantics: every token counts on the base host of its expert.
std::vector<TokenCount> rank_loads(const SourceRouting& routing, const Placement& placement);
// sum_e n_{e,r}
std::vector<TokenCount> rank_loads(const Assignment& assignment);

struct IRSeries {
  std::vector<int> labels;
  std::vector<double> ir_tokens;
  std::vector<double> ir_latency;

  void push(int label, double tokens, double latency);
  // CSV: step,ir_tokens,ir_latency
  std::string to_csv() const;
};

}  // namespace probe
