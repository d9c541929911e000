// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types for expert-parallel MoE planning: cluster constants,
// per-source routing counts, expert placement, token assignment and plans.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace probe {

using Seconds = double;
using TokenCount = std::int64_t;
using RankId = int;
using ExpertId = int;

// Raised for inputs that violate a documented invariant. The message names the
// invariant so callers can surface it verbatim.
class InvariantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// GEMM efficiency as a function of tokens per expert, eta(n) in (0, 1].
class EfficiencyCurve {
 public:
  enum class Kind { kSaturating, kPiecewiseTable };

  EfficiencyCurve() = default;

  // eta(n) = min(1, n / n_sat).
  static EfficiencyCurve saturating(double n_sat);
  // Linear interpolation between (tokens, eta) breakpoints; clamped outside.
  static EfficiencyCurve table(std::vector<std::pair<double, double>> breakpoints);

  double operator()(TokenCount tokens) const;

  Kind kind() const { return kind_; }
  double n_sat() const { return n_sat_; }
  const std::vector<std::pair<double, double>>& breakpoints() const { return table_; }

  std::vector<std::string> validate() const;

 private:
  Kind kind_ = Kind::kSaturating;
  double n_sat_ = 64.0;
  std::vector<std::pair<double, double>> table_;
};

struct DedupModel {
  enum class Kind { kConstant, kFanin };
  Kind kind = Kind::kConstant;
  double lambda_in = 1.0;
  double lambda_out = 1.0;
};

// Hardware and model constants. Defaults describe a single 8-GPU node running a
// 128-expert top-4 model in BF16.
struct ClusterSpec {
  int ep = 8;
  int num_experts = 128;
  int top_k = 4;
  double hidden_dim = 5760.0;            // bytes per token activation
  double expert_weight_bytes = 5.0e7;    // bytes per expert
  double per_token_flops = 5.0e7;        // FLOPs per token per expert
  double peak_flops = 9.9e14;            // FLOP/s
  double net_bandwidth = 4.5e11;         // bytes/s
  EfficiencyCurve efficiency_curve = EfficiencyCurve::saturating(64.0);
  DedupModel dedup_model{};
  int replica_budget_per_rank = 3;
  int replica_slots_per_rank = 6;
  int solver_max_iters = 16;
  // Absolute convergence threshold; when unset the planner uses a fraction of
  // the initial bottleneck latency.
  std::optional<Seconds> solver_epsilon;
  Seconds attention_duration = 1.5e-4;
  Seconds predict_allgather_cost = 8.0e-6;
  Seconds planner_duration_model = 2.0e-6;  // per solver iteration
  double predictor_flops_per_token = 5.0e6;
  Seconds update_duration = 4.0e-6;

  int experts_per_rank() const { return num_experts / ep; }
  std::vector<std::string> validate() const;
};

// Row-major dense matrix of token counts.
class CountMatrix {
 public:
  CountMatrix() = default;
  CountMatrix(int rows, int cols) : rows_(rows), cols_(cols), data_(std::size_t(rows) * cols, 0) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  TokenCount& operator()(int r, int c) { return data_[std::size_t(r) * cols_ + c]; }
  TokenCount operator()(int r, int c) const { return data_[std::size_t(r) * cols_ + c]; }
  std::span<const TokenCount> row(int r) const { return {data_.data() + std::size_t(r) * cols_, std::size_t(cols_)}; }
  const std::vector<TokenCount>& data() const { return data_; }

  friend bool operator==(const CountMatrix&, const CountMatrix&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<TokenCount> data_;
};

// Per-token routing decisions. experts holds top_k ids per token, ordered by
// descending router score.
struct TokenTrace {
  int top_k = 0;
  std::vector<RankId> source;
  std::vector<ExpertId> experts;

  std::size_t size() const { return source.size(); }
  std::span<const ExpertId> experts_of(std::size_t token) const {
    return {experts.data() + token * std::size_t(top_k), std::size_t(top_k)};
  }

  friend bool operator==(const TokenTrace&, const TokenTrace&) = default;
};

// counts(r_s, e): tokens originated on rank r_s routed to expert e.
struct SourceRouting {
  CountMatrix counts;
  std::optional<TokenCount> declared_tokens;  // B, when the producer states it
  std::optional<TokenTrace> trace;

  static SourceRouting from_trace(TokenTrace trace, int ep, int num_experts);

  int ep() const { return counts.rows(); }
  int num_experts() const { return counts.cols(); }
  TokenCount total() const;
  std::vector<TokenCount> expert_loads() const;
  // B derived from the routing itself: trace length, declared value, or total / k.
  TokenCount global_tokens(int top_k) const;

  friend bool operator==(const SourceRouting&, const SourceRouting&) = default;
};

class Placement {
 public:
  Placement() = default;
  Placement(int ep, int num_experts);

  // Contiguous even sharding: expert e lives on rank e / (E / ep).
  static Placement sharded(int ep, int num_experts);

  int ep() const { return ep_; }
  int num_experts() const { return num_experts_; }

  bool base(RankId r, ExpertId e) const { return base_[std::size_t(r) * num_experts_ + e] != 0; }
  void set_base(RankId r, ExpertId e, bool on) { base_[std::size_t(r) * num_experts_ + e] = on ? 1 : 0; }
  const std::vector<std::vector<ExpertId>>& replicas() const { return replicas_; }
  std::vector<ExpertId>& replicas(RankId r) { return replicas_[r]; }
  const std::vector<ExpertId>& replicas(RankId r) const { return replicas_[r]; }

  // Lowest rank holding the base copy, or -1.
  RankId home(ExpertId e) const;
  bool hosts(RankId r, ExpertId e) const;
  std::vector<RankId> hosts_of(ExpertId e) const;
  std::vector<ExpertId> base_experts(RankId r) const;
  std::size_t total_replicas() const;

  std::vector<std::string> validate(const ClusterSpec* spec = nullptr) const;

  friend bool operator==(const Placement&, const Placement&) = default;

 private:
  int ep_ = 0;
  int num_experts_ = 0;
  std::vector<std::uint8_t> base_;
  std::vector<std::vector<ExpertId>> replicas_;
};

struct SplitEntry {
  RankId source;
  ExpertId expert;
  RankId target;
  TokenCount tokens;

  friend bool operator==(const SplitEntry&, const SplitEntry&) = default;
};

// Token split (source, expert, target) -> count, with cached marginals.
class Assignment {
 public:
  Assignment() = default;
  Assignment(int ep, int num_experts);

  int ep() const { return ep_; }
  int num_experts() const { return num_experts_; }

  TokenCount at(RankId source, ExpertId e, RankId target) const { return split_[index(source, e, target)]; }
  void add(RankId source, ExpertId e, RankId target, TokenCount delta);

  // n_{e,r}
  TokenCount expert_on_rank(ExpertId e, RankId r) const { return expert_rank_[std::size_t(e) * ep_ + r]; }
  // L_r = sum_e n_{e,r}
  const std::vector<TokenCount>& rank_loads() const { return rank_load_; }
  TokenCount source_total(RankId source, ExpertId e) const;

  std::vector<SplitEntry> entries() const;
  static Assignment from_entries(int ep, int num_experts, std::span<const SplitEntry> entries);

  bool marginals_consistent() const;
  // Empty when conservation against routing and validity against placement hold.
  std::vector<std::string> validate(const SourceRouting& routing, const Placement& placement) const;

  friend bool operator==(const Assignment&, const Assignment&) = default;

 private:
  std::size_t index(RankId s, ExpertId e, RankId t) const {
    return (std::size_t(s) * num_experts_ + e) * ep_ + t;
  }

  int ep_ = 0;
  int num_experts_ = 0;
  std::vector<TokenCount> split_;
  std::vector<TokenCount> expert_rank_;
  std::vector<TokenCount> rank_load_;
};

struct FeasibilityCertificate {
  Seconds transfer = 0.0;
  Seconds window = 0.0;
  bool ok() const { return transfer <= window; }
  friend bool operator==(const FeasibilityCertificate&, const FeasibilityCertificate&) = default;
};

struct Plan {
  Placement placement;
  Assignment assignment;
  std::vector<std::vector<ExpertId>> delta_in;
  std::vector<std::vector<ExpertId>> delta_out;
  int iterations_used = 0;
  std::vector<FeasibilityCertificate> feasibility;

  std::vector<RankId> violating_ranks() const;
  bool degraded() const { return !violating_ranks().empty(); }
  std::vector<std::string> validate(const SourceRouting& routing, const Placement& baseline,
                                    const ClusterSpec& spec) const;

  friend bool operator==(const Plan&, const Plan&) = default;
};

// Reports every violated invariant across the three inputs; empty means valid.
std::vector<std::string> validate_scenario(const ClusterSpec& spec, const SourceRouting& routing,
                                           const Placement& placement);

}  // namespace probe
