// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "probe/perf_model.hpp"

namespace probe {

EfficiencyCurve EfficiencyCurve::saturating(double n_sat) {
  EfficiencyCurve c;
  c.kind_ = Kind::kSaturating;
  c.n_sat_ = n_sat;
  return c;
}

EfficiencyCurve EfficiencyCurve::table(std::vector<std::pair<double, double>> breakpoints) {
  EfficiencyCurve c;
  c.kind_ = Kind::kPiecewiseTable;
  c.table_ = std::move(breakpoints);
  return c;
}

double EfficiencyCurve::operator()(TokenCount tokens) const {
  const double n = static_cast<double>(tokens);
  if (kind_ == Kind::kSaturating) return std::min(1.0, n / n_sat_);
  if (n <= table_.front().first) return table_.front().second;
  if (n >= table_.back().first) return table_.back().second;
  auto hi = std::upper_bound(table_.begin(), table_.end(), n,
                             [](double v, const auto& bp) { return v < bp.first; });
  auto lo = hi - 1;
  const double t = (n - lo->first) / (hi->first - lo->first);
  return lo->second + t * (hi->second - lo->second);
}

std::vector<std::string> EfficiencyCurve::validate() const {
  std::vector<std::string> out;
  if (kind_ == Kind::kSaturating) {
    if (!(n_sat_ > 0.0) || !std::isfinite(n_sat_))
      out.push_back("efficiency_curve: n_sat must be positive");
    return out;
  }
  if (table_.empty()) {
    out.push_back("efficiency_curve: piecewise table is empty");
    return out;
  }
  for (std::size_t i = 0; i < table_.size(); ++i) {
    const auto [n, eta] = table_[i];
    if (!(eta > 0.0 && eta <= 1.0)) out.push_back(fmt::format("efficiency_curve: eta at breakpoint {} outside (0,1]", i));
    if (i > 0 && !(n > table_[i - 1].first))
      out.push_back("efficiency_curve: breakpoints must be strictly increasing in token count");
    if (i > 0 && eta < table_[i - 1].second)
      out.push_back("efficiency_curve: eta must be non-decreasing in token count");
  }
  return out;
}

std::vector<std::string> ClusterSpec::validate() const {
  std::vector<std::string> out;
  if (ep <= 0) out.push_back("cluster: ep must be positive");
  if (num_experts <= 0) out.push_back("cluster: num_experts must be positive");
  if (top_k <= 0) out.push_back("cluster: top_k must be positive");
  if (ep > 0 && num_experts > 0) {
    if (num_experts < ep || num_experts % ep != 0)
      out.push_back("cluster: num_experts must be a positive multiple of ep (even base sharding)");
  }
  if (top_k > num_experts) out.push_back("cluster: top_k must not exceed num_experts");
  auto positive = [&](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) out.push_back(fmt::format("cluster: {} must be positive", name));
  };
  positive(hidden_dim, "hidden_dim");
  positive(expert_weight_bytes, "expert_weight_bytes");
  positive(per_token_flops, "per_token_flops");
  positive(peak_flops, "peak_flops");
  positive(net_bandwidth, "net_bandwidth");
  if (replica_budget_per_rank < 0) out.push_back("cluster: replica_budget_per_rank must be non-negative");
  if (replica_slots_per_rank < 0) out.push_back("cluster: replica_slots_per_rank must be non-negative");
  if (2 * replica_budget_per_rank > replica_slots_per_rank)
    out.push_back("cluster: replica_budget_per_rank exceeds half of replica_slots_per_rank (double buffering)");
  if (solver_max_iters <= 0) out.push_back("cluster: solver_max_iters must be positive");
  if (solver_epsilon && !(*solver_epsilon >= 0.0)) out.push_back("cluster: solver_epsilon must be non-negative");
  auto non_negative = [&](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) out.push_back(fmt::format("cluster: {} must be non-negative", name));
  };
  non_negative(attention_duration, "attention_duration");
  non_negative(predict_allgather_cost, "predict_allgather_cost");
  non_negative(planner_duration_model, "planner_duration_model");
  non_negative(predictor_flops_per_token, "predictor_flops_per_token");
  non_negative(update_duration, "update_duration");
  if (dedup_model.kind == DedupModel::Kind::kConstant &&
      !(dedup_model.lambda_in >= 1.0 && dedup_model.lambda_out >= 1.0))
    out.push_back("cluster: dedup factors must be >= 1");
  for (auto& m : efficiency_curve.validate()) out.push_back("cluster: " + m);
  return out;
}

SourceRouting SourceRouting::from_trace(TokenTrace trace, int ep, int num_experts) {
  SourceRouting r;
  r.counts = CountMatrix(ep, num_experts);
  for (std::size_t t = 0; t < trace.size(); ++t) {
    for (ExpertId e : trace.experts_of(t)) r.counts(trace.source[t], e) += 1;
  }
  r.declared_tokens = static_cast<TokenCount>(trace.size());
  r.trace = std::move(trace);
  return r;
}

TokenCount SourceRouting::total() const {
  return std::accumulate(counts.data().begin(), counts.data().end(), TokenCount{0});
}

std::vector<TokenCount> SourceRouting::expert_loads() const {
  std::vector<TokenCount> n(std::size_t(counts.cols()), 0);
  for (int s = 0; s < counts.rows(); ++s)
    for (int e = 0; e < counts.cols(); ++e) n[e] += counts(s, e);
  return n;
}

TokenCount SourceRouting::global_tokens(int top_k) const {
  if (trace) return static_cast<TokenCount>(trace->size());
  if (declared_tokens) return *declared_tokens;
  return top_k > 0 ? total() / top_k : 0;
}

Placement::Placement(int ep, int num_experts)
    : ep_(ep), num_experts_(num_experts), base_(std::size_t(ep) * num_experts, 0), replicas_(std::size_t(ep)) {}

Placement Placement::sharded(int ep, int num_experts) {
  Placement p(ep, num_experts);
  const int per_rank = num_experts / ep;
  for (ExpertId e = 0; e < num_experts; ++e) p.set_base(e / per_rank, e, true);
  return p;
}

RankId Placement::home(ExpertId e) const {
  for (RankId r = 0; r < ep_; ++r)
    if (base(r, e)) return r;
  return -1;
}

bool Placement::hosts(RankId r, ExpertId e) const {
  if (base(r, e)) return true;
  const auto& rep = replicas_[r];
  return std::find(rep.begin(), rep.end(), e) != rep.end();
}

std::vector<RankId> Placement::hosts_of(ExpertId e) const {
  std::vector<RankId> out;
  for (RankId r = 0; r < ep_; ++r)
    if (hosts(r, e)) out.push_back(r);
  return out;
}

std::vector<ExpertId> Placement::base_experts(RankId r) const {
  std::vector<ExpertId> out;
  for (ExpertId e = 0; e < num_experts_; ++e)
    if (base(r, e)) out.push_back(e);
  return out;
}

std::size_t Placement::total_replicas() const {
  std::size_t n = 0;
  for (const auto& rep : replicas_) n += rep.size();
  return n;
}

std::vector<std::string> Placement::validate(const ClusterSpec* spec) const {
  std::vector<std::string> out;
  for (ExpertId e = 0; e < num_experts_; ++e) {
    int owners = 0;
    for (RankId r = 0; r < ep_; ++r) owners += base(r, e) ? 1 : 0;
    if (owners != 1)
      out.push_back(fmt::format("placement: base not a partition (expert {} has {} base hosts)", e, owners));
  }
  for (RankId r = 0; r < ep_; ++r) {
    const auto& rep = replicas_[r];
    if (spec && static_cast<int>(rep.size()) > spec->replica_budget_per_rank)
      out.push_back(fmt::format("placement: rank {} holds {} replicas, budget is {}", r, rep.size(),
                                spec->replica_budget_per_rank));
    for (std::size_t i = 0; i < rep.size(); ++i) {
      const ExpertId e = rep[i];
      if (e < 0 || e >= num_experts_) {
        out.push_back(fmt::format("placement: rank {} replica id {} out of range", r, e));
        continue;
      }
      if (base(r, e) || std::find(rep.begin(), rep.begin() + std::ptrdiff_t(i), e) != rep.begin() + std::ptrdiff_t(i))
        out.push_back(fmt::format("placement: expert {} appears twice on rank {}", e, r));
    }
  }
  return out;
}

Assignment::Assignment(int ep, int num_experts)
    : ep_(ep),
      num_experts_(num_experts),
      split_(std::size_t(ep) * num_experts * ep, 0),
      expert_rank_(std::size_t(num_experts) * ep, 0),
      rank_load_(std::size_t(ep), 0) {}

void Assignment::add(RankId source, ExpertId e, RankId target, TokenCount delta) {
  split_[index(source, e, target)] += delta;
  expert_rank_[std::size_t(e) * ep_ + target] += delta;
  rank_load_[target] += delta;
}

TokenCount Assignment::source_total(RankId source, ExpertId e) const {
  TokenCount n = 0;
  for (RankId t = 0; t < ep_; ++t) n += at(source, e, t);
  return n;
}

std::vector<SplitEntry> Assignment::entries() const {
  std::vector<SplitEntry> out;
  for (RankId s = 0; s < ep_; ++s)
    for (ExpertId e = 0; e < num_experts_; ++e)
      for (RankId t = 0; t < ep_; ++t)
        if (const auto n = at(s, e, t); n != 0) out.push_back({s, e, t, n});
  return out;
}

Assignment Assignment::from_entries(int ep, int num_experts, std::span<const SplitEntry> entries) {
  Assignment a(ep, num_experts);
  for (const auto& x : entries) {
    if (x.source < 0 || x.source >= ep || x.target < 0 || x.target >= ep || x.expert < 0 || x.expert >= num_experts)
      throw InvariantError(fmt::format("assignment: entry ({}, {}, {}) out of range", x.source, x.expert, x.target));
    a.add(x.source, x.expert, x.target, x.tokens);
  }
  return a;
}

bool Assignment::marginals_consistent() const {
  Assignment fresh(ep_, num_experts_);
  for (const auto& x : entries()) fresh.add(x.source, x.expert, x.target, x.tokens);
  return fresh.expert_rank_ == expert_rank_ && fresh.rank_load_ == rank_load_;
}

std::vector<std::string> Assignment::validate(const SourceRouting& routing, const Placement& placement) const {
  std::vector<std::string> out;
  if (routing.ep() != ep_ || routing.num_experts() != num_experts_ || placement.ep() != ep_ ||
      placement.num_experts() != num_experts_) {
    out.push_back("assignment: dimensions do not match routing/placement");
    return out;
  }
  for (RankId s = 0; s < ep_; ++s)
    for (ExpertId e = 0; e < num_experts_; ++e) {
      if (source_total(s, e) != routing.counts(s, e))
        out.push_back(fmt::format("assignment: token conservation violated for source {} expert {}", s, e));
      for (RankId t = 0; t < ep_; ++t) {
        const auto n = at(s, e, t);
        if (n < 0) out.push_back(fmt::format("assignment: negative count at ({}, {}, {})", s, e, t));
        if (n > 0 && !placement.hosts(t, e))
          out.push_back(fmt::format("assignment: routing validity violated, expert {} not hosted on rank {}", e, t));
      }
    }
  return out;
}

std::vector<RankId> Plan::violating_ranks() const {
  std::vector<RankId> out;
  for (std::size_t r = 0; r < feasibility.size(); ++r)
    if (!feasibility[r].ok()) out.push_back(static_cast<RankId>(r));
  return out;
}

std::vector<std::string> Plan::validate(const SourceRouting& routing, const Placement& baseline,
                                        const ClusterSpec& spec) const {
  std::vector<std::string> out = placement.validate(&spec);
  for (auto& m : assignment.validate(routing, placement)) out.push_back(std::move(m));
  const int ep = placement.ep();
  if (static_cast<int>(delta_in.size()) != ep || static_cast<int>(delta_out.size()) != ep ||
      static_cast<int>(feasibility.size()) != ep) {
    out.push_back("plan: per-rank vectors have wrong length");
    return out;
  }
  std::vector<int> sent(std::size_t(placement.num_experts()), 0);
  for (RankId r = 0; r < ep; ++r) {
    auto want = placement.replicas(r);
    auto got = delta_in[r];
    std::sort(want.begin(), want.end());
    std::sort(got.begin(), got.end());
    if (want != got) out.push_back(fmt::format("plan: delta_in of rank {} does not match its replicas", r));
    for (ExpertId e : delta_out[r]) {
      if (!baseline.base(r, e))
        out.push_back(fmt::format("plan: rank {} sends expert {} it does not hold", r, e));
      sent[e] += 1;
    }
    const Seconds trans = transfer_latency(delta_in[r].size(), delta_out[r].size(), spec);
    if (trans != feasibility[r].transfer)
      out.push_back(fmt::format("plan: feasibility certificate of rank {} is stale", r));
    if (!feasibility[r].ok())
      out.push_back(fmt::format("plan: rank {} transfer {:.6g}s exceeds window {:.6g}s", r, feasibility[r].transfer,
                                feasibility[r].window));
  }
  for (ExpertId e = 0; e < placement.num_experts(); ++e) {
    int received = 0;
    for (RankId r = 0; r < ep; ++r)
      received += static_cast<int>(std::count(delta_in[r].begin(), delta_in[r].end(), e));
    if (received != sent[e])
      out.push_back(fmt::format("plan: expert {} received {} times but sent {} times", e, received, sent[e]));
  }
  return out;
}

std::vector<std::string> validate_scenario(const ClusterSpec& spec, const SourceRouting& routing,
                                           const Placement& placement) {
  std::vector<std::string> out = spec.validate();
  if (routing.ep() != spec.ep || routing.num_experts() != spec.num_experts)
    out.push_back(fmt::format("routing: counts shape {}x{} does not match cluster {}x{}", routing.ep(),
                              routing.num_experts(), spec.ep, spec.num_experts));
  if (placement.ep() != spec.ep || placement.num_experts() != spec.num_experts)
    out.push_back(fmt::format("placement: shape {}x{} does not match cluster {}x{}", placement.ep(),
                              placement.num_experts(), spec.ep, spec.num_experts));
  for (TokenCount v : routing.counts.data())
    if (v < 0) {
      out.push_back("routing: negative token count");
      break;
    }
  if (routing.declared_tokens && routing.total() != *routing.declared_tokens * spec.top_k)
    out.push_back(fmt::format("routing: token conservation violated (sum of counts {} != B*k = {}*{})",
                              routing.total(), *routing.declared_tokens, spec.top_k));
  if (routing.trace) {
    const auto& tr = routing.trace.value();
    if (tr.top_k != spec.top_k) out.push_back("routing: trace top_k differs from cluster top_k");
    if (tr.experts.size() != tr.source.size() * std::size_t(std::max(tr.top_k, 0)))
      out.push_back("routing: trace expert list length is not tokens*top_k");
    else if (std::any_of(tr.source.begin(), tr.source.end(), [&](RankId r) { return r < 0 || r >= spec.ep; }) ||
             std::any_of(tr.experts.begin(), tr.experts.end(),
                         [&](ExpertId e) { return e < 0 || e >= spec.num_experts; }))
      out.push_back("routing: trace references a rank or expert out of range");
    else if (routing.ep() == spec.ep && routing.num_experts() == spec.num_experts &&
             SourceRouting::from_trace(tr, spec.ep, spec.num_experts).counts != routing.counts)
      out.push_back("routing: counts do not match the token trace");
  }
  if (placement.ep() == spec.ep && placement.num_experts() == spec.num_experts)
    for (auto& m : placement.validate(&spec)) out.push_back(std::move(m));
  return out;
}

}  // namespace probe
