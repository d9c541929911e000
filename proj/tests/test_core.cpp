// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "probe/metrics.hpp"
#include "probe/perf_model.hpp"
#include "probe/planner.hpp"
#include "probe/types.hpp"

namespace probe {
namespace {

bool mentions(const std::vector<std::string>& report, const std::string& needle) {
  return std::any_of(report.begin(), report.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

ClusterSpec small_spec(int ep, int experts, int k = 1) {
  ClusterSpec s;
  s.ep = ep;
  s.num_experts = experts;
  s.top_k = k;
  return s;
}

SourceRouting routing_of(std::vector<std::vector<TokenCount>> rows) {
  SourceRouting r;
  r.counts = CountMatrix(int(rows.size()), int(rows[0].size()));
  for (std::size_t s = 0; s < rows.size(); ++s)
    for (std::size_t e = 0; e < rows[s].size(); ++e) r.counts(int(s), int(e)) = rows[s][e];
  return r;
}

TEST(ClusterSpecTest, DefaultsValidate) { EXPECT_TRUE(ClusterSpec{}.validate().empty()); }

TEST(ClusterSpecTest, RejectsUnevenSharding) {
  auto s = small_spec(4, 6);
  EXPECT_FALSE(s.validate().empty());
}

TEST(ClusterSpecTest, RejectsBudgetAboveHalfTheSlots) {
  auto s = small_spec(2, 4);
  s.replica_budget_per_rank = 4;
  s.replica_slots_per_rank = 6;
  EXPECT_FALSE(s.validate().empty());
}

TEST(ClusterSpecTest, RejectsNonPositiveRates) {
  auto s = small_spec(2, 4);
  s.net_bandwidth = 0;
  EXPECT_FALSE(s.validate().empty());
  s = small_spec(2, 4, 5);
  EXPECT_FALSE(s.validate().empty());
}

TEST(EfficiencyCurveTest, SaturatingIsMonotoneAndBounded) {
  const auto c = EfficiencyCurve::saturating(64);
  double prev = 0;
  for (TokenCount n = 1; n < 300; ++n) {
    const double v = c(n);
    EXPECT_GT(v, 0);
    EXPECT_LE(v, 1);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_DOUBLE_EQ(c(32), 0.5);
}

TEST(EfficiencyCurveTest, TableNeedsIncreasingBreakpoints) {
  EXPECT_FALSE(EfficiencyCurve::table({{10, 0.5}, {5, 1.0}}).validate().empty());
  EXPECT_TRUE(EfficiencyCurve::table({{1, 0.1}, {16, 0.5}, {128, 1.0}}).validate().empty());
}

TEST(ValidateScenarioTest, ValidTwoRankFourExpert) {
  auto spec = small_spec(2, 4);
  auto r = routing_of({{10, 20, 30, 40}, {5, 5, 5, 5}});
  EXPECT_TRUE(validate_scenario(spec, r, Placement::sharded(2, 4)).empty());
}

TEST(ValidateScenarioTest, DuplicateBaseIsNotAPartition) {
  auto spec = small_spec(2, 4);
  auto r = routing_of({{10, 20, 30, 40}, {5, 5, 5, 5}});
  auto p = Placement::sharded(2, 4);
  p.set_base(1, 0, true);
  EXPECT_TRUE(mentions(validate_scenario(spec, r, p), "base not a partition"));
}

TEST(ValidateScenarioTest, DeclaredTokensMismatch) {
  auto spec = small_spec(2, 4, 2);
  auto r = routing_of({{10, 20, 30, 40}, {5, 5, 5, 5}});
  r.declared_tokens = 100;  // 100 * 2 != 120
  EXPECT_TRUE(mentions(validate_scenario(spec, r, Placement::sharded(2, 4)), "token conservation"));
}

TEST(PlacementTest, ReplicaBudgetAndDuplicates) {
  auto spec = small_spec(2, 8);
  auto p = Placement::sharded(2, 8);
  p.replicas(1) = {0, 1, 2, 3};
  EXPECT_FALSE(p.validate(&spec).empty());
  p.replicas(1) = {4};  // already a base expert of rank 1
  EXPECT_FALSE(p.validate(&spec).empty());
  p.replicas(1) = {0, 1};
  EXPECT_TRUE(p.validate(&spec).empty());
  EXPECT_EQ(p.total_replicas(), 2u);
  EXPECT_TRUE(p.hosts(1, 0));
  EXPECT_EQ(p.home(0), 0);
}

TEST(AssignmentTest, ConservationAndValidity) {
  auto r = routing_of({{10, 20}, {30, 40}});
  auto p = Placement::sharded(2, 2);
  auto a = init_locality_first(r, p);
  EXPECT_TRUE(a.validate(r, p).empty());
  a.add(1, 0, 0, -5);
  EXPECT_FALSE(a.validate(r, p).empty());  // conservation
  a.add(1, 0, 1, 5);
  EXPECT_FALSE(a.validate(r, p).empty());  // rank 1 does not host e0
  p.replicas(1) = {0};
  EXPECT_TRUE(a.validate(r, p).empty());
  EXPECT_TRUE(a.marginals_consistent());
}

TEST(AssignmentTest, EntriesRoundTrip) {
  auto r = routing_of({{10, 0, 3}, {0, 7, 1}, {2, 2, 2}});
  auto a = init_locality_first(r, Placement::sharded(3, 3));
  a.add(2, 0, 0, -1);
  a.add(2, 0, 2, 1);
  const auto e = a.entries();
  EXPECT_EQ(Assignment::from_entries(3, 3, e), a);
}

// -- perf model; expected values are evaluated by hand from the cost formulas --

TEST(PerfModelTest, ExpertComputeTime) {
  ClusterSpec s = small_spec(2, 2);
  s.per_token_flops = 1e9;
  s.peak_flops = 1e15;
  s.efficiency_curve = EfficiencyCurve::saturating(256);
  EXPECT_EQ(expert_compute_time(0, s), 0.0);
  EXPECT_NEAR(expert_compute_time(256, s), 2.56e-4, 1e-15);
  EXPECT_NEAR(expert_compute_time(64, s), 2.56e-4, 1e-15);  // fragmentation penalty
}

TEST(PerfModelTest, RankComputeAdditivityAndSymmetry) {
  ClusterSpec s = small_spec(2, 4);
  auto r = routing_of({{100, 50, 0, 0}, {0, 0, 0, 0}});
  auto p = Placement::sharded(2, 4);
  const auto lat = rank_compute_latency(init_locality_first(r, p), p, s);
  EXPECT_DOUBLE_EQ(lat[0], expert_compute_time(100, s) + expert_compute_time(50, s));
  EXPECT_EQ(lat[1], 0.0);

  auto u = routing_of({{100, 0}, {0, 100}});
  auto pu = Placement::sharded(2, 2);
  const auto lu = rank_compute_latency(init_locality_first(u, pu), pu, small_spec(2, 2));
  EXPECT_EQ(lu[0], lu[1]);
}

TEST(PerfModelTest, ComputeSkewFollowsLoadRatioAtConstantEfficiency) {
  ClusterSpec s = small_spec(4, 4);
  s.efficiency_curve = EfficiencyCurve::saturating(1);  // eta = 1 for any n >= 1
  // max / mean = 227 / 100
  auto r = routing_of({{227, 0, 0, 0}, {0, 80, 0, 0}, {0, 0, 50, 0}, {0, 0, 0, 43}});
  auto p = Placement::sharded(4, 4);
  const auto lat = rank_compute_latency(init_locality_first(r, p), p, s);
  EXPECT_NEAR(layer_compute_latency(lat).ir_proxy, 2.27, 1e-12);
}

TEST(PerfModelTest, LayerComputeLatency) {
  const std::vector<double> a{1, 1, 1, 1}, b{2, 1, 1, 0};
  EXPECT_EQ(layer_compute_latency(a).max, 1.0);
  EXPECT_EQ(layer_compute_latency(a).ir_proxy, 1.0);
  EXPECT_EQ(layer_compute_latency(b).max, 2.0);
  EXPECT_EQ(layer_compute_latency(b).ir_proxy, 2.0);
}

TEST(PerfModelTest, TrafficVolumes) {
  ClusterSpec s = small_spec(2, 2);
  s.hidden_dim = 4096;
  auto local = routing_of({{100, 0}, {0, 100}});
  auto p = Placement::sharded(2, 2);
  for (const auto& v : traffic_volumes(init_locality_first(local, p), p, s)) {
    EXPECT_EQ(v.ingress, 0.0);
    EXPECT_EQ(v.egress, 0.0);
  }
  auto remote = routing_of({{0, 100}, {0, 0}});
  const auto a = init_locality_first(remote, p);
  auto v = traffic_volumes(a, p, s);
  EXPECT_DOUBLE_EQ(v[0].egress, 409600.0);
  EXPECT_DOUBLE_EQ(v[1].ingress, 409600.0);
  DedupFactors d = DedupFactors::uniform(2);
  d.in[1] = 2;
  v = traffic_volumes(a, p, s, d);
  EXPECT_DOUBLE_EQ(v[1].ingress, 204800.0);
}

TEST(PerfModelTest, StepLatencyHandExample) {
  ClusterSpec s = small_spec(2, 2);
  s.hidden_dim = 1000;
  s.net_bandwidth = 1e9;
  s.per_token_flops = 1e9;
  s.peak_flops = 1e12;
  s.efficiency_curve = EfficiencyCurve::saturating(1);
  // r0 keeps 100 local of e0 and sends 50 to e1; r1 sends 20 to e0.
  auto r = routing_of({{100, 50}, {20, 0}});
  auto p = Placement::sharded(2, 2);
  const auto m = moe_step_latency(init_locality_first(r, p), p, s);
  // compute: r0 = 120 tokens * 1e-3 s, r1 = 50 tokens * 1e-3 s
  EXPECT_NEAR(m.ranks[0].compute, 0.120, 1e-15);
  EXPECT_NEAR(m.ranks[1].compute, 0.050, 1e-15);
  // r0: in 20 tok, out 50 tok -> 50e3 B / 1e9 = 5e-5 per direction
  EXPECT_NEAR(m.ranks[0].comm, 2 * 5e-5, 1e-18);
  EXPECT_NEAR(m.ranks[1].comm, 2 * 5e-5, 1e-18);
  EXPECT_NEAR(m.ranks[0].total, 0.120 + 1e-4, 1e-15);
  EXPECT_NEAR(m.t_moe, 0.120 + 2 * 5e-5, 1e-15);
}

TEST(PerfModelTest, ZeroTrafficUniformCompute) {
  ClusterSpec s = small_spec(2, 2);
  auto r = routing_of({{64, 0}, {0, 64}});
  auto p = Placement::sharded(2, 2);
  const auto m = moe_step_latency(init_locality_first(r, p), p, s);
  EXPECT_EQ(m.t_moe, m.ranks[0].compute);
}

TEST(PerfModelTest, DoublePenaltySitsOnTheHotRank) {
  ClusterSpec s = small_spec(2, 2);
  auto r = routing_of({{400, 20}, {400, 20}});
  auto p = Placement::sharded(2, 2);
  const auto m = moe_step_latency(init_locality_first(r, p), p, s);
  EXPECT_GT(m.ranks[0].compute, m.ranks[1].compute);
  EXPECT_GT(m.ranks[0].ingress_volume, m.ranks[1].ingress_volume);

  const Plan pl = plan(r, p, s, std::vector<Seconds>{1.0, 1.0});
  const auto after = moe_step_latency(pl.assignment, pl.placement, s);
  EXPECT_LT(after.compute_max, m.compute_max);
  EXPECT_LT(after.comm_max, m.comm_max);
}

TEST(PerfModelTest, TransferLatency) {
  ClusterSpec s = small_spec(2, 2);
  s.expert_weight_bytes = 1e8;
  s.net_bandwidth = 9e11;
  EXPECT_EQ(transfer_latency(0, 0, s), 0.0);
  EXPECT_NEAR(transfer_latency(2, 1, s), 2.222e-4, 1e-7);
  EXPECT_NEAR(transfer_latency(3, 3, s), 3.333e-4, 1e-7);
}

TEST(PerfModelTest, ExposedOverhead) {
  const std::vector<double> t1{1e-4, 2e-4}, w1{3e-4, 3e-4};
  EXPECT_EQ(exposed_overhead(t1, w1), 0.0);
  const std::vector<double> t2{5e-4, 1e-4}, w2{3e-4, 3e-4};
  EXPECT_NEAR(exposed_overhead(t2, w2), 2e-4, 1e-18);
  const std::vector<double> bad{1.0};
  EXPECT_THROW(exposed_overhead(bad, w2), std::invalid_argument);
}

TEST(PerfModelTest, CertifiedPlanHasNoExposure) {
  ClusterSpec s = small_spec(4, 8);
  auto r = routing_of({{300, 10, 10, 10, 5, 5, 5, 5}, {300, 10, 10, 10, 5, 5, 5, 5},
                       {300, 10, 10, 10, 5, 5, 5, 5}, {300, 10, 10, 10, 5, 5, 5, 5}});
  auto p = Placement::sharded(4, 8);
  const std::vector<Seconds> win(4, 2.5e-4);
  const Plan pl = plan(r, p, s, win);
  std::vector<Seconds> t;
  for (const auto& c : pl.feasibility) t.push_back(c.transfer);
  EXPECT_EQ(exposed_overhead(t, win), 0.0);
}

TEST(PerfModelTest, FaninDedupFromTrace) {
  ClusterSpec s = small_spec(2, 4, 2);
  s.dedup_model.kind = DedupModel::Kind::kFanin;
  TokenTrace tr;
  tr.top_k = 2;
  tr.source = {0, 0};
  tr.experts = {2, 3, 2, 0};  // token 0 hits r1 twice, token 1 once
  auto r = SourceRouting::from_trace(tr, 2, 4);
  const auto d = DedupFactors::resolve(s, r, Placement::sharded(2, 4));
  EXPECT_DOUBLE_EQ(d.in[1], 1.5);
  EXPECT_DOUBLE_EQ(d.out[0], 1.5);
  EXPECT_DOUBLE_EQ(d.in[0], 1.0);
}

// -- metrics --

TEST(MetricsTest, ImbalanceRatio) {
  const std::vector<TokenCount> u{10, 10, 10, 10};
  EXPECT_EQ(imbalance_ratio(u), 1.0);
  auto r = routing_of({{5, 5, 1, 1}});
  const auto loads = rank_loads(r, Placement::sharded(2, 4));
  ASSERT_EQ(loads.size(), 2u);
  EXPECT_NEAR(imbalance_ratio(loads), 10.0 / 6.0, 1e-12);
}

TEST(MetricsTest, RankLoadsSingleExpertPerRank) {
  auto r = routing_of({{3, 4, 5}, {1, 1, 1}, {0, 2, 0}});
  const auto loads = rank_loads(r, Placement::sharded(3, 3));
  const auto cols = r.expert_loads();
  for (int i = 0; i < 3; ++i) EXPECT_EQ(loads[i], cols[i]);
}

TEST(MetricsTest, RebalancingConservesTotalLoad) {
  auto r = routing_of({{150, 50}, {150, 50}});
  auto p = Placement::sharded(2, 2);
  const Plan pl = plan(r, p, small_spec(2, 2), std::vector<Seconds>{1.0, 1.0});
  const auto before = rank_loads(r, p);
  const auto after = rank_loads(pl.assignment);
  EXPECT_EQ(before[0] + before[1], after[0] + after[1]);
}

TEST(MetricsTest, SeriesCsv) {
  IRSeries s;
  s.push(0, 1.5, 1.25);
  s.push(1, 1.0, 1.0);
  const auto csv = s.to_csv();
  EXPECT_NE(csv.find("ir_tokens"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

}  // namespace
}  // namespace probe
