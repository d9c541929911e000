// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "probe/metrics.hpp"
#include "probe/workload.hpp"

namespace probe {
namespace {

double ir_of(const SourceRouting& r, const Placement& p) { return imbalance_ratio(rank_loads(r, p)); }

TEST(RegimeTest, NamesRoundTrip) {
  for (auto r : {Regime::kPrefillBurst, Regime::kDecodeChurn, Regime::kRepeatSkew})
    EXPECT_EQ(regime_from_string(to_string(r)), r);
  EXPECT_THROW(regime_from_string("chatty"), InvariantError);
}

TEST(WorkloadTest, TokenConservation) {
  ClusterSpec spec;
  auto s = WorkloadScript::preset(Regime::kDecodeChurn);
  s.steps = 3;
  s.layers = 2;
  s.tokens_per_step = 1000;
  const auto all = generate(s, spec);
  ASSERT_EQ(all.size(), 3u);
  for (const auto& step : all) {
    ASSERT_EQ(step.size(), 2u);
    for (const auto& r : step) {
      EXPECT_EQ(r.total(), 1000 * spec.top_k);
      EXPECT_EQ(r.declared_tokens, 1000);
      ASSERT_TRUE(r.trace.has_value());
      EXPECT_EQ(r.trace->size(), 1000u);
      EXPECT_TRUE(validate_scenario(spec, r, Placement::sharded(spec.ep, spec.num_experts)).empty());
      for (std::size_t t = 0; t < r.trace->size(); ++t) {
        auto ex = r.trace->experts_of(t);
        std::vector<ExpertId> v(ex.begin(), ex.end());
        std::sort(v.begin(), v.end());
        EXPECT_EQ(std::adjacent_find(v.begin(), v.end()), v.end()) << "duplicate expert in token " << t;
      }
    }
  }
}

TEST(WorkloadTest, Deterministic) {
  ClusterSpec spec;
  auto s = WorkloadScript::preset(Regime::kPrefillBurst);
  s.steps = 2;
  s.layers = 2;
  s.seed = 11;
  EXPECT_EQ(generate(s, spec), generate(s, spec));
  auto t = s;
  t.seed = 12;
  EXPECT_NE(generate(s, spec), generate(t, spec));
}

TEST(WorkloadTest, FrozenDistributionWithoutChurnOrShift) {
  ClusterSpec spec;
  auto s = WorkloadScript::preset(Regime::kRepeatSkew);
  s.churn_rate = 0;
  s.steps = 10;
  WorkloadGenerator g(s, spec);
  const auto d0 = g.expert_distribution(0, 0);
  for (int t = 1; t < 10; ++t) EXPECT_EQ(g.expert_distribution(t, 0), d0);
}

TEST(WorkloadTest, PrefillBurstPeaks) {
  ClusterSpec spec;
  auto s = WorkloadScript::preset(Regime::kPrefillBurst);
  s.steps = 60;
  s.layers = 4;
  s.seed = 7;
  WorkloadGenerator g(s, spec);
  const auto p = Placement::sharded(spec.ep, spec.num_experts);
  double peak = 0;
  for (int t = 0; t < s.steps; ++t)
    for (int L = 0; L < s.layers; ++L) peak = std::max(peak, ir_of(g.routing(t, L), p));
  EXPECT_GT(peak, 2.6);
}

TEST(WorkloadTest, DecodeChurnStaysInBand) {
  ClusterSpec spec;
  auto s = WorkloadScript::preset(Regime::kDecodeChurn);
  s.steps = 100;
  s.seed = 7;
  WorkloadGenerator g(s, spec);
  const auto p = Placement::sharded(spec.ep, spec.num_experts);
  double lo = 1e9, hi = 0;
  for (int t = 0; t < s.steps; ++t) {
    const double ir = ir_of(g.routing(t, 0), p);
    lo = std::min(lo, ir);
    hi = std::max(hi, ir);
  }
  EXPECT_GE(lo, 1.4);
  EXPECT_LE(hi, 2.3);
  EXPECT_GT(hi - lo, 0.05);  // it does fluctuate
}

TEST(WorkloadTest, RepeatStyleIsSkewed) {
  ClusterSpec spec;
  auto s = WorkloadScript::preset(Regime::kRepeatSkew);
  s.seed = 7;
  s.layers = 8;
  // one prompt's cluster: per-layer IR depends on where it lands, so average
  WorkloadGenerator g(s, spec);
  const auto p = Placement::sharded(spec.ep, spec.num_experts);
  double sum = 0;
  for (int L = 0; L < s.layers; ++L) sum += ir_of(g.routing(0, L), p);
  EXPECT_GT(sum / s.layers, 2.0);
}

TEST(WorkloadTest, ShiftMovesTheDistribution) {
  ClusterSpec spec;
  for (auto regime : {Regime::kPrefillBurst, Regime::kRepeatSkew}) {
    auto s = WorkloadScript::preset(regime);
    s.steps = 300;
    s = apply_shift(s, 200, 42);
    s.seed = 7;
    WorkloadGenerator g(s, spec);
    EXPECT_GT(js_divergence(g.expert_distribution(199, 0), g.expert_distribution(201, 0)), 0.3) << to_string(regime);
  }
}

TEST(WorkloadTest, JsDivergenceBounds) {
  const std::vector<double> a{0.5, 0.5, 0, 0}, b{0, 0, 0.5, 0.5};
  EXPECT_NEAR(js_divergence(a, a), 0.0, 1e-15);
  EXPECT_NEAR(js_divergence(a, b), 1.0, 1e-12);
}

TEST(ApplyShiftTest, IdempotentAndOrdered) {
  WorkloadScript s;
  s.steps = 500;
  s = apply_shift(s, 300, 1);
  s = apply_shift(s, 200, 2);
  s = apply_shift(s, 200, 2);
  ASSERT_EQ(s.shift_events.size(), 2u);
  EXPECT_EQ(s.shift_events[0].step, 200);
  EXPECT_EQ(s.shift_events[1].step, 300);
  EXPECT_THROW(apply_shift(s, 500, 3), std::out_of_range);
  EXPECT_THROW(apply_shift(s, -1, 3), std::out_of_range);
}

TEST(ApplyShiftTest, ShiftAtStepZeroReplacesTheHotSet) {
  ClusterSpec spec;
  auto base = WorkloadScript::preset(Regime::kRepeatSkew);
  base.steps = 5;
  const auto shifted = apply_shift(base, 0, 99);
  WorkloadGenerator a(base, spec), b(shifted, spec);
  for (int t = 0; t < 5; ++t) {
    EXPECT_NE(a.expert_distribution(t, 0), b.expert_distribution(t, 0));
    EXPECT_EQ(b.expert_distribution(t, 0), b.expert_distribution(0, 0));
  }
}

TEST(ApplyShiftTest, TwoRegimeScript) {
  ClusterSpec spec;
  auto s = WorkloadScript::preset(Regime::kDecodeChurn);
  s.steps = 500;
  s = apply_shift(s, 200, 42);
  WorkloadGenerator g(s, spec);
  // Same hot set on each side of the boundary, a different one across it.
  const double within_a = js_divergence(g.expert_distribution(0, 0), g.expert_distribution(199, 0));
  const double across = js_divergence(g.expert_distribution(199, 0), g.expert_distribution(200, 0));
  const double within_b = js_divergence(g.expert_distribution(200, 0), g.expert_distribution(499, 0));
  EXPECT_GT(across, within_a);
  EXPECT_GT(across, within_b);
}

TEST(WorkloadTest, CalibrateSkewHitsTarget) {
  ClusterSpec spec;
  auto s = WorkloadScript::preset(Regime::kDecodeChurn);
  s.layers = 6;
  s.seed = 3;
  const auto c = calibrate_skew(s, spec, 1.8, 0.03);
  EXPECT_NEAR(mean_token_ir(c, spec), 1.8, 0.03);
}

TEST(WorkloadTest, ValidateRejectsBadScripts) {
  ClusterSpec spec;
  WorkloadScript s;
  EXPECT_TRUE(s.validate(spec).empty());
  s.churn_rate = 1.5;
  EXPECT_FALSE(s.validate(spec).empty());
  s = WorkloadScript{};
  s.tokens_per_step = 0;
  EXPECT_FALSE(s.validate(spec).empty());
}

}  // namespace
}  // namespace probe
