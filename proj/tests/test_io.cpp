// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "probe/io.hpp"
#include "probe/planner.hpp"

namespace probe {
namespace {

const char* kSmall = R"({
  "cluster": {"ep": 2, "num_experts": 4, "top_k": 1},
  "routing": {"counts": [[400, 20, 20, 20], [400, 20, 20, 20]]}
})";

std::string message_of(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const ParseError& e) {
    return std::string("parse: ") + e.what();
  } catch (const InvariantError& e) {
    return std::string("invariant: ") + e.what();
  }
  return "ok";
}

TEST(ScenarioTest, ParsesMinimalFile) {
  const auto s = parse_scenario(kSmall);
  EXPECT_EQ(s.cluster.ep, 2);
  ASSERT_TRUE(s.routing.has_value());
  EXPECT_EQ(s.routing->counts(0, 0), 400);
  EXPECT_EQ(s.placement, Placement::sharded(2, 4));
  EXPECT_FALSE(s.workload.has_value());
}

TEST(ScenarioTest, RoundTrip) {
  auto s = parse_scenario(kSmall);
  s.windows = std::vector<Seconds>{1e-4, 2e-4};
  WorkloadScript w = WorkloadScript::preset(Regime::kRepeatSkew);
  w.steps = 300;
  w.cluster_size = 2;  // four experts in this cluster
  w = apply_shift(w, 200, 42);
  s.workload = w;
  s.experiment.options.one_shot_history = true;
  s.experiment.options.predictor = PredictorMode::kNoisyOracle;
  s.experiment.options.noisy.topk_accuracy = 0.875;
  s.experiment.options.sim.planner.max_total_replicas = 2;
  s.experiment.batches = {64, 128};
  const auto text = scenario_to_json(s);
  const auto back = parse_scenario(text);
  EXPECT_EQ(scenario_to_json(back), text);
  EXPECT_EQ(back.workload, s.workload);
  EXPECT_EQ(back.windows, s.windows);
}

TEST(ScenarioTest, MalformedJsonReportsLocation) {
  const auto m = message_of("{\n  \"cluster\": {\"ep\": 2,\n  \"routing\": \n}\n");
  EXPECT_EQ(m.rfind("parse: malformed JSON", 0), 0u) << m;
  EXPECT_NE(m.find("line 4"), std::string::npos) << m;
}

TEST(ScenarioTest, UnknownKeyNamesThePath) {
  const auto m = message_of(R"({"cluster": {"ep": 2, "num_experts": 4, "top_k": 1, "gpus": 3}})");
  EXPECT_EQ(m.rfind("parse:", 0), 0u) << m;
  EXPECT_NE(m.find("cluster: unknown key 'gpus'"), std::string::npos) << m;
}

TEST(ScenarioTest, WrongTypeNamesThePath) {
  const auto m = message_of(R"({"cluster": {"ep": "two"}})");
  EXPECT_EQ(m.rfind("parse:", 0), 0u) << m;
  EXPECT_NE(m.find("cluster.ep"), std::string::npos) << m;
}

TEST(ScenarioTest, InvariantViolationIsNamed) {
  const auto m = message_of(R"({"cluster": {"ep": 4, "num_experts": 6, "top_k": 1}})");
  EXPECT_EQ(m.rfind("invariant:", 0), 0u) << m;
}

TEST(ScenarioTest, RoutingShapeMismatch) {
  const auto m = message_of(R"({"cluster": {"ep": 2, "num_experts": 4, "top_k": 1},
                                "routing": {"counts": [[1, 2, 3, 4]]}})");
  EXPECT_NE(m, "ok");
}

TEST(PlanJsonTest, RoundTrip) {
  const auto s = parse_scenario(kSmall);
  const std::vector<Seconds> w{1.0, 1.0};
  const Plan p = plan(*s.routing, s.placement, s.cluster, w);
  const Plan back = plan_from_json(plan_to_json(p));
  EXPECT_EQ(back.placement, p.placement);
  EXPECT_EQ(back.assignment, p.assignment);
  EXPECT_EQ(back.delta_in, p.delta_in);
  EXPECT_EQ(back.delta_out, p.delta_out);
  EXPECT_EQ(back.iterations_used, p.iterations_used);
  EXPECT_EQ(back.feasibility, p.feasibility);
  EXPECT_EQ(plan_to_json(back), plan_to_json(p));
}

TEST(TraceJsonTest, RoundTrip) {
  ClusterSpec spec;
  auto w = WorkloadScript::preset(Regime::kPrefillBurst);
  w.steps = 2;
  w.layers = 2;
  w.tokens_per_step = 64;
  const auto g = generate(w, spec);
  EXPECT_EQ(trace_from_json(trace_to_json(g)), g);
}

TEST(PieceJsonTest, ClusterPlacementWorkloadRoundTrip) {
  ClusterSpec c;
  c.ep = 4;
  c.num_experts = 16;
  c.efficiency_curve = EfficiencyCurve::table({{1, 0.1}, {32, 0.6}, {128, 1.0}});
  c.dedup_model.kind = DedupModel::Kind::kFanin;
  c.solver_epsilon = 1e-7;
  EXPECT_EQ(cluster_to_json(cluster_from_json(cluster_to_json(c))), cluster_to_json(c));

  auto p = Placement::sharded(4, 16);
  p.replicas(2) = {0, 5};
  EXPECT_EQ(placement_from_json(placement_to_json(p)), p);

  WorkloadScript w = WorkloadScript::preset(Regime::kDecodeChurn);
  w.locality_bias = 0.25;
  EXPECT_EQ(workload_from_json(workload_to_json(w)), w);
}

TEST(TrainConfigJsonTest, RoundTripAndDefaults) {
  TrainConfig c;
  c.epochs = 7;
  c.task.drift = 0.45;
  c.seed = 99;
  const auto back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(train_config_to_json(back), train_config_to_json(c));
  const auto d = train_config_from_json("{}");
  EXPECT_EQ(d.epochs, TrainConfig{}.epochs);
  EXPECT_THROW(train_config_from_json(R"({"epochz": 3})"), ParseError);
}

}  // namespace
}  // namespace probe
