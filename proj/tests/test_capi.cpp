// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>
#include <string>

#include "probe/probe.h"

namespace {

probe_scenario* parse(const std::string& text) {
  probe_scenario* s = nullptr;
  EXPECT_EQ(probe_scenario_parse(text.data(), text.size(), &s), PROBE_OK) << probe_last_error();
  return s;
}

std::string artifact(const probe_result* r, const std::string& name) {
  for (size_t i = 0; i < probe_result_artifact_count(r); ++i)
    if (name == probe_result_artifact_name(r, i)) {
      size_t len = 0;
      const char* d = probe_result_artifact_data(r, i, &len);
      return std::string(d, len);
    }
  return {};
}

TEST(CApiTest, VersionAndNullHandling) {
  EXPECT_GT(std::strlen(probe_version()), 0u);
  EXPECT_EQ(probe_plan(nullptr, nullptr), PROBE_ERR_NULL);
  EXPECT_NE(std::string(probe_last_error()).find("null"), std::string::npos);
  EXPECT_EQ(probe_result_artifact_count(nullptr), 0u);
  probe_result_free(nullptr);
  probe_scenario_free(nullptr);
}

TEST(CApiTest, ParseErrorsCarryStatus) {
  probe_scenario* s = nullptr;
  const std::string bad = "{\"cluster\": ";
  EXPECT_EQ(probe_scenario_parse(bad.data(), bad.size(), &s), PROBE_ERR_PARSE);
  EXPECT_EQ(s, nullptr);
  EXPECT_NE(std::string(probe_last_error()).find("malformed JSON"), std::string::npos);
  const std::string invalid = R"({"cluster": {"ep": 4, "num_experts": 6}})";
  EXPECT_EQ(probe_scenario_parse(invalid.data(), invalid.size(), &s), PROBE_ERR_INVALID);
}

TEST(CApiTest, UniformPlanSummary) {
  auto* s = parse(R"({"cluster": {"ep": 2, "num_experts": 4, "top_k": 1},
                      "routing": {"counts": [[100, 100, 100, 100], [100, 100, 100, 100]]}})");
  probe_result* r = nullptr;
  ASSERT_EQ(probe_plan(s, &r), PROBE_OK) << probe_last_error();
  EXPECT_EQ(std::string(probe_result_summary(r)).rfind("IR 1.00 → 1.00, 0 replicas", 0), 0u)
      << probe_result_summary(r);
  EXPECT_EQ(probe_result_feasible(r), 1);
  EXPECT_NE(artifact(r, "plan.json").find("\"placement\""), std::string::npos);
  probe_result_free(r);
  probe_scenario_free(s);
}

TEST(CApiTest, PlanNeedsRoutingOrWorkload) {
  auto* s = parse(R"({"cluster": {"ep": 2, "num_experts": 4, "top_k": 1}})");
  probe_result* r = nullptr;
  EXPECT_EQ(probe_plan(s, &r), PROBE_ERR_INVALID);
  EXPECT_EQ(r, nullptr);
  probe_scenario_free(s);
}

TEST(CApiTest, SimulateModesAndSteps) {
  auto* s = parse(R"({"cluster": {}, "workload": {"regime": "prefill_burst", "steps": 2, "layers": 2, "seed": 3}})");
  probe_result* r = nullptr;
  ASSERT_EQ(probe_simulate(s, "baseline,probe", 0, &r), PROBE_OK) << probe_last_error();
  const auto csv = artifact(r, "steps.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')).find("one_shot"), std::string::npos);
  EXPECT_NE(csv.find("probe_tps"), std::string::npos);
  EXPECT_FALSE(artifact(r, "events.csv").empty());
  probe_result_free(r);
  r = nullptr;
  EXPECT_EQ(probe_simulate(s, "baseline", 5, &r), PROBE_ERR_ARGUMENT);
  EXPECT_EQ(probe_simulate(s, "warp", 1, &r), PROBE_ERR_ARGUMENT);
  probe_scenario_free(s);
}

TEST(CApiTest, SeedOverrideIsDeterministic) {
  const std::string text = R"({"cluster": {}, "workload": {"regime": "prefill_burst", "steps": 1, "layers": 2}})";
  auto run = [&](uint64_t seed) {
    auto* s = parse(text);
    EXPECT_EQ(probe_scenario_set_seed(s, seed), PROBE_OK);
    probe_result* r = nullptr;
    EXPECT_EQ(probe_simulate(s, nullptr, 0, &r), PROBE_OK) << probe_last_error();
    const auto out = artifact(r, "steps.csv");
    probe_result_free(r);
    probe_scenario_free(s);
    return out;
  };
  EXPECT_EQ(run(5), run(5));
  EXPECT_NE(run(5), run(6));
}

TEST(CApiTest, TrainPredictorSmall) {
  const std::string cfg = R"({"epochs": 3, "train_tokens": 256, "eval_tokens": 256, "log_every": 1})";
  probe_result* r = nullptr;
  const uint64_t seed = 2;
  ASSERT_EQ(probe_train_predictor(cfg.data(), cfg.size(), &seed, &r), PROBE_OK) << probe_last_error();
  EXPECT_NE(artifact(r, "fidelity.csv").find("topk_acc"), std::string::npos);
  EXPECT_NE(artifact(r, "checkpoint.json").find("probe-lookahead-gate/1"), std::string::npos);
  probe_result_free(r);
  const std::string bad = R"({"epochs": "many"})";
  EXPECT_EQ(probe_train_predictor(bad.data(), bad.size(), nullptr, &r), PROBE_ERR_PARSE);
}

}  // namespace
