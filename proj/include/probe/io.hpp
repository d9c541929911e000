// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON formats. Scenario files hold `cluster`, `routing` and `placement`
// (row-major nested arrays, zero-based ids) plus optional `windows`,
// `workload` and `experiment` sections.

#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "probe/pipeline_sim.hpp"
#include "probe/predictor.hpp"
#include "probe/types.hpp"
#include "probe/workload.hpp"

namespace probe {

// Malformed JSON or a field of the wrong type. The message carries the parse
// location or the JSON path.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  ExperimentOptions options;
  std::vector<TokenCount> batches{256, 512, 1024, 2048, 4096, 8192};
};

struct Scenario {
  ClusterSpec cluster;
  std::optional<SourceRouting> routing;
  Placement placement;  // sharded when the file has none
  std::optional<std::vector<Seconds>> windows;
  std::optional<WorkloadScript> workload;
  ExperimentConfig experiment;
};

// Throws ParseError for syntax and type problems, InvariantError when the
// parsed scenario violates an invariant (first violation named).
Scenario parse_scenario(const std::string& text);
std::string scenario_to_json(const Scenario& s);

std::string cluster_to_json(const ClusterSpec& spec);
ClusterSpec cluster_from_json(const std::string& text);

std::string routing_to_json(const SourceRouting& r);
SourceRouting routing_from_json(const std::string& text);

std::string placement_to_json(const Placement& p);
Placement placement_from_json(const std::string& text);

std::string workload_to_json(const WorkloadScript& w);
WorkloadScript workload_from_json(const std::string& text);

std::string plan_to_json(const Plan& p);
Plan plan_from_json(const std::string& text);

// Trace export: one routing per step and layer.
std::string trace_to_json(const std::vector<std::vector<SourceRouting>>& steps);
std::vector<std::vector<SourceRouting>> trace_from_json(const std::string& text);

std::string train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace probe
