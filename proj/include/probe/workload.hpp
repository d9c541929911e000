// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic routing traces. Global expert popularity is Zipf over a per-layer
// permutation; each in-flight request adds an affinity for a small cluster of
// experts. Regimes differ in request count, cluster pull and churn.
//
// Sampling is integer only (quantised Zipf table, rejection sampling on
// mt19937_64), so traces are byte-identical for identical scripts.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "probe/types.hpp"

namespace probe {

enum class Regime { kPrefillBurst, kDecodeChurn, kRepeatSkew };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct ShiftEvent {
  int step = 0;
  std::uint64_t seed = 0;
  friend bool operator==(const ShiftEvent&, const ShiftEvent&) = default;
};

struct WorkloadScript {
  Regime regime = Regime::kDecodeChurn;
  int steps = 1;
  int layers = 1;
  TokenCount tokens_per_step = 4096;  // B
  double skew = 1.0;                  // Zipf exponent of global popularity
  double churn_rate = 0.05;           // fraction of request slots replaced per step
  std::vector<ShiftEvent> shift_events;
  std::uint64_t seed = 0;
  int requests = 64;       // concurrent request slots
  int cluster_size = 8;    // experts in a request's affinity cluster
  double affinity = 0.5;   // probability a pick comes from the cluster
  double locality_bias = 0.0;  // probability a token originates on its first expert's home

  // Regime defaults; fields can be overridden afterwards.
  static WorkloadScript preset(Regime regime);

  std::vector<std::string> validate(const ClusterSpec& spec) const;

  friend bool operator==(const WorkloadScript&, const WorkloadScript&) = default;
};

// Appends (step, seed) unless already present. Events stay ordered by step;
// for equal steps the later insertion wins. Throws std::out_of_range when step
// is outside [0, steps).
WorkloadScript apply_shift(WorkloadScript script, int step, std::uint64_t seed);

class WorkloadGenerator {
 public:
  // Throws InvariantError when the script is invalid for the cluster.
  WorkloadGenerator(WorkloadScript script, ClusterSpec spec);

  const WorkloadScript& script() const { return script_; }
  const ClusterSpec& spec() const { return spec_; }

  // Routing (with token trace) of one layer at one step. Pure function of the
  // script, so steps can be produced in any order.
  SourceRouting routing(int step, int layer) const;
  std::vector<SourceRouting> step(int step) const;

  // Expected share of expert hits per expert before duplicate rejection.
  std::vector<double> expert_distribution(int step, int layer) const;

 private:
  std::uint64_t epoch_seed(int step) const;
  std::vector<int> permutation(int layer, std::uint64_t epoch) const;
  std::vector<std::uint64_t> request_serials(int step) const;

  WorkloadScript script_;
  ClusterSpec spec_;
  std::vector<std::uint64_t> zipf_cdf_;  // cumulative integer weights by popularity rank
};

// All steps and layers: result[step][layer].
std::vector<std::vector<SourceRouting>> generate(const WorkloadScript& script, const ClusterSpec& spec);

// Mean token IR under sharded placement over every step and layer.
double mean_token_ir(const WorkloadScript& script, const ClusterSpec& spec);

// Bisection on the Zipf exponent so mean_token_ir hits target within tol.
// Throws std::invalid_argument when the target is out of reach.
WorkloadScript calibrate_skew(WorkloadScript script, const ClusterSpec& spec, double target_ir, double tol = 0.02);

// Jensen-Shannon divergence (base 2, in [0, 1]) of two distributions; inputs
// are normalised first.
double js_divergence(const std::vector<double>& p, const std::vector<double>& q);

// Share of expert hits per expert, summed over the given routings.
std::vector<double> empirical_distribution(const std::vector<SourceRouting>& routings);

}  // namespace probe
