// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Lookahead gate: layer L's frozen router applied to layer L-1 hidden states,
// plus a trainable SiLU residual distilled against the true layer-L routing.
// Also a seeded noisy oracle that stands in for the trained gate at simulator
// scale, and the fidelity metrics shared by both.
//
// Matrices hold one token per column.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "probe/types.hpp"

namespace probe {

struct LookaheadGate {
  Eigen::MatrixXd prior_w;  // E x d, frozen
  Eigen::VectorXd prior_b;  // E, frozen
  Eigen::MatrixXd w1;       // h x d
  Eigen::MatrixXd w2;       // E x h

  int experts() const { return int(prior_w.rows()); }
  int dim() const { return int(prior_w.cols()); }
  int hidden() const { return int(w1.rows()); }

  // w2 starts at zero so the gate reproduces the prior; w1 is N(0, init_scale^2 / d).
  static LookaheadGate from_prior(Eigen::MatrixXd prior_w, Eigen::VectorXd prior_b, int hidden, std::uint64_t seed,
                                  double init_scale = 1.0);
};

// prior_w * h + prior_b + w2 * silu(w1 * h). Throws std::invalid_argument on
// shape mismatch.
Eigen::MatrixXd gate_forward(const Eigen::MatrixXd& hidden, const LookaheadGate& gate);

struct GateGradients {
  Eigen::MatrixXd w1;
  Eigen::MatrixXd w2;
};

// Mean cross-entropy between softmax(teacher) and softmax(gate logits); fills
// residual gradients when grads is non-null.
double distill_loss(const Eigen::MatrixXd& hidden, const Eigen::MatrixXd& teacher_logits, const LookaheadGate& gate,
                    GateGradients* grads = nullptr);

// One gradient step on w1, w2. Returns the loss before the step. Throws
// std::runtime_error when the loss or a gradient is not finite.
double distill_step(const Eigen::MatrixXd& hidden, const Eigen::MatrixXd& teacher_logits, LookaheadGate& gate,
                    double lr);

// Indices of the k largest logits, largest first; ties go to the lower id.
std::vector<ExpertId> predict_topk(std::span<const double> logits, int k);

struct Fidelity {
  double topk_acc = 0.0;
  double top_half_k_hit = 0.0;
  double twice_topk_recall = 0.0;
};

Fidelity fidelity_metrics(const Eigen::MatrixXd& predicted_logits, const Eigen::MatrixXd& true_logits, int k);
// Per-token expert lists. predicted.top_k may exceed k (the first 2k entries
// feed the recall); with fewer than 2k predictions the recall uses what exists.
Fidelity fidelity_metrics(const TokenTrace& predicted, const TokenTrace& truth, int k);

struct NoisyOracleConfig {
  enum class Substitution { kUniform, kPopularity };
  double topk_accuracy = 1.0;
  // Keep probability for the first ceil(k/2) true experts; the remaining
  // slots are adjusted so the mean keep probability stays topk_accuracy.
  std::optional<double> top_half_k_hit;
  std::uint64_t seed = 0;
  Substitution substitution = Substitution::kUniform;
};

// Per-token perturbation of a routing that carries a token trace. Throws
// std::invalid_argument without a trace or with unreachable probabilities.
SourceRouting noisy_oracle_predict(const SourceRouting& ground_truth, const NoisyOracleConfig& cfg);

// Synthetic two-layer task: h_L = h_{L-1} + drift * U tanh(V^T h_{L-1}) + noise * eps,
// eps Gaussian clipped to [-3, 3]; a fixed random router scores h_L.
struct SyntheticTask {
  int dim = 64;
  int experts = 64;
  int top_k = 4;
  int drift_rank = 8;
  double drift = 0.3;
  double noise = 0.05;
  double router_scale = 3.0;
  std::uint64_t seed = 0;
};

struct SyntheticBatch {
  Eigen::MatrixXd prev;     // d x N, layer L-1 states
  Eigen::MatrixXd next;     // d x N, layer L states
  Eigen::MatrixXd teacher;  // E x N, router logits on next
};

class SyntheticTaskModel {
 public:
  explicit SyntheticTaskModel(const SyntheticTask& task);
  const SyntheticTask& task() const { return task_; }
  const Eigen::MatrixXd& router_w() const { return router_w_; }
  const Eigen::VectorXd& router_b() const { return router_b_; }
  // Independent batches per stream id.
  SyntheticBatch sample(int tokens, std::uint64_t stream) const;

 private:
  SyntheticTask task_;
  Eigen::MatrixXd router_w_, u_, v_;
  Eigen::VectorXd router_b_;
};

struct TrainConfig {
  SyntheticTask task;
  int hidden = 0;  // 0 means dim / 4
  double lr = 2.0;
  int epochs = 600;  // full-batch steps
  int train_tokens = 4096;
  int eval_tokens = 4096;
  int log_every = 20;
  double init_scale = 1.0;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  Fidelity eval;
};

struct TrainResult {
  LookaheadGate gate;
  Fidelity prior;  // untrained gate on the eval set
  std::vector<EpochMetrics> history;  // epoch 0 first, then every log_every and the last
};

TrainResult train_predictor(const TrainConfig& cfg);

// CSV: epoch,loss,topk_acc,top_half_k_hit,twice_topk_recall
std::string fidelity_csv(const std::vector<EpochMetrics>& history);

std::string gate_to_json(const LookaheadGate& gate);
LookaheadGate gate_from_json(const std::string& text);

}  // namespace probe
