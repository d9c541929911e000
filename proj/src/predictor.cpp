// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "probe/rng.hpp"

namespace probe {

namespace {

Eigen::MatrixXd gaussian(int rows, int cols, double scale, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  // column-major fill order is part of the reproducibility contract
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = scale * rng.normal();
  return m;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::MatrixXd silu(const Eigen::MatrixXd& a) {
  return a.unaryExpr([](double x) { return x * sigmoid(x); });
}

Eigen::MatrixXd silu_grad(const Eigen::MatrixXd& a) {
  return a.unaryExpr([](double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
  });
}

// Column-wise softmax and log-softmax.
void softmax_cols(const Eigen::MatrixXd& logits, Eigen::MatrixXd& prob, Eigen::MatrixXd* log_prob) {
  prob.resize(logits.rows(), logits.cols());
  if (log_prob) log_prob->resize(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double m = logits.col(c).maxCoeff();
    const Eigen::VectorXd z = logits.col(c).array() - m;
    const double lse = std::log(z.array().exp().sum());
    if (log_prob) log_prob->col(c) = z.array() - lse;
    prob.col(c) = (z.array() - lse).exp();
  }
}

}  // namespace

LookaheadGate LookaheadGate::from_prior(Eigen::MatrixXd prior_w, Eigen::VectorXd prior_b, int hidden,
                                        std::uint64_t seed, double init_scale) {
  if (prior_w.rows() != prior_b.size()) throw std::invalid_argument("gate: prior bias length must equal expert count");
  if (hidden <= 0) throw std::invalid_argument("gate: hidden width must be positive");
  LookaheadGate g;
  g.prior_w = std::move(prior_w);
  g.prior_b = std::move(prior_b);
  Rng rng(derive_seed(seed, "gate_w1"));
  g.w1 = gaussian(hidden, g.dim(), init_scale / std::sqrt(double(g.dim())), rng);
  g.w2 = Eigen::MatrixXd::Zero(g.experts(), hidden);
  return g;
}

namespace {

void check_shapes(const Eigen::MatrixXd& hidden, const LookaheadGate& g) {
  if (g.prior_b.size() != g.prior_w.rows() || g.w1.cols() != g.prior_w.cols() || g.w2.rows() != g.prior_w.rows() ||
      g.w2.cols() != g.w1.rows())
    throw std::invalid_argument("gate: parameter shapes are inconsistent");
  if (hidden.rows() != g.prior_w.cols())
    throw std::invalid_argument(
        fmt::format("gate: hidden dimension {} does not match gate dimension {}", hidden.rows(), g.prior_w.cols()));
}

}  // namespace

Eigen::MatrixXd gate_forward(const Eigen::MatrixXd& hidden, const LookaheadGate& gate) {
  check_shapes(hidden, gate);
  Eigen::MatrixXd out = gate.prior_w * hidden;
  out.colwise() += gate.prior_b;
  out.noalias() += gate.w2 * silu(gate.w1 * hidden);
  return out;
}

double distill_loss(const Eigen::MatrixXd& hidden, const Eigen::MatrixXd& teacher_logits, const LookaheadGate& gate,
                    GateGradients* grads) {
  check_shapes(hidden, gate);
  if (teacher_logits.rows() != gate.experts() || teacher_logits.cols() != hidden.cols())
    throw std::invalid_argument("distill: teacher logits shape mismatch");
  const double n = double(hidden.cols());
  const Eigen::MatrixXd a = gate.w1 * hidden;
  const Eigen::MatrixXd s = silu(a);
  Eigen::MatrixXd logits = gate.prior_w * hidden;
  logits.colwise() += gate.prior_b;
  logits.noalias() += gate.w2 * s;

  Eigen::MatrixXd p, q, log_q;
  softmax_cols(teacher_logits, p, nullptr);
  softmax_cols(logits, q, &log_q);
  const double loss = -(p.array() * log_q.array()).sum() / n;
  if (grads) {
    const Eigen::MatrixXd g = (q - p) / n;  // dL/dlogits
    grads->w2 = g * s.transpose();
    const Eigen::MatrixXd da = (gate.w2.transpose() * g).cwiseProduct(silu_grad(a));
    grads->w1 = da * hidden.transpose();
  }
  return loss;
}

double distill_step(const Eigen::MatrixXd& hidden, const Eigen::MatrixXd& teacher_logits, LookaheadGate& gate,
                    double lr) {
  GateGradients g;
  const double loss = distill_loss(hidden, teacher_logits, gate, &g);
  if (!std::isfinite(loss) || !g.w1.allFinite() || !g.w2.allFinite())
    throw std::runtime_error(fmt::format("distill: non-finite loss {} (lr {}, |w1| {}, |w2| {})", loss, lr,
                                         gate.w1.norm(), gate.w2.norm()));
  gate.w1 -= lr * g.w1;
  gate.w2 -= lr * g.w2;
  return loss;
}

std::vector<ExpertId> predict_topk(std::span<const double> logits, int k) {
  if (k < 0 || std::size_t(k) > logits.size()) throw std::invalid_argument("predict_topk: k must be in [0, E]");
  std::vector<ExpertId> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](ExpertId a, ExpertId b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  idx.resize(std::size_t(k));
  return idx;
}

namespace {

std::size_t overlap(std::span<const ExpertId> a, std::span<const ExpertId> b) {
  std::size_t n = 0;
  for (ExpertId x : a)
    if (std::find(b.begin(), b.end(), x) != b.end()) ++n;
  return n;
}

struct FidelityAcc {
  int k;
  int half;
  double acc = 0, hit = 0, rec = 0;
  std::size_t tokens = 0;

  void add(std::span<const ExpertId> pred, std::span<const ExpertId> truth) {
    const auto pk = pred.first(std::min<std::size_t>(pred.size(), std::size_t(k)));
    const auto p2k = pred.first(std::min<std::size_t>(pred.size(), std::size_t(2 * k)));
    acc += double(overlap(truth.first(std::size_t(k)), pk)) / k;
    hit += double(overlap(truth.first(std::size_t(half)), pk)) / half;
    rec += double(overlap(truth.first(std::size_t(k)), p2k)) / k;
    ++tokens;
  }
  Fidelity result() const {
    if (tokens == 0) return {};
    return {acc / double(tokens), hit / double(tokens), rec / double(tokens)};
  }
};

}  // namespace

Fidelity fidelity_metrics(const Eigen::MatrixXd& predicted_logits, const Eigen::MatrixXd& true_logits, int k) {
  if (predicted_logits.rows() != true_logits.rows() || predicted_logits.cols() != true_logits.cols())
    throw std::invalid_argument("fidelity: logits shape mismatch");
  const int E = int(true_logits.rows());
  if (k <= 0 || k > E) throw std::invalid_argument("fidelity: k must be in [1, E]");
  FidelityAcc f{k, (k + 1) / 2};
  std::vector<double> col(static_cast<std::size_t>(E));
  for (Eigen::Index c = 0; c < true_logits.cols(); ++c) {
    Eigen::VectorXd::Map(col.data(), E) = predicted_logits.col(c);
    const auto pred = predict_topk(col, std::min(2 * k, E));
    Eigen::VectorXd::Map(col.data(), E) = true_logits.col(c);
    const auto truth = predict_topk(col, k);
    f.add(pred, truth);
  }
  return f.result();
}

Fidelity fidelity_metrics(const TokenTrace& predicted, const TokenTrace& truth, int k) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("fidelity: token universes differ");
  if (k <= 0 || k > truth.top_k) throw std::invalid_argument("fidelity: k must be in [1, truth.top_k]");
  FidelityAcc f{k, (k + 1) / 2};
  for (std::size_t t = 0; t < truth.size(); ++t) f.add(predicted.experts_of(t), truth.experts_of(t));
  return f.result();
}

SourceRouting noisy_oracle_predict(const SourceRouting& ground_truth, const NoisyOracleConfig& cfg) {
  if (!ground_truth.trace) throw std::invalid_argument("noisy oracle: routing carries no token trace");
  auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in01(cfg.topk_accuracy)) throw std::invalid_argument("noisy oracle: topk_accuracy outside [0, 1]");
  const TokenTrace& truth = *ground_truth.trace;
  const int k = truth.top_k, E = ground_truth.num_experts();
  const int half = (k + 1) / 2;
  double p_head = cfg.topk_accuracy, p_tail = cfg.topk_accuracy;
  if (cfg.top_half_k_hit) {
    p_head = *cfg.top_half_k_hit;
    if (!in01(p_head)) throw std::invalid_argument("noisy oracle: top_half_k_hit outside [0, 1]");
    if (k == half) {
      if (p_head != cfg.topk_accuracy)
        throw std::invalid_argument("noisy oracle: with k = 1 top_half_k_hit must equal topk_accuracy");
    } else {
      p_tail = (cfg.topk_accuracy * k - p_head * half) / double(k - half);
      if (!in01(p_tail)) throw std::invalid_argument("noisy oracle: top_half_k_hit incompatible with topk_accuracy");
    }
  }

  // substitution law: cumulative integer weights
  std::vector<std::uint64_t> cdf(static_cast<std::size_t>(E));
  {
    const auto loads = ground_truth.expert_loads();
    std::uint64_t acc = 0;
    for (int e = 0; e < E; ++e) {
      acc += cfg.substitution == NoisyOracleConfig::Substitution::kUniform ? 1 : std::uint64_t(loads[e]) + 1;
      cdf[e] = acc;
    }
  }

  Rng rng(derive_seed(cfg.seed, "noisy_oracle"));
  TokenTrace pred;
  pred.top_k = k;
  pred.source = truth.source;
  pred.experts.resize(truth.experts.size());
  std::vector<char> in_set(static_cast<std::size_t>(E), 0);
  std::vector<char> keep(static_cast<std::size_t>(k));
  for (std::size_t t = 0; t < truth.size(); ++t) {
    const auto true_ex = truth.experts_of(t);
    ExpertId* out = pred.experts.data() + t * std::size_t(k);
    for (int i = 0; i < k; ++i) keep[i] = rng.bernoulli(i < half ? p_head : p_tail);
    for (int i = 0; i < k; ++i)
      if (keep[i]) in_set[true_ex[i]] = 1;
    for (int i = 0; i < k; ++i) {
      if (keep[i]) {
        out[i] = true_ex[i];
        continue;
      }
      ExpertId e;
      do {
        const std::uint64_t r = rng.below(cdf.back());
        e = ExpertId(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
      } while (in_set[e]);
      in_set[e] = 1;
      out[i] = e;
    }
    for (int i = 0; i < k; ++i) in_set[out[i]] = 0;
  }
  auto r = SourceRouting::from_trace(std::move(pred), ground_truth.ep(), E);
  r.declared_tokens = ground_truth.declared_tokens;
  return r;
}

SyntheticTaskModel::SyntheticTaskModel(const SyntheticTask& task) : task_(task) {
  if (task.dim <= 0 || task.experts <= 0 || task.top_k <= 0 || task.top_k > task.experts || task.drift_rank <= 0)
    throw std::invalid_argument("synthetic task: dimensions must be positive and top_k <= experts");
  if (!(task.drift >= 0.0) || !(task.noise >= 0.0)) throw std::invalid_argument("synthetic task: drift and noise must be >= 0");
  Rng rng(derive_seed(task.seed, "synthetic_task"));
  const double sd = 1.0 / std::sqrt(double(task.dim));
  router_w_ = gaussian(task.experts, task.dim, task.router_scale * sd, rng);
  router_b_ = gaussian(task.experts, 1, 0.1, rng).col(0);
  u_ = gaussian(task.dim, task.drift_rank, 1.0 / std::sqrt(double(task.drift_rank)), rng);
  v_ = gaussian(task.dim, task.drift_rank, 2.0 * sd, rng);
}

SyntheticBatch SyntheticTaskModel::sample(int tokens, std::uint64_t stream) const {
  Rng rng(derive_seed(task_.seed, "synthetic_batch", stream));
  SyntheticBatch b;
  b.prev = gaussian(task_.dim, tokens, 1.0, rng);
  Eigen::MatrixXd eps = gaussian(task_.dim, tokens, 1.0, rng);
  eps = eps.cwiseMax(-3.0).cwiseMin(3.0);
  const Eigen::MatrixXd z = (v_.transpose() * b.prev).array().tanh().matrix();
  b.next = b.prev + task_.drift * (u_ * z) + task_.noise * eps;
  b.teacher = router_w_ * b.next;
  b.teacher.colwise() += router_b_;
  return b;
}

TrainResult train_predictor(const TrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.train_tokens <= 0 || cfg.eval_tokens <= 0 || cfg.log_every <= 0)
    throw std::invalid_argument("train: epochs >= 0, token counts and log_every > 0 required");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  const SyntheticTaskModel model(cfg.task);
  const int hidden = cfg.hidden > 0 ? cfg.hidden : std::max(1, cfg.task.dim / 4);
  TrainResult res;
  res.gate = LookaheadGate::from_prior(model.router_w(), model.router_b(), hidden, cfg.seed, cfg.init_scale);
  const auto train = model.sample(cfg.train_tokens, 0);
  const auto eval = model.sample(cfg.eval_tokens, 1);
  const int k = cfg.task.top_k;

  auto log = [&](int epoch, double loss) {
    res.history.push_back({epoch, loss, fidelity_metrics(gate_forward(eval.prev, res.gate), eval.teacher, k)});
  };
  res.prior = fidelity_metrics(gate_forward(eval.prev, res.gate), eval.teacher, k);
  for (int ep = 0; ep < cfg.epochs; ++ep) {
    const double loss = distill_step(train.prev, train.teacher, res.gate, cfg.lr);
    if (ep == 0) res.history.push_back({0, loss, res.prior});
    if ((ep + 1) % cfg.log_every == 0 || ep + 1 == cfg.epochs) log(ep + 1, distill_loss(train.prev, train.teacher, res.gate));
  }
  if (cfg.epochs == 0) res.history.push_back({0, distill_loss(train.prev, train.teacher, res.gate), res.prior});
  return res;
}

std::string fidelity_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,loss,topk_acc,top_half_k_hit,twice_topk_recall\n";
  for (const auto& m : history)
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", m.epoch, m.loss, m.eval.topk_acc, m.eval.top_half_k_hit,
                       m.eval.twice_topk_recall);
  return out;
}

namespace {

nlohmann::json tensor(const Eigen::MatrixXd& m) {
  nlohmann::json j;
  j["shape"] = {m.rows(), m.cols()};
  std::vector<double> data;
  data.reserve(std::size_t(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  j["data"] = std::move(data);
  return j;
}

Eigen::MatrixXd tensor(const nlohmann::json& j, const char* name) {
  const auto& t = j.at(name);
  const auto shape = t.at("shape").get<std::vector<long>>();
  const auto data = t.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0 || std::size_t(shape[0] * shape[1]) != data.size())
    throw std::invalid_argument(fmt::format("checkpoint: tensor '{}' shape does not match data", name));
  Eigen::MatrixXd m(shape[0], shape[1]);
  for (long r = 0; r < shape[0]; ++r)
    for (long c = 0; c < shape[1]; ++c) m(r, c) = data[std::size_t(r * shape[1] + c)];
  return m;
}

}  // namespace

std::string gate_to_json(const LookaheadGate& gate) {
  nlohmann::json j;
  j["format"] = "probe-lookahead-gate/1";
  j["prior_w"] = tensor(gate.prior_w);
  j["prior_b"] = tensor(Eigen::MatrixXd(gate.prior_b));
  j["w1"] = tensor(gate.w1);
  j["w2"] = tensor(gate.w2);
  return j.dump(1);
}

LookaheadGate gate_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  LookaheadGate g;
  g.prior_w = tensor(j, "prior_w");
  const Eigen::MatrixXd b = tensor(j, "prior_b");
  if (b.cols() != 1) throw std::invalid_argument("checkpoint: prior_b must be a column");
  g.prior_b = b.col(0);
  g.w1 = tensor(j, "w1");
  g.w2 = tensor(j, "w2");
  check_shapes(Eigen::MatrixXd(g.dim(), 0), g);
  return g;
}

}  // namespace probe
