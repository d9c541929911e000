// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/workload.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "probe/metrics.hpp"
#include "probe/rng.hpp"

namespace probe {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::kPrefillBurst: return "prefill_burst";
    case Regime::kDecodeChurn: return "decode_churn";
    case Regime::kRepeatSkew: return "repeat_skew";
  }
  return "unknown";
}

Regime regime_from_string(const std::string& s) {
  if (s == "prefill_burst") return Regime::kPrefillBurst;
  if (s == "decode_churn") return Regime::kDecodeChurn;
  if (s == "repeat_skew") return Regime::kRepeatSkew;
  throw InvariantError(fmt::format("workload: unknown regime '{}'", s));
}

WorkloadScript WorkloadScript::preset(Regime regime) {
  WorkloadScript s;
  s.regime = regime;
  switch (regime) {
    case Regime::kPrefillBurst:
      // a few long prompts per step, all new every step
      s.requests = 4;
      s.churn_rate = 1.0;
      s.cluster_size = 8;
      s.affinity = 0.7;
      s.skew = 1.0;
      break;
    case Regime::kDecodeChurn:
      s.requests = 64;
      s.churn_rate = 0.05;
      s.cluster_size = 8;
      s.affinity = 0.5;
      s.skew = 1.0;
      break;
    case Regime::kRepeatSkew:
      s.requests = 1;
      s.churn_rate = 0.0;
      s.cluster_size = 8;
      s.affinity = 0.8;
      s.skew = 1.2;
      break;
  }
  return s;
}

std::vector<std::string> WorkloadScript::validate(const ClusterSpec& spec) const {
  std::vector<std::string> out;
  if (steps <= 0) out.push_back("workload: steps must be positive");
  if (layers <= 0) out.push_back("workload: layers must be positive");
  if (tokens_per_step <= 0) out.push_back("workload: tokens_per_step must be positive");
  if (!(skew >= 0.0) || !std::isfinite(skew)) out.push_back("workload: skew must be a finite non-negative number");
  if (!(churn_rate >= 0.0 && churn_rate <= 1.0)) out.push_back("workload: churn_rate must be in [0, 1]");
  if (!(affinity >= 0.0 && affinity <= 1.0)) out.push_back("workload: affinity must be in [0, 1]");
  if (!(locality_bias >= 0.0 && locality_bias <= 1.0)) out.push_back("workload: locality_bias must be in [0, 1]");
  if (requests <= 0) out.push_back("workload: requests must be positive");
  if (cluster_size <= 0 || cluster_size > spec.num_experts)
    out.push_back("workload: cluster_size must be in [1, num_experts]");
  if (spec.top_k > spec.num_experts) out.push_back("workload: top_k exceeds num_experts");
  for (const auto& ev : shift_events)
    if (ev.step < 0 || ev.step >= steps) out.push_back(fmt::format("workload: shift event step {} out of range", ev.step));
  return out;
}

WorkloadScript apply_shift(WorkloadScript script, int step, std::uint64_t seed) {
  if (step < 0 || step >= script.steps)
    throw std::out_of_range(fmt::format("shift step {} outside [0, {})", step, script.steps));
  const ShiftEvent ev{step, seed};
  if (std::find(script.shift_events.begin(), script.shift_events.end(), ev) != script.shift_events.end()) return script;
  script.shift_events.push_back(ev);
  std::stable_sort(script.shift_events.begin(), script.shift_events.end(),
                   [](const ShiftEvent& a, const ShiftEvent& b) { return a.step < b.step; });
  return script;
}

namespace {

constexpr double kScale = 4294967296.0;  // 2^32

std::uint64_t threshold(double p) { return std::uint64_t(std::llround(p * kScale)); }
bool draw(Rng& rng, std::uint64_t thr) { return (rng.next() >> 32) < thr; }

}  // namespace

WorkloadGenerator::WorkloadGenerator(WorkloadScript script, ClusterSpec spec)
    : script_(std::move(script)), spec_(std::move(spec)) {
  auto errs = spec_.validate();
  for (auto& e : script_.validate(spec_)) errs.push_back(std::move(e));
  if (!errs.empty()) throw InvariantError(errs.front());
  zipf_cdf_.resize(std::size_t(spec_.num_experts));
  std::uint64_t acc = 0;
  for (int i = 0; i < spec_.num_experts; ++i) {
    const double w = kScale * std::pow(double(i + 1), -script_.skew);
    acc += std::max<std::uint64_t>(1, std::uint64_t(std::llround(w)));
    zipf_cdf_[i] = acc;
  }
}

std::uint64_t WorkloadGenerator::epoch_seed(int step) const {
  std::uint64_t s = derive_seed(script_.seed, "epoch");
  for (const auto& ev : script_.shift_events)
    if (ev.step <= step) s = derive_seed(ev.seed, "shift");
  return s;
}

std::vector<int> WorkloadGenerator::permutation(int layer, std::uint64_t epoch) const {
  std::vector<int> perm(static_cast<std::size_t>(spec_.num_experts));
  for (int i = 0; i < spec_.num_experts; ++i) perm[i] = i;
  Rng rng(derive_seed(epoch, "perm", std::uint64_t(layer)));
  for (int i = spec_.num_experts - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(std::uint64_t(i) + 1)]);
  return perm;
}

// Slots are replaced in rotating order; floor(t * churn * S) replacements
// have happened by step t.
std::vector<std::uint64_t> WorkloadGenerator::request_serials(int step) const {
  const std::uint64_t S = std::uint64_t(script_.requests);
  const auto R = std::uint64_t(std::floor(double(step) * script_.churn_rate * double(S)));
  std::vector<std::uint64_t> out(S);
  for (std::uint64_t j = 0; j < S; ++j) out[j] = R > j ? S + j + S * ((R - 1 - j) / S) : j;
  return out;
}

namespace {

struct Sampler {
  const std::vector<std::uint64_t>& cdf;
  const std::vector<int>& perm;

  int global(Rng& rng) const {
    const std::uint64_t r = rng.below(cdf.back());
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
    return perm[std::size_t(it - cdf.begin())];
  }
};

template <class Pick>
void pick_distinct(Rng& rng, int count, const std::vector<int>& perm, std::vector<int>& chosen, Pick pick) {
  for (int n = 0; n < count; ++n) {
    bool placed = false;
    for (int tries = 0; tries < 64 && !placed; ++tries) {
      const int e = pick(rng);
      if (std::find(chosen.begin(), chosen.end(), e) == chosen.end()) {
        chosen.push_back(e);
        placed = true;
      }
    }
    if (placed) continue;
    for (int e : perm)
      if (std::find(chosen.begin(), chosen.end(), e) == chosen.end()) {
        chosen.push_back(e);
        break;
      }
  }
}

}  // namespace

SourceRouting WorkloadGenerator::routing(int step, int layer) const {
  if (step < 0 || step >= script_.steps || layer < 0 || layer >= script_.layers)
    throw std::out_of_range(fmt::format("workload: step {} layer {} out of range", step, layer));
  const int E = spec_.num_experts, k = spec_.top_k, ep = spec_.ep;
  const std::uint64_t epoch = epoch_seed(step);
  const auto perm = permutation(layer, epoch);
  const Sampler sampler{zipf_cdf_, perm};
  const auto serials = request_serials(step);
  const int cs = std::min(script_.cluster_size, E);

  std::vector<std::vector<int>> clusters;
  clusters.reserve(serials.size());
  for (auto serial : serials) {
    const std::uint64_t topic = derive_seed(script_.seed, "request", serial);
    Rng rng(derive_seed(topic, "cluster", std::uint64_t(layer), epoch));
    std::vector<int> c;
    pick_distinct(rng, cs, perm, c, [&](Rng& g) { return sampler.global(g); });
    clusters.push_back(std::move(c));
  }

  const TokenCount B = script_.tokens_per_step;
  const auto S = TokenCount(serials.size());
  const std::uint64_t aff = threshold(script_.affinity), loc = threshold(script_.locality_bias);
  const int per_rank = E / ep;

  TokenTrace trace;
  trace.top_k = k;
  trace.source.resize(std::size_t(B));
  trace.experts.reserve(std::size_t(B) * k);
  Rng rng(derive_seed(script_.seed, "tokens", std::uint64_t(step), std::uint64_t(layer)));
  std::vector<int> chosen;
  for (TokenCount i = 0; i < B; ++i) {
    const auto& cluster = clusters[std::size_t(i * S / B)];
    chosen.clear();
    pick_distinct(rng, k, perm, chosen, [&](Rng& g) {
      if (draw(g, aff)) return cluster[g.below(cluster.size())];
      return sampler.global(g);
    });
    RankId src = RankId(i % ep);
    if (loc > 0 && draw(rng, loc)) src = chosen.front() / per_rank;
    trace.source[std::size_t(i)] = src;
    trace.experts.insert(trace.experts.end(), chosen.begin(), chosen.end());
  }
  auto r = SourceRouting::from_trace(std::move(trace), ep, E);
  r.declared_tokens = B;
  return r;
}

std::vector<SourceRouting> WorkloadGenerator::step(int step) const {
  std::vector<SourceRouting> out;
  out.reserve(std::size_t(script_.layers));
  for (int l = 0; l < script_.layers; ++l) out.push_back(routing(step, l));
  return out;
}

std::vector<double> WorkloadGenerator::expert_distribution(int step, int layer) const {
  const int E = spec_.num_experts;
  const auto perm = permutation(layer, epoch_seed(step));
  const Sampler sampler{zipf_cdf_, perm};
  std::vector<double> g(static_cast<std::size_t>(E), 0.0);
  const double total = double(zipf_cdf_.back());
  for (int i = 0; i < E; ++i) g[perm[i]] = double(zipf_cdf_[i] - (i ? zipf_cdf_[i - 1] : 0)) / total;

  const auto serials = request_serials(step);
  const TokenCount B = script_.tokens_per_step;
  const auto S = TokenCount(serials.size());
  const double a = script_.affinity;
  std::vector<double> out(static_cast<std::size_t>(E), 0.0);
  for (TokenCount j = 0; j < S; ++j) {
    // tokens i with i*S/B == j
    const TokenCount lo = (j * B + S - 1) / S, hi = ((j + 1) * B + S - 1) / S;
    const double share = double(hi - lo) / double(B);
    if (share == 0.0) continue;
    const std::uint64_t topic = derive_seed(script_.seed, "request", serials[j]);
    Rng rng(derive_seed(topic, "cluster", std::uint64_t(layer), epoch_seed(step)));
    std::vector<int> c;
    pick_distinct(rng, std::min(script_.cluster_size, E), perm, c, [&](Rng& r) { return sampler.global(r); });
    for (int e = 0; e < E; ++e) out[e] += share * (1.0 - a) * g[e];
    for (int e : c) out[e] += share * a / double(c.size());
  }
  return out;
}

std::vector<std::vector<SourceRouting>> generate(const WorkloadScript& script, const ClusterSpec& spec) {
  const WorkloadGenerator gen(script, spec);
  std::vector<std::vector<SourceRouting>> out;
  out.reserve(std::size_t(script.steps));
  for (int t = 0; t < script.steps; ++t) out.push_back(gen.step(t));
  return out;
}

double mean_token_ir(const WorkloadScript& script, const ClusterSpec& spec) {
  const WorkloadGenerator gen(script, spec);
  const auto sharded = Placement::sharded(spec.ep, spec.num_experts);
  double sum = 0.0;
  for (int t = 0; t < script.steps; ++t)
    for (int l = 0; l < script.layers; ++l) {
      const auto loads = rank_loads(gen.routing(t, l), sharded);
      sum += imbalance_ratio(loads);
    }
  return sum / double(script.steps * script.layers);
}

WorkloadScript calibrate_skew(WorkloadScript script, const ClusterSpec& spec, double target_ir, double tol) {
  double lo = 0.0, hi = 4.0;
  auto at = [&](double s) {
    script.skew = s;
    return mean_token_ir(script, spec);
  };
  const double f_lo = at(lo), f_hi = at(hi);
  if (target_ir < f_lo - tol || target_ir > f_hi + tol)
    throw std::invalid_argument(
        fmt::format("calibrate_skew: target IR {:.3f} outside reachable [{:.3f}, {:.3f}]", target_ir, f_lo, f_hi));
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = at(mid);
    if (std::abs(f - target_ir) <= tol) return script;
    (f < target_ir ? lo : hi) = mid;
  }
  throw std::invalid_argument(fmt::format("calibrate_skew: no skew within tol {} of IR {:.3f}", tol, target_ir));
}

double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size() || p.empty()) throw std::invalid_argument("js_divergence: size mismatch");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sp += p[i];
    sq += q[i];
  }
  if (!(sp > 0.0 && sq > 0.0)) throw std::invalid_argument("js_divergence: empty distribution");
  auto kl = [](double a, double m) { return a > 0.0 ? a * std::log2(a / m) : 0.0; };
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p[i] / sp, b = q[i] / sq, m = 0.5 * (a + b);
    d += 0.5 * kl(a, m) + 0.5 * kl(b, m);
  }
  return d;
}

std::vector<double> empirical_distribution(const std::vector<SourceRouting>& routings) {
  if (routings.empty()) return {};
  std::vector<double> out(static_cast<std::size_t>(routings.front().num_experts()), 0.0);
  double total = 0.0;
  for (const auto& r : routings) {
    const auto n = r.expert_loads();
    for (std::size_t e = 0; e < n.size(); ++e) {
      out[e] += double(n[e]);
      total += double(n[e]);
    }
  }
  if (total > 0.0)
    for (auto& v : out) v /= total;
  return out;
}

}  // namespace probe
