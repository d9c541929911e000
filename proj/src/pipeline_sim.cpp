// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/pipeline_sim.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "probe/metrics.hpp"
#include "probe/perf_model.hpp"
#include "probe/rng.hpp"

namespace probe {

std::string to_string(Phase p) {
  switch (p) {
    case Phase::kAttention: return "attention";
    case Phase::kDispatch: return "dispatch";
    case Phase::kMoeCompute: return "moe_compute";
    case Phase::kCombine: return "combine";
    case Phase::kPredict: return "predict";
    case Phase::kPlan: return "plan";
    case Phase::kPrefetchPart1: return "prefetch_part1";
    case Phase::kPrefetchPart2: return "prefetch_part2";
    case Phase::kUpdate: return "update";
  }
  return "unknown";
}

std::string to_string(Resource r) {
  switch (r) {
    case Resource::kCompute: return "compute";
    case Resource::kNetwork: return "network";
    case Resource::kControl: return "control";
  }
  return "unknown";
}

Seconds StepResult::exposed_total() const {
  Seconds s = 0.0;
  for (const auto& l : layers) s += l.exposed;
  return s;
}

namespace {

template <class F>
double layer_mean(const std::vector<LayerResult>& layers, F f) {
  if (layers.empty()) return 0.0;
  const std::size_t first = layers.size() > 1 ? 1 : 0;
  double s = 0.0;
  for (std::size_t i = first; i < layers.size(); ++i) s += f(layers[i]);
  return s / double(layers.size() - first);
}

}  // namespace

double StepResult::mean_ir_pre() const { return layer_mean(layers, [](const LayerResult& l) { return l.ir_tokens_pre; }); }
double StepResult::mean_ir_post() const { return layer_mean(layers, [](const LayerResult& l) { return l.ir_tokens_post; }); }
double StepResult::mean_skew_pre() const { return layer_mean(layers, [](const LayerResult& l) { return l.skew_pre; }); }
double StepResult::mean_skew_post() const { return layer_mean(layers, [](const LayerResult& l) { return l.skew_post; }); }

Assignment realize_assignment(const Plan& plan, const SourceRouting& planned_on, const SourceRouting& truth) {
  const int ep = truth.ep(), E = truth.num_experts();
  if (planned_on.ep() != ep || planned_on.num_experts() != E || plan.assignment.ep() != ep ||
      plan.assignment.num_experts() != E)
    throw std::invalid_argument("realize: plan and routing shapes differ");
  const Placement& p = plan.placement;
  Assignment out(ep, E);
  std::vector<TokenCount> share(static_cast<std::size_t>(ep)), rem(static_cast<std::size_t>(ep));
  std::vector<RankId> order(static_cast<std::size_t>(ep));
  for (RankId s = 0; s < ep; ++s)
    for (ExpertId e = 0; e < E; ++e) {
      const TokenCount n = truth.counts(s, e);
      if (n == 0) continue;
      TokenCount planned = 0;
      for (RankId t = 0; t < ep; ++t) planned += plan.assignment.at(s, e, t);
      if (planned == 0) {
        out.add(s, e, p.hosts(s, e) ? s : p.home(e), n);
        continue;
      }
      TokenCount given = 0;
      for (RankId t = 0; t < ep; ++t) {
        const TokenCount a = plan.assignment.at(s, e, t);
        share[t] = n * a / planned;
        rem[t] = a > 0 ? n * a % planned : -1;
        given += share[t];
      }
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](RankId a, RankId b) { return rem[a] > rem[b]; });
      for (TokenCount i = 0; i < n - given; ++i) ++share[order[std::size_t(i)]];
      for (RankId t = 0; t < ep; ++t)
        if (share[t] > 0) out.add(s, e, t, share[t]);
    }
  return out;
}

namespace {

double skew_of(const MoeStepLatency& m) {
  std::vector<double> totals;
  totals.reserve(m.ranks.size());
  for (const auto& r : m.ranks) totals.push_back(r.total);
  return imbalance_ratio(std::span<const double>(totals));
}

double ir_of(std::span<const TokenCount> loads) { return imbalance_ratio(loads); }

Seconds predict_cost(const SourceRouting& routing, const ClusterSpec& spec) {
  TokenCount hits = 0;
  for (RankId r = 0; r < routing.ep(); ++r) {
    TokenCount row = 0;
    for (TokenCount v : routing.counts.row(r)) row += v;
    hits = std::max(hits, row);
  }
  ClusterSpec mlp = spec;
  mlp.per_token_flops = spec.predictor_flops_per_token;
  return expert_compute_time((hits + spec.top_k - 1) / spec.top_k, mlp) + spec.predict_allgather_cost;
}

}  // namespace

Seconds estimate_window(const MoeStepLatency& current, const SourceRouting& current_routing, const ClusterSpec& spec) {
  const Seconds compute_start = current.comm_max;
  const Seconds compute_end = compute_start + current.compute_max;
  const Seconds est_start =
      std::max(predict_cost(current_routing, spec) + spec.solver_max_iters * spec.planner_duration_model, compute_start);
  return std::max(0.0, compute_end - est_start) + spec.attention_duration;
}

std::vector<Seconds> default_windows(const SourceRouting& routing, const ClusterSpec& spec) {
  const Placement sharded = Placement::sharded(spec.ep, spec.num_experts);
  const auto m = moe_step_latency(init_locality_first(routing, sharded), sharded, spec,
                                  DedupFactors::resolve(spec, routing, sharded));
  return std::vector<Seconds>(static_cast<std::size_t>(spec.ep), estimate_window(m, routing, spec));
}

namespace {

class EventLog {
 public:
  EventLog(std::vector<PhaseEvent>* out, int ep) : out_(out), ep_(ep) {}
  void all(int layer, Phase ph, Seconds s, Seconds e, Resource res) {
    if (!out_) return;
    for (RankId r = 0; r < ep_; ++r) out_->push_back({r, layer, ph, s, e, res});
  }
  void one(RankId r, int layer, Phase ph, Seconds s, Seconds e, Resource res) {
    if (out_) out_->push_back({r, layer, ph, s, e, res});
  }
  void compute(int layer, Seconds s, const MoeStepLatency& m) {
    if (!out_) return;
    for (RankId r = 0; r < ep_; ++r) out_->push_back({r, layer, Phase::kMoeCompute, s, s + m.ranks[r].compute, Resource::kCompute});
  }

 private:
  std::vector<PhaseEvent>* out_;
  int ep_;
};

}  // namespace

StepResult simulate_step(std::span<const SourceRouting> truth, std::span<const SourceRouting> predicted,
                         const ClusterSpec& spec, SimMode mode, const SimOptions& options) {
  const auto spec_errs = spec.validate();
  if (!spec_errs.empty()) throw InvariantError(spec_errs.front());
  if (truth.size() != predicted.size())
    throw std::invalid_argument(fmt::format("simulate: prediction/layer misalignment ({} layers, {} predictions)",
                                            truth.size(), predicted.size()));
  const int ep = spec.ep, E = spec.num_experts;
  for (std::size_t l = 0; l < truth.size(); ++l)
    if (truth[l].ep() != ep || truth[l].num_experts() != E || predicted[l].ep() != ep ||
        predicted[l].num_experts() != E)
      throw std::invalid_argument(fmt::format("simulate: layer {} routing shape does not match the cluster", l));

  const int n = int(truth.size());
  const Placement sharded = Placement::sharded(ep, E);
  const Seconds T_attn = spec.attention_duration;
  const bool aux = mode == SimMode::kProbe && options.planning_enabled;

  StepResult res;
  res.layers.resize(std::size_t(n));
  EventLog log(options.record_events ? &res.events : nullptr, ep);

  Seconds tb = 0.0, tp = 0.0;
  Seconds ready = -std::numeric_limits<Seconds>::infinity();  // next layer's weights and masks
  std::optional<Plan> pending;

  for (int L = 0; L < n; ++L) {
    LayerResult& lr = res.layers[std::size_t(L)];
    lr.layer = L;
    const Assignment base_a = init_locality_first(truth[L], sharded);
    const MoeStepLatency bl = moe_step_latency(base_a, sharded, spec, DedupFactors::resolve(spec, truth[L], sharded));
    lr.ir_tokens_pre = lr.ir_tokens_post = ir_of(base_a.rank_loads());
    lr.skew_pre = lr.skew_post = skew_of(bl);

    {
      const Seconds attn_end = tb + T_attn;
      const Seconds ds = attn_end;
      const Seconds cs = ds + bl.comm_max + bl.compute_max;
      const Seconds ce = cs + bl.comm_max;
      lr.baseline_latency = ce - tb;
      if (mode == SimMode::kBaseline) {
        log.all(L, Phase::kAttention, tb, attn_end, Resource::kCompute);
        log.all(L, Phase::kDispatch, ds, ds + bl.comm_max, Resource::kNetwork);
        log.compute(L, ds + bl.comm_max, bl);
        log.all(L, Phase::kCombine, cs, ce, Resource::kNetwork);
        lr.latency = lr.baseline_latency;
      }
      tb = ce;
    }
    if (mode == SimMode::kBaseline) continue;

    // Placement for this layer: the plan made during the previous layer, if
    // its realized split beats the sharded one.
    MoeStepLatency m = bl;
    if (pending) {
      lr.planned = true;
      lr.iterations = pending->iterations_used;
      const Assignment a = realize_assignment(*pending, predicted[L], truth[L]);
      const MoeStepLatency pm =
          moe_step_latency(a, pending->placement, spec, DedupFactors::resolve(spec, truth[L], pending->placement));
      if (pm.t_moe < bl.t_moe) {
        m = pm;
        lr.ir_tokens_post = ir_of(a.rank_loads());
        lr.skew_post = skew_of(pm);
        lr.replicas = int(pending->placement.total_replicas());
      } else {
        lr.fell_back = pending->placement.total_replicas() > 0;
      }
    }

    const Seconds attn_end = tp + T_attn;
    const Seconds ds = std::max(attn_end, ready);
    lr.exposed += ds - attn_end;
    const Seconds compute_start = ds + m.comm_max;
    const Seconds compute_end = compute_start + m.compute_max;
    log.all(L, Phase::kAttention, tp, attn_end, Resource::kCompute);
    log.all(L, Phase::kDispatch, ds, compute_start, Resource::kNetwork);
    log.compute(L, compute_start, m);

    Seconds cs = compute_end;
    pending.reset();
    ready = -std::numeric_limits<Seconds>::infinity();
    if (aux && L + 1 < n) {
      const Seconds pred_end = ds + predict_cost(truth[L], spec);
      const Seconds est = options.planner_window_override.value_or(estimate_window(m, truth[L], spec));
      const std::vector<Seconds> est_windows(static_cast<std::size_t>(ep), est);
      Plan p = plan(predicted[L + 1], sharded, spec, est_windows, options.planner);
      const Seconds plan_end = pred_end + p.iterations_used * spec.planner_duration_model;
      log.all(L, Phase::kPredict, ds, pred_end, Resource::kControl);
      log.all(L, Phase::kPlan, pred_end, plan_end, Resource::kControl);
      cs = std::max(compute_end, plan_end);
      lr.exposed += cs - compute_end;

      const Seconds ce = cs + m.comm_max;
      const Seconds p1_start = std::max(plan_end, compute_start);
      const Seconds cap = std::max(0.0, cs - p1_start);
      LayerResult& next = res.layers[std::size_t(L + 1)];
      next.transfer.assign(std::size_t(ep), 0.0);
      next.window.assign(std::size_t(ep), cap + T_attn);
      Seconds part2_end = ce;
      for (RankId r = 0; r < ep; ++r) {
        const Seconds tr = transfer_latency(p.delta_in[r].size(), p.delta_out[r].size(), spec);
        next.transfer[r] = tr;
        const Seconds part1 = std::min(tr, cap);
        if (part1 > 0.0) log.one(r, L, Phase::kPrefetchPart1, p1_start, p1_start + part1, Resource::kNetwork);
        if (tr - part1 > 0.0) {
          log.one(r, L, Phase::kPrefetchPart2, ce, ce + (tr - part1), Resource::kNetwork);
          part2_end = std::max(part2_end, ce + (tr - part1));
        }
      }
      next.plan_feasible = true;
      for (RankId r = 0; r < ep; ++r)
        if (next.transfer[r] > next.window[r]) next.plan_feasible = false;
      const Seconds update_end = ce + spec.update_duration;
      log.all(L, Phase::kUpdate, ce, update_end, Resource::kControl);
      ready = std::max(part2_end, update_end);
      pending = std::move(p);
    }
    const Seconds ce = cs + m.comm_max;
    log.all(L, Phase::kCombine, cs, ce, Resource::kNetwork);
    lr.latency = ce - tp;
    tp = ce;
  }
  res.baseline_latency = tb;
  res.probe_latency = mode == SimMode::kBaseline ? tb : tp;
  return res;
}

int SlotSchedule::slots_used() const {
  int used = 0;
  for (const auto& layer : slots)
    for (const auto& rank : layer)
      for (const auto& [e, s] : rank) used = std::max(used, s + 1);
  return used;
}

SlotSchedule replica_slot_manager(std::span<const Plan> plans, const ClusterSpec& spec) {
  const int budget = spec.replica_budget_per_rank;
  if (2 * budget > spec.replica_slots_per_rank)
    throw InvariantError("cluster: replica_budget_per_rank must be at most half of replica_slots_per_rank");
  SlotSchedule out;
  out.slots.resize(plans.size());
  for (std::size_t L = 0; L < plans.size(); ++L) {
    const auto& reps = plans[L].placement.replicas();
    out.slots[L].resize(reps.size());
    for (std::size_t r = 0; r < reps.size(); ++r) {
      if (int(reps[r].size()) > budget)
        throw InvariantError(fmt::format("replica budget exceeded: rank {} layer {} needs {} slots, budget {}", r, L,
                                         reps[r].size(), budget));
      const int bank = int(L % 2) * budget;
      for (std::size_t i = 0; i < reps[r].size(); ++i) out.slots[L][r].push_back({reps[r][i], bank + int(i)});
    }
  }
  return out;
}

namespace {

// Layer latency of a fixed placement, no auxiliary track.
Seconds static_step(std::span<const SourceRouting> truth, const ClusterSpec& spec, const std::vector<Plan>* plans,
                    const std::vector<SourceRouting>* planned_on) {
  const Placement sharded = Placement::sharded(spec.ep, spec.num_experts);
  Seconds t = 0.0;
  for (std::size_t L = 0; L < truth.size(); ++L) {
    MoeStepLatency m;
    if (plans) {
      const Plan& p = (*plans)[L];
      const Assignment a = realize_assignment(p, (*planned_on)[L], truth[L]);
      m = moe_step_latency(a, p.placement, spec, DedupFactors::resolve(spec, truth[L], p.placement));
    } else {
      const Assignment a = init_locality_first(truth[L], sharded);
      m = moe_step_latency(a, sharded, spec, DedupFactors::resolve(spec, truth[L], sharded));
    }
    const Seconds ds = t + spec.attention_duration;
    t = ds + m.comm_max + m.compute_max + m.comm_max;
  }
  return t;
}

}  // namespace

ExperimentResult run_experiment(const WorkloadScript& script, const ClusterSpec& spec,
                                const ExperimentOptions& options) {
  const int steps = options.steps > 0 ? options.steps : script.steps;
  if (steps > script.steps)
    throw std::invalid_argument(fmt::format("experiment: {} steps requested, script has {}", steps, script.steps));
  if (options.one_shot_history && (options.warmup_steps <= 0 || options.warmup_steps > steps))
    throw std::invalid_argument("experiment: warmup_steps must be in [1, steps]");
  const WorkloadGenerator gen(script, spec);
  const double B = double(script.tokens_per_step);

  std::vector<CountMatrix> agg;
  std::vector<SourceRouting> agg_routing;
  std::vector<Plan> one_shot;

  ExperimentResult out;
  out.rows.reserve(std::size_t(steps));
  for (int t = 0; t < steps; ++t) {
    const auto truth = gen.step(t);
    std::vector<SourceRouting> pred;
    if (options.predictor == PredictorMode::kPerfect) {
      pred = truth;
    } else {
      pred.reserve(truth.size());
      for (std::size_t L = 0; L < truth.size(); ++L) {
        NoisyOracleConfig c = options.noisy;
        c.seed = derive_seed(options.noisy.seed, "predict", std::uint64_t(t), L);
        pred.push_back(noisy_oracle_predict(truth[L], c));
      }
    }

    StepRow row;
    row.step = t;
    SimOptions sim = options.sim;
    sim.record_events = options.sim.record_events && t == 0;
    const auto r = simulate_step(truth, pred, spec, options.probe ? SimMode::kProbe : SimMode::kBaseline, sim);
    if (t == 0) out.first_step_events = r.events;
    row.baseline_latency = r.baseline_latency;
    row.probe_latency = r.probe_latency;
    row.ir_pre = r.mean_ir_pre();
    row.ir_post = r.mean_ir_post();
    row.exposed = r.exposed_total();
    for (const auto& l : r.layers) row.replicas += l.replicas;

    if (options.one_shot_history) {
      if (t < options.warmup_steps) {
        if (agg.empty()) agg.assign(truth.size(), CountMatrix(spec.ep, spec.num_experts));
        for (std::size_t L = 0; L < truth.size(); ++L)
          for (RankId s = 0; s < spec.ep; ++s)
            for (ExpertId e = 0; e < spec.num_experts; ++e) agg[L](s, e) += truth[L].counts(s, e);
        row.one_shot_latency = r.baseline_latency;
      } else {
        if (one_shot.empty()) {
          // one offline rebalance: transfers are free, the per-rank budget holds
          const Placement sharded = Placement::sharded(spec.ep, spec.num_experts);
          const std::vector<Seconds> free_windows(static_cast<std::size_t>(spec.ep),
                                                  std::numeric_limits<Seconds>::max());
          for (auto& c : agg) {
            SourceRouting s;
            s.counts = c;
            agg_routing.push_back(s);
            one_shot.push_back(plan(agg_routing.back(), sharded, spec, free_windows, options.sim.planner));
          }
        }
        row.one_shot_latency = static_step(truth, spec, &one_shot, &agg_routing);
      }
      row.one_shot_tps = B / row.one_shot_latency;
    }
    row.baseline_tps = B / row.baseline_latency;
    row.probe_tps = B / row.probe_latency;
    out.rows.push_back(row);
  }
  return out;
}

std::vector<SweepRow> sweep_batches(const WorkloadScript& script, const ClusterSpec& spec,
                                    std::span<const TokenCount> batches, const ExperimentOptions& options) {
  std::vector<SweepRow> out;
  for (TokenCount b : batches) {
    WorkloadScript s = script;
    s.tokens_per_step = b;
    ExperimentOptions o = options;
    o.baseline = o.probe = true;
    o.one_shot_history = false;
    o.sim.record_events = false;
    const auto r = run_experiment(s, spec, o);
    SweepRow row;
    row.batch = b;
    for (const auto& x : r.rows) {
      row.baseline_tps += x.baseline_tps;
      row.probe_tps += x.probe_tps;
    }
    row.baseline_tps /= double(r.rows.size());
    row.probe_tps /= double(r.rows.size());
    out.push_back(row);
  }
  return out;
}

std::string events_csv(std::span<const PhaseEvent> events) {
  std::string out = "rank,layer,phase,start,end,resource\n";
  for (const auto& e : events)
    out += fmt::format("{},{},{},{:.17g},{:.17g},{}\n", e.rank, e.layer, to_string(e.phase), e.start, e.end,
                       to_string(e.resource));
  return out;
}

std::string layers_csv(std::span<const LayerResult> layers) {
  std::string out = "layer,baseline_s,probe_s,exposed_s,ir_pre,ir_post,skew_pre,skew_post,replicas,iterations,fell_back\n";
  for (const auto& l : layers)
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{},{}\n", l.layer,
                       l.baseline_latency, l.latency, l.exposed, l.ir_tokens_pre, l.ir_tokens_post, l.skew_pre,
                       l.skew_post, l.replicas, l.iterations, l.fell_back ? 1 : 0);
  return out;
}

std::string steps_csv(std::span<const StepRow> rows, const ExperimentOptions& options) {
  std::string out = "step";
  if (options.baseline) out += ",baseline_latency_s,baseline_tps";
  if (options.probe) out += ",probe_latency_s,probe_tps,ir_pre,ir_post,exposed_s,replicas";
  if (options.one_shot_history) out += ",one_shot_latency_s,one_shot_tps";
  out += '\n';
  for (const auto& r : rows) {
    out += fmt::format("{}", r.step);
    if (options.baseline) out += fmt::format(",{:.17g},{:.17g}", r.baseline_latency, r.baseline_tps);
    if (options.probe)
      out += fmt::format(",{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{}", r.probe_latency, r.probe_tps, r.ir_pre,
                         r.ir_post, r.exposed, r.replicas);
    if (options.one_shot_history) out += fmt::format(",{:.17g},{:.17g}", r.one_shot_latency, r.one_shot_tps);
    out += '\n';
  }
  return out;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "batch,baseline_tps,probe_tps,speedup\n";
  for (const auto& r : rows)
    out += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", r.batch, r.baseline_tps, r.probe_tps, r.probe_tps / r.baseline_tps);
  return out;
}

}  // namespace probe
