// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/probe.h"

#include <algorithm>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "probe/io.hpp"
#include "probe/metrics.hpp"
#include "probe/perf_model.hpp"
#include "probe/pipeline_sim.hpp"
#include "probe/planner.hpp"
#include "probe/predictor.hpp"
#include "probe/rng.hpp"

struct probe_scenario {
  probe::Scenario s;
};

struct probe_result {
  std::vector<std::pair<std::string, std::string>> artifacts;
  std::string summary;
  bool feasible = true;
};

namespace {

thread_local std::string g_error;

template <class F>
probe_status guarded(F f) {
  g_error.clear();
  try {
    f();
    return PROBE_OK;
  } catch (const probe::ParseError& e) {
    g_error = e.what();
    return PROBE_ERR_PARSE;
  } catch (const probe::InvariantError& e) {
    g_error = e.what();
    return PROBE_ERR_INVALID;
  } catch (const std::invalid_argument& e) {
    g_error = e.what();
    return PROBE_ERR_ARGUMENT;
  } catch (const std::out_of_range& e) {
    g_error = e.what();
    return PROBE_ERR_ARGUMENT;
  } catch (const std::exception& e) {
    g_error = e.what();
    return PROBE_ERR_RUNTIME;
  } catch (...) {
    g_error = "unknown failure";
    return PROBE_ERR_RUNTIME;
  }
}

probe_status null_arg(const char* what) {
  g_error = fmt::format("{} is null", what);
  return PROBE_ERR_NULL;
}

double skew(const probe::MoeStepLatency& m) {
  std::vector<double> t;
  for (const auto& r : m.ranks) t.push_back(r.total);
  return probe::imbalance_ratio(std::span<const double>(t));
}

}  // namespace

extern "C" {

const char* probe_version(void) { return "0.1.0"; }
const char* probe_last_error(void) { return g_error.c_str(); }

probe_status probe_scenario_parse(const char* json, size_t len, probe_scenario** out) {
  if (!json) return null_arg("json");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    auto* s = new probe_scenario{probe::parse_scenario(std::string(json, len))};
    *out = s;
  });
}

void probe_scenario_free(probe_scenario* s) { delete s; }

probe_status probe_scenario_set_seed(probe_scenario* s, uint64_t seed) {
  if (!s) return null_arg("scenario");
  return guarded([&] {
    if (s->s.workload) s->s.workload->seed = probe::derive_seed(seed, "workload");
    s->s.experiment.options.noisy.seed = probe::derive_seed(seed, "predictor");
  });
}

struct PlannedLayer {
  probe::Plan plan;
  double ir_pre, ir_post, skew_pre, skew_post, t_pre, t_post;
};

PlannedLayer plan_one(const probe::SourceRouting& routing, const probe::Placement& placement,
                      const probe::ClusterSpec& spec, const std::vector<probe::Seconds>& windows,
                      const probe::PlannerOptions& opts) {
  probe::Plan p = probe::plan(routing, placement, spec, windows, opts);
  const auto errs = p.validate(routing, placement, spec);
  if (!errs.empty()) throw std::runtime_error("planner produced an invalid plan: " + errs.front());
  const auto base_a = probe::init_locality_first(routing, placement);
  const auto pre = probe::moe_step_latency(base_a, placement, spec, probe::DedupFactors::resolve(spec, routing, placement));
  const auto post =
      probe::moe_step_latency(p.assignment, p.placement, spec, probe::DedupFactors::resolve(spec, routing, p.placement));
  PlannedLayer out{std::move(p), 0, 0, skew(pre), skew(post), pre.t_moe, post.t_moe};
  out.ir_pre = probe::imbalance_ratio(base_a.rank_loads());
  out.ir_post = probe::imbalance_ratio(out.plan.assignment.rank_loads());
  return out;
}

probe_status probe_plan(const probe_scenario* s, probe_result** out) {
  if (!s) return null_arg("scenario");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    const auto& sc = s->s;
    const auto& spec = sc.cluster;
    const auto& opts = sc.experiment.options.sim.planner;
    std::vector<PlannedLayer> layers;
    if (sc.routing) {
      const auto windows = sc.windows ? *sc.windows : probe::default_windows(*sc.routing, spec);
      layers.push_back(plan_one(*sc.routing, sc.placement, spec, windows, opts));
    } else if (sc.workload) {
      // Every layer of the first step.
      const auto step = probe::WorkloadGenerator(*sc.workload, spec).step(0);
      for (const auto& routing : step) {
        const auto windows = sc.windows ? *sc.windows : probe::default_windows(routing, spec);
        layers.push_back(plan_one(routing, sc.placement, spec, windows, opts));
      }
    } else {
      throw probe::InvariantError("scenario: plan needs a routing or workload section");
    }

    auto r = std::make_unique<probe_result>();
    std::vector<probe::RankId> bad;
    double ir_pre = 0, ir_post = 0, sk_pre = 0, sk_post = 0, t_pre = 0, t_post = 0;
    std::size_t replicas = 0;
    int iters = 0;
    std::string plans = "[";
    std::string csv = "layer,ir_pre,ir_post,skew_pre,skew_post,t_moe_pre_s,t_moe_post_s,replicas,iterations,feasible\n";
    for (std::size_t L = 0; L < layers.size(); ++L) {
      const auto& l = layers[L];
      if (l.plan.degraded()) {
        r->feasible = false;
        for (auto k : l.plan.violating_ranks()) bad.push_back(k);
      }
      ir_pre += l.ir_pre;
      ir_post += l.ir_post;
      sk_pre += l.skew_pre;
      sk_post += l.skew_post;
      t_pre += l.t_pre;
      t_post += l.t_post;
      replicas += l.plan.placement.total_replicas();
      iters += l.plan.iterations_used;
      plans += (L ? "," : "") + probe::plan_to_json(l.plan);
      csv += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{},{}\n", L, l.ir_pre, l.ir_post,
                         l.skew_pre, l.skew_post, l.t_pre, l.t_post, l.plan.placement.total_replicas(),
                         l.plan.iterations_used, l.plan.degraded() ? 0 : 1);
    }
    plans += "]";
    const double n = double(layers.size());
    if (sc.routing)
      r->artifacts.push_back({"plan.json", probe::plan_to_json(layers.front().plan)});
    else
      r->artifacts.push_back({"plan.json", plans});
    r->artifacts.push_back({"plan_layers.csv", csv});
    std::sort(bad.begin(), bad.end());
    bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
    r->summary = fmt::format(
        "IR {:.2f} → {:.2f}, {} replicas\nlatency skew {:.2f} → {:.2f}\nT_MoE {:.6g} s → {:.6g} s\n"
        "layers {}, iterations {}\nfeasible {}\n",
        ir_pre / n, ir_post / n, replicas, sk_pre / n, sk_post / n, t_pre, t_post, layers.size(), iters,
        r->feasible ? "yes" : fmt::format("no (ranks {})", fmt::join(bad, ",")));
    *out = r.release();
  });
}

probe_status probe_simulate(const probe_scenario* s, const char* modes, int steps, probe_result** out) {
  if (!s) return null_arg("scenario");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    const auto& sc = s->s;
    if (!sc.workload) throw probe::InvariantError("scenario: simulate needs a workload section");
    probe::ExperimentOptions o = sc.experiment.options;
    if (modes) {
      o.baseline = o.probe = o.one_shot_history = false;
      std::stringstream ss(modes);
      std::string m;
      while (std::getline(ss, m, ',')) {
        if (m == "baseline")
          o.baseline = true;
        else if (m == "probe")
          o.probe = true;
        else if (m == "one_shot_history")
          o.one_shot_history = true;
        else
          throw std::invalid_argument(fmt::format("unknown mode '{}'", m));
      }
    }
    if (!o.baseline && !o.probe && !o.one_shot_history) throw std::invalid_argument("no mode selected");
    if (steps < 0) throw std::invalid_argument("steps must be non-negative");
    if (steps > 0) o.steps = steps;
    const auto res = probe::run_experiment(*sc.workload, sc.cluster, o);

    auto guard = std::make_unique<probe_result>();
    guard->artifacts.push_back({"steps.csv", probe::steps_csv(res.rows, o)});
    guard->artifacts.push_back({"events.csv", probe::events_csv(res.first_step_events)});
    double b = 0, p = 0, x = 0;
    for (const auto& row : res.rows) {
      b += row.baseline_tps;
      p += row.probe_tps;
      x += row.one_shot_tps;
    }
    const double n = double(res.rows.size());
    std::string summary = fmt::format("steps {}\n", res.rows.size());
    if (o.baseline) summary += fmt::format("baseline mean throughput {:.6g} tok/s\n", b / n);
    if (o.probe) summary += fmt::format("probe mean throughput {:.6g} tok/s\n", p / n);
    if (o.one_shot_history) summary += fmt::format("one_shot_history mean throughput {:.6g} tok/s\n", x / n);
    guard->summary = summary;
    *out = guard.release();
  });
}

probe_status probe_sweep(const probe_scenario* s, probe_result** out) {
  if (!s) return null_arg("scenario");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    const auto& sc = s->s;
    if (!sc.workload) throw probe::InvariantError("scenario: sweep needs a workload section");
    const auto rows = probe::sweep_batches(*sc.workload, sc.cluster, sc.experiment.batches, sc.experiment.options);
    auto guard = std::make_unique<probe_result>();
    guard->artifacts.push_back({"sweep.csv", probe::sweep_csv(rows)});
    for (const auto& r : rows)
      guard->summary += fmt::format("batch {}: {:.3f}x\n", r.batch, r.probe_tps / r.baseline_tps);
    *out = guard.release();
  });
}

probe_status probe_train_predictor(const char* config_json, size_t len, const uint64_t* seed, probe_result** out) {
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    probe::TrainConfig cfg = config_json ? probe::train_config_from_json(std::string(config_json, len)) : probe::TrainConfig{};
    if (seed) {
      cfg.seed = probe::derive_seed(*seed, "gate");
      cfg.task.seed = probe::derive_seed(*seed, "task");
    }
    const auto res = probe::train_predictor(cfg);
    auto guard = std::make_unique<probe_result>();
    guard->artifacts.push_back({"checkpoint.json", probe::gate_to_json(res.gate)});
    guard->artifacts.push_back({"fidelity.csv", probe::fidelity_csv(res.history)});
    const auto& last = res.history.back();
    guard->summary = fmt::format(
        "prior topk_acc {:.4f} half_k_hit {:.4f} 2k_recall {:.4f}\n"
        "final topk_acc {:.4f} half_k_hit {:.4f} 2k_recall {:.4f} (epoch {}, loss {:.6f})\n",
        res.prior.topk_acc, res.prior.top_half_k_hit, res.prior.twice_topk_recall, last.eval.topk_acc,
        last.eval.top_half_k_hit, last.eval.twice_topk_recall, last.epoch, last.loss);
    *out = guard.release();
  });
}

size_t probe_result_artifact_count(const probe_result* r) { return r ? r->artifacts.size() : 0; }

const char* probe_result_artifact_name(const probe_result* r, size_t i) {
  return r && i < r->artifacts.size() ? r->artifacts[i].first.c_str() : nullptr;
}

const char* probe_result_artifact_data(const probe_result* r, size_t i, size_t* len) {
  if (!r || i >= r->artifacts.size()) return nullptr;
  if (len) *len = r->artifacts[i].second.size();
  return r->artifacts[i].second.c_str();
}

const char* probe_result_summary(const probe_result* r) { return r ? r->summary.c_str() : ""; }
int probe_result_feasible(const probe_result* r) { return r && r->feasible ? 1 : 0; }
void probe_result_free(probe_result* r) { delete r; }

}  // extern "C"
