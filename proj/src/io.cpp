// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/io.hpp"

#include <algorithm>
#include <initializer_list>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace probe {

using nlohmann::json;

namespace {

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("malformed JSON: {}", e.what()));
  }
}

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(fmt::format("{}: expected an object", path));
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  expect_object(j, path);
  for (const auto& [k, v] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      throw ParseError(fmt::format("{}: unknown key '{}'", path, k));
}

template <class T>
T as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path, e.what()));
  }
}

template <class T>
T req(const json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) throw ParseError(fmt::format("{}: missing key '{}'", path, key));
  return as<T>(j.at(key), path + "." + key);
}

template <class T>
void opt(const json& j, const char* key, T& out, const std::string& path) {
  if (j.contains(key)) out = as<T>(j.at(key), path + "." + key);
}

// ---- cluster

json to_j(const ClusterSpec& s) {
  json j;
  j["ep"] = s.ep;
  j["num_experts"] = s.num_experts;
  j["top_k"] = s.top_k;
  j["hidden_dim"] = s.hidden_dim;
  j["expert_weight_bytes"] = s.expert_weight_bytes;
  j["per_token_flops"] = s.per_token_flops;
  j["peak_flops"] = s.peak_flops;
  j["net_bandwidth"] = s.net_bandwidth;
  const auto& c = s.efficiency_curve;
  if (c.kind() == EfficiencyCurve::Kind::kSaturating) {
    j["efficiency_curve"] = {{"kind", "saturating"}, {"n_sat", c.n_sat()}};
  } else {
    json bps = json::array();
    for (const auto& [n, eta] : c.breakpoints()) bps.push_back({n, eta});
    j["efficiency_curve"] = {{"kind", "piecewise_table"}, {"breakpoints", bps}};
  }
  const auto& d = s.dedup_model;
  j["dedup_model"] = {{"kind", d.kind == DedupModel::Kind::kConstant ? "constant" : "fanin"},
                      {"lambda_in", d.lambda_in},
                      {"lambda_out", d.lambda_out}};
  j["replica_budget_per_rank"] = s.replica_budget_per_rank;
  j["replica_slots_per_rank"] = s.replica_slots_per_rank;
  j["solver_max_iters"] = s.solver_max_iters;
  j["solver_epsilon"] = s.solver_epsilon ? json(*s.solver_epsilon) : json(nullptr);
  j["attention_duration"] = s.attention_duration;
  j["predict_allgather_cost"] = s.predict_allgather_cost;
  j["planner_duration_model"] = s.planner_duration_model;
  j["predictor_flops_per_token"] = s.predictor_flops_per_token;
  j["update_duration"] = s.update_duration;
  return j;
}

ClusterSpec cluster_from(const json& j, const std::string& path) {
  check_keys(j,
             {"ep", "num_experts", "top_k", "hidden_dim", "expert_weight_bytes", "per_token_flops", "peak_flops",
              "net_bandwidth", "efficiency_curve", "dedup_model", "replica_budget_per_rank", "replica_slots_per_rank",
              "solver_max_iters", "solver_epsilon", "attention_duration", "predict_allgather_cost",
              "planner_duration_model", "predictor_flops_per_token", "update_duration"},
             path);
  ClusterSpec s;
  opt(j, "ep", s.ep, path);
  opt(j, "num_experts", s.num_experts, path);
  opt(j, "top_k", s.top_k, path);
  opt(j, "hidden_dim", s.hidden_dim, path);
  opt(j, "expert_weight_bytes", s.expert_weight_bytes, path);
  opt(j, "per_token_flops", s.per_token_flops, path);
  opt(j, "peak_flops", s.peak_flops, path);
  opt(j, "net_bandwidth", s.net_bandwidth, path);
  if (j.contains("efficiency_curve")) {
    const auto& c = j.at("efficiency_curve");
    const std::string cp = path + ".efficiency_curve";
    check_keys(c, {"kind", "n_sat", "breakpoints"}, cp);
    const auto kind = req<std::string>(c, "kind", cp);
    if (kind == "saturating") {
      s.efficiency_curve = EfficiencyCurve::saturating(req<double>(c, "n_sat", cp));
    } else if (kind == "piecewise_table") {
      std::vector<std::pair<double, double>> bps;
      for (const auto& bp : req<std::vector<std::vector<double>>>(c, "breakpoints", cp)) {
        if (bp.size() != 2) throw ParseError(cp + ".breakpoints: each breakpoint is [tokens, eta]");
        bps.push_back({bp[0], bp[1]});
      }
      s.efficiency_curve = EfficiencyCurve::table(std::move(bps));
    } else {
      throw ParseError(fmt::format("{}.kind: unknown efficiency curve '{}'", cp, kind));
    }
  }
  if (j.contains("dedup_model")) {
    const auto& d = j.at("dedup_model");
    const std::string dp = path + ".dedup_model";
    check_keys(d, {"kind", "lambda_in", "lambda_out"}, dp);
    const auto kind = req<std::string>(d, "kind", dp);
    if (kind == "constant")
      s.dedup_model.kind = DedupModel::Kind::kConstant;
    else if (kind == "fanin")
      s.dedup_model.kind = DedupModel::Kind::kFanin;
    else
      throw ParseError(fmt::format("{}.kind: unknown dedup model '{}'", dp, kind));
    opt(d, "lambda_in", s.dedup_model.lambda_in, dp);
    opt(d, "lambda_out", s.dedup_model.lambda_out, dp);
  }
  opt(j, "replica_budget_per_rank", s.replica_budget_per_rank, path);
  opt(j, "replica_slots_per_rank", s.replica_slots_per_rank, path);
  opt(j, "solver_max_iters", s.solver_max_iters, path);
  if (j.contains("solver_epsilon") && !j.at("solver_epsilon").is_null())
    s.solver_epsilon = as<double>(j.at("solver_epsilon"), path + ".solver_epsilon");
  opt(j, "attention_duration", s.attention_duration, path);
  opt(j, "predict_allgather_cost", s.predict_allgather_cost, path);
  opt(j, "planner_duration_model", s.planner_duration_model, path);
  opt(j, "predictor_flops_per_token", s.predictor_flops_per_token, path);
  opt(j, "update_duration", s.update_duration, path);
  return s;
}

// ---- routing

json to_j(const SourceRouting& r) {
  json j;
  json counts = json::array();
  for (int s = 0; s < r.ep(); ++s) counts.push_back(std::vector<TokenCount>(r.counts.row(s).begin(), r.counts.row(s).end()));
  j["counts"] = counts;
  if (r.declared_tokens) j["declared_tokens"] = *r.declared_tokens;
  if (r.trace) {
    json experts = json::array();
    for (std::size_t t = 0; t < r.trace->size(); ++t) {
      const auto ex = r.trace->experts_of(t);
      experts.push_back(std::vector<ExpertId>(ex.begin(), ex.end()));
    }
    j["trace"] = {{"top_k", r.trace->top_k}, {"source", r.trace->source}, {"experts", experts}};
  }
  return j;
}

SourceRouting routing_from(const json& j, const std::string& path) {
  check_keys(j, {"counts", "declared_tokens", "trace"}, path);
  const auto rows = req<std::vector<std::vector<TokenCount>>>(j, "counts", path);
  if (rows.empty()) throw ParseError(path + ".counts: empty matrix");
  SourceRouting r;
  r.counts = CountMatrix(int(rows.size()), int(rows.front().size()));
  for (std::size_t s = 0; s < rows.size(); ++s) {
    if (rows[s].size() != rows.front().size()) throw ParseError(fmt::format("{}.counts: row {} has a different length", path, s));
    for (std::size_t e = 0; e < rows[s].size(); ++e) r.counts(int(s), int(e)) = rows[s][e];
  }
  if (j.contains("declared_tokens")) r.declared_tokens = as<TokenCount>(j.at("declared_tokens"), path + ".declared_tokens");
  if (j.contains("trace")) {
    const auto& t = j.at("trace");
    const std::string tp = path + ".trace";
    check_keys(t, {"top_k", "source", "experts"}, tp);
    TokenTrace tr;
    tr.top_k = req<int>(t, "top_k", tp);
    tr.source = req<std::vector<RankId>>(t, "source", tp);
    const auto ex = req<std::vector<std::vector<ExpertId>>>(t, "experts", tp);
    if (ex.size() != tr.source.size()) throw ParseError(tp + ": source and experts lengths differ");
    for (const auto& row : ex) {
      if (int(row.size()) != tr.top_k) throw ParseError(tp + ".experts: every token needs top_k experts");
      tr.experts.insert(tr.experts.end(), row.begin(), row.end());
    }
    r.trace = std::move(tr);
  }
  return r;
}

// ---- placement

json to_j(const Placement& p) {
  json base = json::array();
  for (RankId r = 0; r < p.ep(); ++r) {
    std::vector<int> row(static_cast<std::size_t>(p.num_experts()));
    for (ExpertId e = 0; e < p.num_experts(); ++e) row[e] = p.base(r, e) ? 1 : 0;
    base.push_back(row);
  }
  return {{"base", base}, {"replicas", p.replicas()}};
}

Placement placement_from(const json& j, const std::string& path) {
  check_keys(j, {"base", "replicas"}, path);
  const auto base = req<std::vector<std::vector<int>>>(j, "base", path);
  if (base.empty()) throw ParseError(path + ".base: empty matrix");
  Placement p(int(base.size()), int(base.front().size()));
  for (std::size_t r = 0; r < base.size(); ++r) {
    if (base[r].size() != base.front().size()) throw ParseError(fmt::format("{}.base: row {} has a different length", path, r));
    for (std::size_t e = 0; e < base[r].size(); ++e) p.set_base(int(r), int(e), base[r][e] != 0);
  }
  if (j.contains("replicas")) {
    const auto reps = as<std::vector<std::vector<ExpertId>>>(j.at("replicas"), path + ".replicas");
    if (reps.size() != base.size()) throw ParseError(path + ".replicas: one list per rank required");
    for (std::size_t r = 0; r < reps.size(); ++r) p.replicas(int(r)) = reps[r];
  }
  return p;
}

// ---- workload

json to_j(const WorkloadScript& w) {
  json ev = json::array();
  for (const auto& e : w.shift_events) ev.push_back({{"step", e.step}, {"seed", e.seed}});
  return {{"regime", to_string(w.regime)},
          {"steps", w.steps},
          {"layers", w.layers},
          {"tokens_per_step", w.tokens_per_step},
          {"skew", w.skew},
          {"churn_rate", w.churn_rate},
          {"shift_events", ev},
          {"seed", w.seed},
          {"requests", w.requests},
          {"cluster_size", w.cluster_size},
          {"affinity", w.affinity},
          {"locality_bias", w.locality_bias}};
}

WorkloadScript workload_from(const json& j, const std::string& path) {
  check_keys(j,
             {"regime", "steps", "layers", "tokens_per_step", "skew", "churn_rate", "shift_events", "seed", "requests",
              "cluster_size", "affinity", "locality_bias"},
             path);
  Regime regime = Regime::kDecodeChurn;
  if (j.contains("regime")) {
    try {
      regime = regime_from_string(as<std::string>(j.at("regime"), path + ".regime"));
    } catch (const InvariantError& e) {
      throw ParseError(fmt::format("{}.regime: {}", path, e.what()));
    }
  }
  WorkloadScript w = WorkloadScript::preset(regime);
  opt(j, "steps", w.steps, path);
  opt(j, "layers", w.layers, path);
  opt(j, "tokens_per_step", w.tokens_per_step, path);
  opt(j, "skew", w.skew, path);
  opt(j, "churn_rate", w.churn_rate, path);
  opt(j, "seed", w.seed, path);
  opt(j, "requests", w.requests, path);
  opt(j, "cluster_size", w.cluster_size, path);
  opt(j, "affinity", w.affinity, path);
  opt(j, "locality_bias", w.locality_bias, path);
  if (j.contains("shift_events")) {
    const auto& evs = j.at("shift_events");
    if (!evs.is_array()) throw ParseError(path + ".shift_events: expected an array");
    for (const auto& e : evs) {
      check_keys(e, {"step", "seed"}, path + ".shift_events[]");
      w.shift_events.push_back({req<int>(e, "step", path + ".shift_events[]"),
                                req<std::uint64_t>(e, "seed", path + ".shift_events[]")});
    }
  }
  return w;
}

// ---- experiment

json to_j(const ExperimentConfig& c) {
  const auto& o = c.options;
  json modes = json::array();
  if (o.baseline) modes.push_back("baseline");
  if (o.probe) modes.push_back("probe");
  if (o.one_shot_history) modes.push_back("one_shot_history");
  json planner = {{"relative_epsilon", o.sim.planner.relative_epsilon},
                  {"guard_step_latency", o.sim.planner.guard_step_latency},
                  {"first_move_branches", o.sim.planner.first_move_branches},
                  {"branch_depth", o.sim.planner.branch_depth}};
  if (o.sim.planner.max_total_replicas) planner["max_total_replicas"] = *o.sim.planner.max_total_replicas;
  json j = {{"modes", modes},
            {"steps", o.steps},
            {"warmup_steps", o.warmup_steps},
            {"predictor", o.predictor == PredictorMode::kPerfect ? "perfect" : "noisy_oracle"},
            {"noisy",
             {{"topk_accuracy", o.noisy.topk_accuracy},
              {"seed", o.noisy.seed},
              {"substitution",
               o.noisy.substitution == NoisyOracleConfig::Substitution::kUniform ? "uniform" : "popularity"}}},
            {"planning_enabled", o.sim.planning_enabled},
            {"planner", planner},
            {"batches", c.batches}};
  if (o.noisy.top_half_k_hit) j["noisy"]["top_half_k_hit"] = *o.noisy.top_half_k_hit;
  return j;
}

ExperimentConfig experiment_from(const json& j, const std::string& path) {
  check_keys(j, {"modes", "steps", "warmup_steps", "predictor", "noisy", "planning_enabled", "planner", "batches"},
             path);
  ExperimentConfig c;
  auto& o = c.options;
  if (j.contains("modes")) {
    o.baseline = o.probe = o.one_shot_history = false;
    for (const auto& m : as<std::vector<std::string>>(j.at("modes"), path + ".modes")) {
      if (m == "baseline")
        o.baseline = true;
      else if (m == "probe")
        o.probe = true;
      else if (m == "one_shot_history")
        o.one_shot_history = true;
      else
        throw ParseError(fmt::format("{}.modes: unknown mode '{}'", path, m));
    }
  }
  opt(j, "steps", o.steps, path);
  opt(j, "warmup_steps", o.warmup_steps, path);
  if (j.contains("predictor")) {
    const auto p = as<std::string>(j.at("predictor"), path + ".predictor");
    if (p == "perfect")
      o.predictor = PredictorMode::kPerfect;
    else if (p == "noisy_oracle")
      o.predictor = PredictorMode::kNoisyOracle;
    else
      throw ParseError(fmt::format("{}.predictor: unknown predictor '{}'", path, p));
  }
  if (j.contains("noisy")) {
    const auto& n = j.at("noisy");
    const std::string np = path + ".noisy";
    check_keys(n, {"topk_accuracy", "top_half_k_hit", "seed", "substitution"}, np);
    opt(n, "topk_accuracy", o.noisy.topk_accuracy, np);
    if (n.contains("top_half_k_hit")) o.noisy.top_half_k_hit = as<double>(n.at("top_half_k_hit"), np + ".top_half_k_hit");
    opt(n, "seed", o.noisy.seed, np);
    if (n.contains("substitution")) {
      const auto s = as<std::string>(n.at("substitution"), np + ".substitution");
      if (s == "uniform")
        o.noisy.substitution = NoisyOracleConfig::Substitution::kUniform;
      else if (s == "popularity")
        o.noisy.substitution = NoisyOracleConfig::Substitution::kPopularity;
      else
        throw ParseError(fmt::format("{}.substitution: unknown law '{}'", np, s));
    }
  }
  opt(j, "planning_enabled", o.sim.planning_enabled, path);
  if (j.contains("planner")) {
    const auto& p = j.at("planner");
    const std::string pp = path + ".planner";
    check_keys(p, {"relative_epsilon", "max_total_replicas", "guard_step_latency", "first_move_branches", "branch_depth"},
               pp);
    opt(p, "relative_epsilon", o.sim.planner.relative_epsilon, pp);
    if (p.contains("max_total_replicas")) o.sim.planner.max_total_replicas = as<int>(p.at("max_total_replicas"), pp);
    opt(p, "guard_step_latency", o.sim.planner.guard_step_latency, pp);
    opt(p, "first_move_branches", o.sim.planner.first_move_branches, pp);
    opt(p, "branch_depth", o.sim.planner.branch_depth, pp);
  }
  opt(j, "batches", c.batches, path);
  return c;
}

// ---- plan

json to_j(const Plan& p) {
  json split = json::array();
  for (const auto& e : p.assignment.entries()) split.push_back({e.source, e.expert, e.target, e.tokens});
  json feas = json::array();
  for (const auto& f : p.feasibility) feas.push_back({{"transfer", f.transfer}, {"window", f.window}});
  return {{"placement", to_j(p.placement)},
          {"split", split},
          {"delta_in", p.delta_in},
          {"delta_out", p.delta_out},
          {"iterations_used", p.iterations_used},
          {"feasibility", feas},
          {"degraded", p.degraded()},
          {"violating_ranks", p.violating_ranks()}};
}

Plan plan_from(const json& j, const std::string& path) {
  check_keys(j, {"placement", "split", "delta_in", "delta_out", "iterations_used", "feasibility", "degraded",
                 "violating_ranks"},
             path);
  Plan p;
  if (!j.contains("placement")) throw ParseError(path + ": missing key 'placement'");
  p.placement = placement_from(j.at("placement"), path + ".placement");
  std::vector<SplitEntry> entries;
  for (const auto& row : req<std::vector<std::vector<long long>>>(j, "split", path)) {
    if (row.size() != 4) throw ParseError(path + ".split: each entry is [source, expert, target, tokens]");
    entries.push_back({RankId(row[0]), ExpertId(row[1]), RankId(row[2]), TokenCount(row[3])});
  }
  try {
    p.assignment = Assignment::from_entries(p.placement.ep(), p.placement.num_experts(), entries);
  } catch (const std::exception& e) {
    throw ParseError(fmt::format("{}.split: {}", path, e.what()));
  }
  p.delta_in = req<std::vector<std::vector<ExpertId>>>(j, "delta_in", path);
  p.delta_out = req<std::vector<std::vector<ExpertId>>>(j, "delta_out", path);
  p.iterations_used = req<int>(j, "iterations_used", path);
  if (j.contains("feasibility")) {
    const auto& fs = j.at("feasibility");
    if (!fs.is_array()) throw ParseError(path + ".feasibility: expected an array");
    for (const auto& f : fs)
      p.feasibility.push_back({req<double>(f, "transfer", path + ".feasibility[]"),
                               req<double>(f, "window", path + ".feasibility[]")});
  }
  return p;
}

// ---- predictor config

json to_j(const TrainConfig& c) {
  const auto& t = c.task;
  return {{"task",
           {{"dim", t.dim},
            {"experts", t.experts},
            {"top_k", t.top_k},
            {"drift_rank", t.drift_rank},
            {"drift", t.drift},
            {"noise", t.noise},
            {"router_scale", t.router_scale},
            {"seed", t.seed}}},
          {"hidden", c.hidden},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"train_tokens", c.train_tokens},
          {"eval_tokens", c.eval_tokens},
          {"log_every", c.log_every},
          {"init_scale", c.init_scale},
          {"seed", c.seed}};
}

TrainConfig train_config_from(const json& j, const std::string& path) {
  check_keys(j, {"task", "hidden", "lr", "epochs", "train_tokens", "eval_tokens", "log_every", "init_scale", "seed"},
             path);
  TrainConfig c;
  if (j.contains("task")) {
    const auto& t = j.at("task");
    const std::string tp = path + ".task";
    check_keys(t, {"dim", "experts", "top_k", "drift_rank", "drift", "noise", "router_scale", "seed"}, tp);
    opt(t, "dim", c.task.dim, tp);
    opt(t, "experts", c.task.experts, tp);
    opt(t, "top_k", c.task.top_k, tp);
    opt(t, "drift_rank", c.task.drift_rank, tp);
    opt(t, "drift", c.task.drift, tp);
    opt(t, "noise", c.task.noise, tp);
    opt(t, "router_scale", c.task.router_scale, tp);
    opt(t, "seed", c.task.seed, tp);
  }
  opt(j, "hidden", c.hidden, path);
  opt(j, "lr", c.lr, path);
  opt(j, "epochs", c.epochs, path);
  opt(j, "train_tokens", c.train_tokens, path);
  opt(j, "eval_tokens", c.eval_tokens, path);
  opt(j, "log_every", c.log_every, path);
  opt(j, "init_scale", c.init_scale, path);
  opt(j, "seed", c.seed, path);
  return c;
}

void raise_first(const std::vector<std::string>& errs) {
  if (!errs.empty()) throw InvariantError(errs.front());
}

}  // namespace

Scenario parse_scenario(const std::string& text) {
  const json j = parse(text);
  check_keys(j, {"cluster", "routing", "placement", "windows", "workload", "experiment"}, "scenario");
  Scenario s;
  if (!j.contains("cluster")) throw ParseError("scenario: missing key 'cluster'");
  s.cluster = cluster_from(j.at("cluster"), "cluster");
  raise_first(s.cluster.validate());
  if (j.contains("routing")) s.routing = routing_from(j.at("routing"), "routing");
  s.placement = j.contains("placement") ? placement_from(j.at("placement"), "placement")
                                        : Placement::sharded(s.cluster.ep, s.cluster.num_experts);
  if (j.contains("windows")) s.windows = as<std::vector<Seconds>>(j.at("windows"), "windows");
  if (j.contains("workload")) s.workload = workload_from(j.at("workload"), "workload");
  if (j.contains("experiment")) s.experiment = experiment_from(j.at("experiment"), "experiment");

  if (s.routing) raise_first(validate_scenario(s.cluster, *s.routing, s.placement));
  else raise_first(s.placement.validate(&s.cluster));
  if (s.windows) {
    if (int(s.windows->size()) != s.cluster.ep) throw InvariantError("windows: length does not match ep");
    for (Seconds w : *s.windows)
      if (!(w >= 0.0)) throw InvariantError("windows: entries must be non-negative");
  }
  if (s.workload) raise_first(s.workload->validate(s.cluster));
  return s;
}

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["cluster"] = to_j(s.cluster);
  if (s.routing) j["routing"] = to_j(*s.routing);
  j["placement"] = to_j(s.placement);
  if (s.windows) j["windows"] = *s.windows;
  if (s.workload) j["workload"] = to_j(*s.workload);
  j["experiment"] = to_j(s.experiment);
  return j.dump(1);
}

std::string cluster_to_json(const ClusterSpec& spec) { return to_j(spec).dump(1); }
ClusterSpec cluster_from_json(const std::string& text) { return cluster_from(parse(text), "cluster"); }

std::string routing_to_json(const SourceRouting& r) { return to_j(r).dump(); }
SourceRouting routing_from_json(const std::string& text) { return routing_from(parse(text), "routing"); }

std::string placement_to_json(const Placement& p) { return to_j(p).dump(); }
Placement placement_from_json(const std::string& text) { return placement_from(parse(text), "placement"); }

std::string workload_to_json(const WorkloadScript& w) { return to_j(w).dump(1); }
WorkloadScript workload_from_json(const std::string& text) { return workload_from(parse(text), "workload"); }

std::string plan_to_json(const Plan& p) { return to_j(p).dump(1); }
Plan plan_from_json(const std::string& text) { return plan_from(parse(text), "plan"); }

std::string trace_to_json(const std::vector<std::vector<SourceRouting>>& steps) {
  json j = json::array();
  for (const auto& layers : steps) {
    json row = json::array();
    for (const auto& r : layers) row.push_back(to_j(r));
    j.push_back(row);
  }
  return j.dump();
}

std::vector<std::vector<SourceRouting>> trace_from_json(const std::string& text) {
  const json j = parse(text);
  if (!j.is_array()) throw ParseError("trace: expected an array of steps");
  std::vector<std::vector<SourceRouting>> out;
  for (std::size_t t = 0; t < j.size(); ++t) {
    if (!j[t].is_array()) throw ParseError(fmt::format("trace[{}]: expected an array of layers", t));
    std::vector<SourceRouting> layers;
    for (std::size_t l = 0; l < j[t].size(); ++l) layers.push_back(routing_from(j[t][l], fmt::format("trace[{}][{}]", t, l)));
    out.push_back(std::move(layers));
  }
  return out;
}

std::string train_config_to_json(const TrainConfig& c) { return to_j(c).dump(1); }
TrainConfig train_config_from_json(const std::string& text) { return train_config_from(parse(text), "config"); }

}  // namespace probe
