// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/planner.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace probe {

Assignment init_locality_first(const SourceRouting& routing, const Placement& base_placement) {
  Assignment a(routing.ep(), routing.num_experts());
  for (ExpertId e = 0; e < routing.num_experts(); ++e) {
    const RankId host = base_placement.home(e);
    if (host < 0) throw InvariantError(fmt::format("placement: expert {} has no base host", e));
    for (RankId s = 0; s < routing.ep(); ++s)
      if (const TokenCount n = routing.counts(s, e); n != 0) a.add(s, e, host, n);
  }
  return a;
}

SolverState::SolverState(const SourceRouting& routing, const Placement& base_placement, const ClusterSpec& spec,
                         std::vector<Seconds> windows, DedupFactors dedup, PlannerOptions options)
    : routing_(&routing),
      baseline_(&base_placement),
      spec_(&spec),
      windows_(std::move(windows)),
      dedup_(std::move(dedup)),
      options_(options),
      assignment_(init_locality_first(routing, base_placement)),
      placement_(base_placement),
      delta_in_(std::size_t(spec.ep)),
      delta_out_(std::size_t(spec.ep)) {
  for (RankId r = 0; r < spec.ep; ++r) placement_.replicas(r).clear();
  refresh();
}

Seconds SolverState::max_latency() const { return *std::max_element(latencies_.begin(), latencies_.end()); }

TokenCount SolverState::movable_mass(RankId r, ExpertId e) const {
  TokenCount n = 0;
  for (RankId s = 0; s < assignment_.ep(); ++s)
    if (s != r) n += assignment_.at(s, e, r);
  return n;
}

std::vector<Seconds> SolverState::evaluate(const Assignment& a, const Placement& p, MoeStepLatency* detail) const {
  MoeStepLatency m = moe_step_latency(a, p, *spec_, dedup_);
  std::vector<Seconds> out(m.ranks.size());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = m.ranks[r].total;
  if (detail) *detail = std::move(m);
  return out;
}

Placement SolverState::placement_with(std::span<const ReplicaMove> moves) const {
  Placement p = placement_;
  for (const auto& m : moves)
    if (!p.hosts(m.dst, m.expert)) p.replicas(m.dst).push_back(m.expert);
  return p;
}

void SolverState::refresh() {
  latencies_ = evaluate(assignment_, placement_, &detail_);
  step_latency_ = detail_.t_moe;
  const int ep = assignment_.ep();
  in_tokens_.assign(std::size_t(ep), 0.0);
  out_tokens_.assign(std::size_t(ep), 0.0);
  for (RankId s = 0; s < ep; ++s)
    for (ExpertId e = 0; e < assignment_.num_experts(); ++e)
      for (RankId t = 0; t < ep; ++t)
        if (t != s) {
          const double n = double(assignment_.at(s, e, t));
          in_tokens_[t] += n;
          out_tokens_[s] += n;
        }
}

void SolverState::accept(std::span<const ReplicaMove> moves, Assignment next) {
  for (const auto& m : moves) {
    if (placement_.hosts(m.dst, m.expert)) continue;
    placement_.replicas(m.dst).push_back(m.expert);
    delta_in_[m.dst].push_back(m.expert);
    delta_out_[baseline_->home(m.expert)].push_back(m.expert);
  }
  assignment_ = std::move(next);
  ++iteration_;
  invalid_.clear();
  refresh();
}

Plan SolverState::to_plan() const {
  Plan p;
  p.placement = placement_;
  p.assignment = assignment_;
  p.delta_in = delta_in_;
  p.delta_out = delta_out_;
  p.iterations_used = iteration_;
  certify(p, *spec_, windows_);
  return p;
}

std::optional<ExpertId> select_heavy_expert(RankId rank, const SolverState& state, RankId dst) {
  std::optional<ExpertId> best;
  TokenCount best_mass = 0;
  for (ExpertId e = 0; e < state.assignment().num_experts(); ++e) {
    if (!state.placement().hosts(rank, e)) continue;
    if (dst >= 0 && state.is_invalid(rank, dst, e)) continue;
    const TokenCount mass = state.movable_mass(rank, e);
    if (mass > best_mass) {
      best = e;
      best_mass = mass;
    }
  }
  return best;
}

namespace {

bool budget_ok(const SolverState& state, const ClusterSpec& spec, std::span<const ReplicaMove> moves) {
  const Placement& pl = state.placement();
  std::vector<std::size_t> din(std::size_t(spec.ep)), dout(std::size_t(spec.ep));
  for (RankId r = 0; r < spec.ep; ++r) {
    din[r] = state.delta_in()[r].size();
    dout[r] = state.delta_out()[r].size();
  }
  std::vector<bool> touched(std::size_t(spec.ep), false);
  std::size_t added = 0;
  for (const auto& m : moves) {
    if (pl.hosts(m.dst, m.expert)) continue;
    const RankId sender = state.baseline().home(m.expert);
    ++din[m.dst];
    ++dout[sender];
    touched[m.dst] = touched[sender] = true;
    ++added;
  }
  if (const auto cap = state.options().max_total_replicas;
      cap && static_cast<int>(pl.total_replicas() + added) > *cap)
    return false;
  for (RankId r = 0; r < spec.ep; ++r) {
    if (!touched[r]) continue;
    if (static_cast<int>(din[r]) > spec.replica_budget_per_rank) return false;
    if (transfer_latency(din[r], dout[r], spec) > state.windows()[r]) return false;
  }
  return true;
}

struct RankTraffic {
  double in = 0.0;   // remote tokens received
  double out = 0.0;  // tokens sent to remote ranks
};


struct PoolEntry {
  int klass;
  RankId rank;
  TokenCount tokens;
};

// Tokens of e processed on `from` that originated elsewhere. Tokens from `to`
// come first (they become local), then sources already sending to `to`, then
// the rest; lower source id first within a class.
std::vector<PoolEntry> movable_pool(const Assignment& a, ExpertId e, RankId from, RankId to) {
  std::vector<PoolEntry> pool;
  for (RankId s = 0; s < a.ep(); ++s) {
    if (s == from) continue;
    const TokenCount n = a.at(s, e, from);
    if (n <= 0) continue;
    int klass = 2;
    if (s == to) {
      klass = 0;
    } else {
      for (ExpertId x = 0; x < a.num_experts() && klass == 2; ++x)
        if (a.at(s, x, to) > 0) klass = 1;
    }
    pool.push_back({klass, s, n});
  }
  std::sort(pool.begin(), pool.end(),
            [](const PoolEntry& l, const PoolEntry& r) { return std::tie(l.klass, l.rank) < std::tie(r.klass, r.rank); });
  return pool;
}

// Walks a pool one token at a time.
struct PoolCursor {
  const std::vector<PoolEntry>* pool;
  std::size_t idx = 0;
  TokenCount used = 0;
  bool done() const { return idx >= pool->size(); }
  RankId origin() const { return (*pool)[idx].rank; }
  void advance() {
    if (++used == (*pool)[idx].tokens) {
      ++idx;
      used = 0;
    }
  }
};

void take_prefix(Assignment& a, ExpertId e, RankId from, RankId to, const std::vector<PoolEntry>& pool,
                 TokenCount count) {
  for (const auto& p : pool) {
    if (count == 0) break;
    const TokenCount take = std::min(count, p.tokens);
    a.add(p.rank, e, from, -take);
    a.add(p.rank, e, to, take);
    count -= take;
  }
}

// A scanned move before its assignment is built.
struct Proposal {
  RebalanceResult rb;  // assignment left empty
  ExpertId fwd = -1;
  std::optional<ExpertId> back;
  RankId src = -1, dst = -1;
  TokenCount best_f = 0, best_b = 0;
};

// Shared scan for one expert moving src -> dst and optionally a second one
// moving dst -> src. Each step moves the single token that gives the lower
// max(L_src, L_dst); the best prefix over the whole scan is kept. Only src and
// dst change, so the other ranks' latencies are reused.
Proposal scan(ExpertId fwd, std::optional<ExpertId> back, RankId src, RankId dst, const SolverState& state) {
  const ClusterSpec& spec = state.spec();
  const Assignment& a = state.assignment();
  const auto& lat = state.latencies();
  const auto& dd = state.dedup();
  const MoeStepLatency& detail = state.detail();

  const auto pool_f = movable_pool(a, fwd, src, dst);
  const auto pool_b = back ? movable_pool(a, *back, dst, src) : std::vector<PoolEntry>{};

  auto one_way = [&](RankId r, const RankTraffic& t) {
    return std::max(spec.hidden_dim / dd.in[r] * t.in, spec.hidden_dim / dd.out[r] * t.out) / spec.net_bandwidth;
  };

  TokenCount f_src = a.expert_on_rank(fwd, src), f_dst = a.expert_on_rank(fwd, dst);
  TokenCount b_src = back ? a.expert_on_rank(*back, src) : 0, b_dst = back ? a.expert_on_rank(*back, dst) : 0;
  double rest_src = detail.ranks[src].compute - expert_compute_time(f_src, spec);
  double rest_dst = detail.ranks[dst].compute - expert_compute_time(f_dst, spec);
  if (back) {
    rest_src -= expert_compute_time(b_src, spec);
    rest_dst -= expert_compute_time(b_dst, spec);
  }
  RankTraffic ts{state.ingress_tokens(src), state.egress_tokens(src)};
  RankTraffic td{state.ingress_tokens(dst), state.egress_tokens(dst)};

  struct Eval {
    double max, min;    // pair latency, compared lexicographically so that a
                        // move that only relieves the cooler rank still counts
    double cs, cd;      // compute
    double ws, wd;      // one-way comm
  };
  auto eval = [&](TokenCount fs, TokenCount fd, TokenCount bs, TokenCount bd, const RankTraffic& xs,
                  const RankTraffic& xd) -> Eval {
    double cs = rest_src + expert_compute_time(fs, spec), cd = rest_dst + expert_compute_time(fd, spec);
    if (back) {
      cs += expert_compute_time(bs, spec);
      cd += expert_compute_time(bd, spec);
    }
    const double ws = one_way(src, xs), wd = one_way(dst, xd);
    const double ls = cs + 2.0 * ws, ld = cd + 2.0 * wd;
    return {std::max(ls, ld), std::min(ls, ld), cs, cd, ws, wd};
  };
  const double tol = 1e-9 * std::max(lat[src], lat[dst]);
  auto better = [tol](const Eval& x, const Eval& y) {
    if (x.max < y.max - tol) return true;
    if (x.max > y.max + tol) return false;
    return x.min < y.min - tol;
  };

  PoolCursor cf{&pool_f}, cb{&pool_b};
  TokenCount moved_f = 0, moved_b = 0;
  Proposal res;
  res.fwd = fwd;
  res.back = back;
  res.src = src;
  res.dst = dst;
  const double inf = std::numeric_limits<double>::infinity();
  Eval best{std::max(lat[src], lat[dst]), std::min(lat[src], lat[dst]), 0, 0, 0, 0};
  const Eval none{inf, inf, 0, 0, 0, 0};
  while (!cf.done() || !cb.done()) {
    Eval pf = none, pb = none;
    RankTraffic fs = ts, fd = td, bs = ts, bd = td;
    if (!cf.done()) {
      fs.in -= 1.0;
      (cf.origin() == dst ? fd.out : fd.in) += cf.origin() == dst ? -1.0 : 1.0;
      pf = eval(f_src - 1, f_dst + 1, b_src, b_dst, fs, fd);
    }
    if (!cb.done()) {
      bd.in -= 1.0;
      (cb.origin() == src ? bs.out : bs.in) += cb.origin() == src ? -1.0 : 1.0;
      pb = eval(f_src, f_dst, b_src + 1, b_dst - 1, bs, bd);
    }
    Eval cur;
    if (!better(pb, pf)) {
      --f_src;
      ++f_dst;
      ts = fs;
      td = fd;
      cf.advance();
      ++moved_f;
      cur = pf;
    } else {
      ++b_src;
      --b_dst;
      ts = bs;
      td = bd;
      cb.advance();
      ++moved_b;
      cur = pb;
    }
    if (better(cur, best)) {
      best = cur;
      res.best_f = moved_f;
      res.best_b = moved_b;
    }
  }

  RebalanceResult& rb = res.rb;
  rb.moved = res.best_f + res.best_b;
  rb.latencies = lat;
  if (rb.moved == 0) {
    rb.max_latency = state.max_latency();
    rb.step_latency = state.step_latency();
    return res;
  }
  if (res.best_f > 0) rb.replicas.push_back({fwd, dst});
  if (back && res.best_b > 0) rb.replicas.push_back({*back, src});
  rb.latencies[src] = best.cs + 2.0 * best.ws;
  rb.latencies[dst] = best.cd + 2.0 * best.wd;
  double comp_max = 0.0, comm_max = 0.0;
  for (RankId r = 0; r < RankId(lat.size()); ++r) {
    const double c = r == src ? best.cs : r == dst ? best.cd : detail.ranks[r].compute;
    const double w = r == src ? best.ws : r == dst ? best.wd
                                                   : std::max(detail.ranks[r].ingress_volume, detail.ranks[r].egress_volume) /
                                                         spec.net_bandwidth;
    comp_max = std::max(comp_max, c);
    comm_max = std::max(comm_max, w);
  }
  rb.max_latency = *std::max_element(rb.latencies.begin(), rb.latencies.end());
  rb.step_latency = comp_max + 2.0 * comm_max;
  rb.gain = lat[src] - std::max(rb.latencies[src], rb.latencies[dst]);
  return res;
}

Assignment materialize(const Proposal& p, const SolverState& state) {
  Assignment a = state.assignment();
  take_prefix(a, p.fwd, p.src, p.dst, movable_pool(state.assignment(), p.fwd, p.src, p.dst), p.best_f);
  if (p.back) take_prefix(a, *p.back, p.dst, p.src, movable_pool(state.assignment(), *p.back, p.dst, p.src), p.best_b);
  return a;
}

RebalanceResult rebalance(ExpertId fwd, std::optional<ExpertId> back, RankId src, RankId dst, const SolverState& state) {
  Proposal p = scan(fwd, back, src, dst, state);
  p.rb.assignment = materialize(p, state);
  return std::move(p.rb);
}

std::vector<Seconds> sorted_desc(std::vector<Seconds> v) {
  std::sort(v.begin(), v.end(), std::greater<>());
  return v;
}

// Drop at the first position of the descending profiles where they differ by
// more than tol; negative when the new profile is worse.
Seconds lexicographic_gain(const std::vector<Seconds>& before, const std::vector<Seconds>& after, Seconds tol) {
  for (std::size_t i = 0; i < before.size(); ++i)
    if (std::abs(before[i] - after[i]) > tol) return before[i] - after[i];
  return 0.0;
}

}  // namespace

bool check_dual_budget(RankId src, RankId dst, ExpertId e, const SolverState& state, const ClusterSpec& spec) {
  (void)src;
  const ReplicaMove m{e, dst};
  return budget_ok(state, spec, {&m, 1});
}

RebalanceResult water_filling_rebalance(ExpertId e, RankId src, RankId dst, const SolverState& state) {
  return rebalance(e, std::nullopt, src, dst, state);
}

RebalanceResult exchange_rebalance(ExpertId fwd, ExpertId back, RankId src, RankId dst, const SolverState& state) {
  return rebalance(fwd, back, src, dst, state);
}

void certify(Plan& plan, const ClusterSpec& spec, std::span<const Seconds> windows) {
  const int ep = plan.placement.ep();
  if (static_cast<int>(windows.size()) != ep)
    throw std::invalid_argument(fmt::format("windows: expected {} entries, got {}", ep, windows.size()));
  plan.feasibility.assign(std::size_t(ep), {});
  for (RankId r = 0; r < ep; ++r) {
    plan.feasibility[r].transfer = transfer_latency(plan.delta_in[r].size(), plan.delta_out[r].size(), spec);
    plan.feasibility[r].window = windows[r];
  }
}

namespace {

struct Candidate {
  Seconds score = 0.0;
  Proposal p;
};

std::vector<RankId> ranks_by_latency(const SolverState& st, bool descending) {
  std::vector<RankId> order(st.latencies().size());
  std::iota(order.begin(), order.end(), 0);
  const auto& l = st.latencies();
  std::stable_sort(order.begin(), order.end(),
                   [&](RankId x, RankId y) { return descending ? l[x] > l[y] : l[x] < l[y]; });
  return order;
}

// Experts on host with tokens from origin, heaviest first (at most three).
std::vector<ExpertId> heaviest_from(const SolverState& st, RankId host, RankId origin) {
  std::vector<std::pair<TokenCount, ExpertId>> v;
  for (ExpertId e = 0; e < st.spec().num_experts; ++e)
    if (st.placement().hosts(host, e))
      if (const TokenCount n = st.assignment().at(origin, e, host); n > 0) v.push_back({-n, e});
  std::sort(v.begin(), v.end());
  std::vector<ExpertId> out;
  for (std::size_t i = 0; i < v.size() && i < 3; ++i) out.push_back(v[i].second);
  return out;
}

bool raises_cost(const RebalanceResult& rb, const SolverState& st) {
  return rb.moved == 0 || rb.max_latency > st.max_latency() ||
         (st.options().guard_step_latency && rb.step_latency > st.step_latency());
}

// All admissible moves of one iteration, best first. Single moves from the
// two most loaded ranks come first; exchanges only when no single move helps;
// refinement among existing hosts only when neither does. `wide` offers moves
// from both hot ranks at once (used for the branching first move).
std::vector<Candidate> candidates(SolverState& st, Seconds eps, bool wide = false) {
  const ClusterSpec& spec = st.spec();
  const int ep = spec.ep;
  std::vector<Candidate> out;
  const auto hot = ranks_by_latency(st, true);
  const auto cold = ranks_by_latency(st, false);
  auto offer = [&](Proposal p) {
    if (raises_cost(p.rb, st) || p.rb.gain <= eps) return;
    const Seconds g = p.rb.gain;
    out.push_back({g, std::move(p)});
  };

  // Bottleneck first; the second most loaded rank is the fallback source.
  for (int si = 0; si < std::min(2, ep) && (wide || out.empty()); ++si) {
    const RankId src = hot[si];
    // same order as repeated select_heavy_expert calls, computed once
    std::vector<std::pair<TokenCount, ExpertId>> heavy;
    for (ExpertId e = 0; e < spec.num_experts; ++e)
      if (st.placement().hosts(src, e))
        if (const TokenCount m = st.movable_mass(src, e); m > 0) heavy.push_back({-m, e});
    std::sort(heavy.begin(), heavy.end());
    for (RankId dst : cold) {
      if (dst == src) continue;
      for (const auto& [neg_mass, e] : heavy) {
        if (st.is_invalid(src, dst, e)) continue;
        if (!check_dual_budget(src, dst, e, st, spec)) { st.mark_invalid(src, dst, e); continue; }
        offer(scan(e, std::nullopt, src, dst, st));
      }
    }
  }
  // Two-way exchange: each side keeps its own tokens local, which is what it
  // takes once both ranks are bound by max(ingress, egress).
  for (int si = 0; si < std::min(2, ep) && out.empty(); ++si) {
    const RankId src = hot[si];
    for (RankId dst : cold) {
      if (dst == src) continue;
      for (ExpertId fwd : heaviest_from(st, src, dst))
        for (ExpertId back : heaviest_from(st, dst, src)) {
          if (fwd == back) continue;
          const ReplicaMove pair[2] = {{fwd, dst}, {back, src}};
          if (budget_ok(st, spec, pair)) offer(scan(fwd, back, src, dst, st));
        }
    }
  }
  // Refinement among existing hosts: no replica is spent, so any move that
  // improves the sorted latency profile is taken.
  if (out.empty()) {
    const auto before = sorted_desc(st.latencies());
    auto refine = [&](Proposal p) {
      if (raises_cost(p.rb, st)) return;
      const Seconds g = lexicographic_gain(before, sorted_desc(p.rb.latencies), eps * 1e-2);
      if (g > 0.0) out.push_back({g, std::move(p)});
    };
    const Placement& pl = st.placement();
    for (RankId a = 0; a < ep; ++a)
      for (RankId b = 0; b < ep; ++b) {
        if (a == b) continue;
        std::vector<ExpertId> shared;
        for (ExpertId e = 0; e < spec.num_experts; ++e)
          if (pl.hosts(a, e) && pl.hosts(b, e) && st.movable_mass(a, e) > 0) shared.push_back(e);
        for (ExpertId e : shared) refine(scan(e, std::nullopt, a, b, st));
        if (a > b) continue;
        for (ExpertId f : shared)
          for (ExpertId g : shared)
            if (f != g && st.movable_mass(b, g) > 0) refine(scan(f, g, a, b, st));
      }
  }
  std::stable_sort(out.begin(), out.end(), [](const Candidate& x, const Candidate& y) { return x.score > y.score; });
  return out;
}

void run_greedy(SolverState& st, Seconds eps) {
  while (st.iteration() < st.spec().solver_max_iters) {
    auto c = candidates(st, eps);
    if (c.empty()) break;
    st.accept(c.front().p.rb.replicas, materialize(c.front().p, st));
  }
}

// Lower bottleneck, then lower T_MoE, then fewer replicas.
bool better_plan(const SolverState& x, const SolverState& y) {
  if (x.max_latency() != y.max_latency()) return x.max_latency() < y.max_latency();
  if (x.step_latency() != y.step_latency()) return x.step_latency() < y.step_latency();
  return x.placement().total_replicas() < y.placement().total_replicas();
}

}  // namespace

Plan plan(const SourceRouting& routing, const Placement& base_placement, const ClusterSpec& spec,
          std::span<const Seconds> windows, const PlannerOptions& options) {
  if (static_cast<int>(windows.size()) != spec.ep)
    throw std::invalid_argument(fmt::format("windows: expected {} entries, got {}", spec.ep, windows.size()));
  for (Seconds w : windows)
    if (!(w >= 0.0)) throw std::invalid_argument("windows: entries must be non-negative");
  if (options.first_move_branches < 1) throw std::invalid_argument("planner: first_move_branches must be >= 1");
  if (options.branch_depth < 1) throw std::invalid_argument("planner: branch_depth must be >= 1");

  SolverState root(routing, base_placement, spec, {windows.begin(), windows.end()},
                   DedupFactors::resolve(spec, routing, base_placement), options);
  const Seconds eps = spec.solver_epsilon.value_or(options.relative_epsilon * root.max_latency());
  if (spec.ep < 2 || spec.solver_max_iters < 1) return root.to_plan();

  // Uniform routing (every source sends every expert the same count) is left
  // alone, even though an exchange could still trim all-to-all volume.
  const auto& counts = routing.counts.data();
  if (std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) == counts.end()) return root.to_plan();

  SolverState probe_state = root;
  auto first = candidates(probe_state, eps, true);
  if (first.empty()) return root.to_plan();

  // The greedy continues from each of the best few moves, for the first
  // branch_depth moves; the best finished plan wins, ties going to the
  // higher-ranked branch.
  std::optional<SolverState> best;
  std::function<void(const SolverState&, const std::vector<Candidate>&, int)> expand =
      [&](const SolverState& from, const std::vector<Candidate>& cands, int depth) {
        const std::size_t n = std::min(cands.size(), std::size_t(options.first_move_branches));
        for (std::size_t i = 0; i < n; ++i) {
          SolverState st = from;
          st.accept(cands[i].p.rb.replicas, materialize(cands[i].p, from));
          if (depth < options.branch_depth && st.iteration() < spec.solver_max_iters) {
            if (auto next = candidates(st, eps, true); !next.empty()) {
              expand(st, next, depth + 1);
              continue;
            }
          }
          run_greedy(st, eps);
          if (!best || better_plan(st, *best)) best = std::move(st);
        }
      };
  expand(root, first, 1);
  return best->to_plan();
}

}  // namespace probe
