// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/oracle.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "probe/perf_model.hpp"
#include "probe/planner.hpp"

namespace probe {

namespace {

struct Replica {
  ExpertId expert;
  RankId rank;
};

// One way of splitting a replicated expert's tokens over its hosts. Only the
// quantities that depend on the split are stored; traffic of non-host sources
// is the same for every split and lives in the fixed part.
struct SplitOption {
  std::vector<double> comp;  // per rank
  std::vector<double> in;    // remote tokens received, per rank
  std::vector<double> out;   // tokens sent away, per rank
  std::vector<TokenCount> amounts;  // [source * hosts + host]
};

class Search {
 public:
  Search(const SourceRouting& routing, const Placement& base, const ClusterSpec& spec, std::span<const Seconds> windows,
         const OracleLimits& limits)
      : routing_(routing),
        base_(base),
        spec_(spec),
        windows_(windows),
        limits_(limits),
        ep_(spec.ep),
        num_experts_(spec.num_experts),
        dedup_(DedupFactors::resolve(spec, routing, base)) {
    for (ExpertId e = 0; e < num_experts_; ++e) home_.push_back(base.home(e));
    for (ExpertId e = 0; e < num_experts_; ++e)
      for (RankId r = 0; r < ep_; ++r)
        if (r != home_[e]) candidates_.push_back({e, r});
  }

  OracleResult run() {
    OracleResult res;
    std::vector<Replica> chosen;
    // Baseline first so that ties keep the replica-free answer.
    evaluate_subset(chosen, res);
    res.baseline_latency = best_;
    enumerate(0, chosen, res);

    Plan& p = res.best_plan;
    p.placement = base_;
    for (RankId r = 0; r < ep_; ++r) p.placement.replicas(r).clear();
    p.delta_in.assign(static_cast<std::size_t>(ep_), {});
    p.delta_out.assign(static_cast<std::size_t>(ep_), {});
    for (const auto& rep : best_subset_) {
      p.placement.replicas(rep.rank).push_back(rep.expert);
      p.delta_in[rep.rank].push_back(rep.expert);
      p.delta_out[home_[rep.expert]].push_back(rep.expert);
    }
    p.assignment = best_assignment_;
    p.iterations_used = static_cast<int>(best_subset_.size());
    certify(p, spec_, windows_);
    const auto m = moe_step_latency(p.assignment, p.placement, spec_, dedup_);
    res.best_latency = 0.0;
    for (const auto& rl : m.ranks) res.best_latency = std::max(res.best_latency, rl.total);
    return res;
  }

 private:
  double rank_latency(RankId r, double comp, double in, double out) const {
    const double v = std::max(spec_.hidden_dim / dedup_.in[r] * in, spec_.hidden_dim / dedup_.out[r] * out);
    return comp + 2.0 * (v / spec_.net_bandwidth);
  }

  void enumerate(std::size_t start, std::vector<Replica>& chosen, OracleResult& res) {
    if (static_cast<int>(chosen.size()) >= limits_.max_total_replicas) return;
    for (std::size_t i = start; i < candidates_.size(); ++i) {
      chosen.push_back(candidates_[i]);
      if (feasible(chosen)) {
        evaluate_subset(chosen, res);
        enumerate(i + 1, chosen, res);
      }
      chosen.pop_back();
    }
  }

  bool feasible(const std::vector<Replica>& chosen) const {
    std::vector<std::size_t> din(static_cast<std::size_t>(ep_), 0), dout(static_cast<std::size_t>(ep_), 0);
    for (const auto& rep : chosen) {
      ++din[rep.rank];
      ++dout[home_[rep.expert]];
    }
    for (RankId r = 0; r < ep_; ++r) {
      if (static_cast<int>(din[r]) > spec_.replica_budget_per_rank) return false;
      if (transfer_latency(din[r], dout[r], spec_) > windows_[r]) return false;
    }
    return true;
  }

  // For fixed per-host totals n_h, keeping min(n_h, c_h) of a host's own
  // tokens local minimises both its ingress and egress, and who sends the rest
  // where does not change any counter: in_h = max(0, n_h - c_h) and
  // out_h = max(0, c_h - n_h). So enumerating totals is exhaustive.
  std::vector<SplitOption> options_for(ExpertId e, const std::vector<RankId>& hosts, std::vector<double>& fixed_out) {
    const std::size_t nh = hosts.size();
    std::vector<TokenCount> own(nh, 0);
    TokenCount total = 0;
    for (RankId s = 0; s < ep_; ++s) {
      const TokenCount c = routing_.counts(s, e);
      total += c;
      const auto it = std::find(hosts.begin(), hosts.end(), s);
      if (it == hosts.end())
        fixed_out[s] += double(c);
      else
        own[std::size_t(it - hosts.begin())] = c;
    }

    // Grid values for hosts 1..; the first host takes the remainder.
    std::vector<std::vector<TokenCount>> grid(nh);
    for (std::size_t h = 1; h < nh; ++h) {
      for (TokenCount v = 0; v <= total; v += limits_.granularity) grid[h].push_back(v);
      grid[h].push_back(own[h]);
      grid[h].push_back(total);
      std::sort(grid[h].begin(), grid[h].end());
      grid[h].erase(std::unique(grid[h].begin(), grid[h].end()), grid[h].end());
    }

    std::vector<SplitOption> out;
    std::vector<TokenCount> n(nh, 0);
    std::function<void(std::size_t, TokenCount)> walk = [&](std::size_t h, TokenCount used) {
      if (h == nh) {
        n[0] = total - used;
        if (limits_.pin_home_tokens && n[0] < own[0]) return;
        out.push_back(make_option(e, hosts, own, n));
        return;
      }
      for (TokenCount v : grid[h]) {
        if (used + v > total) break;
        n[h] = v;
        walk(h + 1, used + v);
      }
    };
    walk(1, 0);
        return out;
  }

  SplitOption make_option(ExpertId e, const std::vector<RankId>& hosts, const std::vector<TokenCount>& own,
                          const std::vector<TokenCount>& n) const {
    const std::size_t nh = hosts.size();
    const std::size_t nep = static_cast<std::size_t>(ep_);
    SplitOption o;
    o.comp.assign(nep, 0.0);
    o.in.assign(nep, 0.0);
    o.out.assign(nep, 0.0);
    o.amounts.assign(nep * nh, 0);
    std::vector<TokenCount> need(nh, 0);
    for (std::size_t h = 0; h < nh; ++h) {
      const RankId r = hosts[h];
      o.comp[r] += expert_compute_time(n[h], spec_);
      const TokenCount kept = std::min(n[h], own[h]);
      o.amounts[std::size_t(r) * nh + h] = kept;
      need[h] = n[h] - kept;
      o.in[r] = double(need[h]);
      o.out[r] = double(own[h] - kept);
    }
    // Route everything not kept local, lowest source and host first.
    std::size_t h = 0;
    for (RankId s = 0; s < ep_; ++s) {
      const auto it = std::find(hosts.begin(), hosts.end(), s);
      TokenCount supply = routing_.counts(s, e);
      if (it != hosts.end()) supply -= o.amounts[std::size_t(s) * nh + std::size_t(it - hosts.begin())];
      while (supply > 0) {
        while (need[h] == 0) ++h;
        const TokenCount a = std::min(supply, need[h]);
        o.amounts[std::size_t(s) * nh + h] += a;
        need[h] -= a;
        supply -= a;
      }
    }
    return o;
  }

  void evaluate_subset(const std::vector<Replica>& chosen, OracleResult& res) {
    ++res.replica_sets;
    std::vector<std::vector<RankId>> hosts(static_cast<std::size_t>(num_experts_));
    for (ExpertId e = 0; e < num_experts_; ++e) hosts[e].push_back(home_[e]);
    for (const auto& rep : chosen) hosts[rep.expert].push_back(rep.rank);

    std::vector<ExpertId> free_experts;
    std::vector<double> comp(static_cast<std::size_t>(ep_), 0.0), in(static_cast<std::size_t>(ep_), 0.0), out(static_cast<std::size_t>(ep_), 0.0);
    for (ExpertId e = 0; e < num_experts_; ++e) {
      if (hosts[e].size() > 1) {
        if (std::find(free_experts.begin(), free_experts.end(), e) == free_experts.end()) free_experts.push_back(e);
        continue;
      }
      const RankId h = home_[e];
      TokenCount n = 0;
      for (RankId s = 0; s < ep_; ++s) {
        const TokenCount c = routing_.counts(s, e);
        n += c;
        if (s != h) {
          in[h] += double(c);
          out[s] += double(c);
        }
      }
      comp[h] += expert_compute_time(n, spec_);
    }

    // Ranks that host no replicated expert are already final.
    std::vector<bool> touched(static_cast<std::size_t>(ep_), false);
    for (ExpertId e : free_experts)
      for (RankId r : hosts[e]) touched[r] = true;

    std::vector<std::vector<SplitOption>> options;
    for (ExpertId e : free_experts) options.push_back(options_for(e, hosts[e], out));

    double fixed_lb = 0.0;
    for (RankId r = 0; r < ep_; ++r)
      if (!touched[r]) fixed_lb = std::max(fixed_lb, rank_latency(r, comp[r], in[r], out[r]));
    if (fixed_lb >= best_) return;

    std::vector<std::size_t> pick(free_experts.size(), 0);
    std::vector<std::size_t> best_pick;
    bool improved = false;

    // Ranks still affected by experts idx.. of free_experts.
    std::vector<std::vector<bool>> open(free_experts.size() + 1, std::vector<bool>(static_cast<std::size_t>(ep_), false));
    for (std::size_t i = free_experts.size(); i-- > 0;) {
      open[i] = open[i + 1];
      for (RankId r : hosts[free_experts[i]]) open[i][r] = true;
    }

    std::function<void(std::size_t, std::vector<double>&, std::vector<double>&, std::vector<double>&)> descend =
        [&](std::size_t idx, std::vector<double>& c, std::vector<double>& vi, std::vector<double>& vo) {
          double lb = 0.0;
          for (RankId r = 0; r < ep_; ++r)
            if (!open[idx][r]) lb = std::max(lb, rank_latency(r, c[r], vi[r], vo[r]));
          if (lb >= best_) return;
          if (idx == free_experts.size()) {
            ++res.evaluations;
            best_ = lb;
            best_pick = pick;
            improved = true;
            return;
          }
          for (std::size_t o = 0; o < options[idx].size(); ++o) {
            const auto& opt = options[idx][o];
            for (RankId r : hosts[free_experts[idx]]) {
              c[r] += opt.comp[r];
              vi[r] += opt.in[r];
              vo[r] += opt.out[r];
            }
            pick[idx] = o;
            descend(idx + 1, c, vi, vo);
            for (RankId r : hosts[free_experts[idx]]) {
              c[r] -= opt.comp[r];
              vi[r] -= opt.in[r];
              vo[r] -= opt.out[r];
            }
          }
        };
    descend(0, comp, in, out);
    if (!improved) return;

    best_subset_ = chosen;
    Assignment a(ep_, num_experts_);
    for (ExpertId e = 0; e < num_experts_; ++e) {
      if (hosts[e].size() > 1) continue;
      for (RankId s = 0; s < ep_; ++s)
        if (const TokenCount c = routing_.counts(s, e); c != 0) a.add(s, e, home_[e], c);
    }
    for (std::size_t i = 0; i < free_experts.size(); ++i) {
      const ExpertId e = free_experts[i];
      const auto& am = options[i][best_pick[i]].amounts;
      const std::size_t nh = hosts[e].size();
      for (RankId s = 0; s < ep_; ++s)
        for (std::size_t h = 0; h < nh; ++h)
          if (const TokenCount n = am[std::size_t(s) * nh + h]; n != 0) a.add(s, e, hosts[e][h], n);
    }
    best_assignment_ = std::move(a);
  }

  const SourceRouting& routing_;
  const Placement& base_;
  const ClusterSpec& spec_;
  std::span<const Seconds> windows_;
  OracleLimits limits_;
  int ep_;
  int num_experts_;
  DedupFactors dedup_;
  std::vector<RankId> home_;
  std::vector<Replica> candidates_;

  double best_ = std::numeric_limits<double>::infinity();
  std::vector<Replica> best_subset_;
  Assignment best_assignment_;
};

}  // namespace

OracleResult oracle_optimal(const SourceRouting& routing, const Placement& base_placement, const ClusterSpec& spec,
                            std::span<const Seconds> windows, const OracleLimits& limits) {
  if (spec.ep > limits.max_ep || spec.num_experts > limits.max_experts || limits.max_total_replicas > 3 ||
      limits.max_total_replicas < 0 || limits.granularity <= 0 || spec.ep > 4 || spec.num_experts > 8)
    throw std::invalid_argument("instance too large for oracle");
  if (static_cast<int>(windows.size()) != spec.ep)
    throw std::invalid_argument("windows: length does not match ep");
  return Search(routing, base_placement, spec, windows, limits).run();
}

}  // namespace probe
