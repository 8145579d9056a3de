#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "clocksync/hybrid.hpp"
#include "clocksync/scenario.hpp"

namespace clocksync {

enum class Mode { Bp, Hybrid, BrfPairwise };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Bp: return "bp";
    case Mode::Hybrid: return "hybrid";
    case Mode::BrfPairwise: return "brf-pairwise";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "bp") return Mode::Bp;
  if (s == "hybrid") return Mode::Hybrid;
  if (s == "brf-pairwise") return Mode::BrfPairwise;
  throw ConfigError("unknown mode '" + s + "' (expected bp, hybrid or brf-pairwise)");
}

/// Running sums of squared errors for one (node set, iteration) cell.
struct ErrorCell {
  double sum_offset2 = 0.0;  // ns^2
  double sum_skew2 = 0.0;    // ppm^2
  long count = 0;

  void add(const ClockEstimate& est, const ClockParams& truth) {
    const double e_off = est.offset - truth.offset;
    const double e_skew = (est.skew - truth.skew) * kPpm;
    sum_offset2 += e_off * e_off;
    sum_skew2 += e_skew * e_skew;
    ++count;
  }
  void merge(const ErrorCell& o) {
    sum_offset2 += o.sum_offset2;
    sum_skew2 += o.sum_skew2;
    count += o.count;
  }
  double offset_rmse() const {
    return count ? std::sqrt(sum_offset2 / count) : std::numeric_limits<double>::quiet_NaN();
  }
  double skew_rmse_ppm() const {
    return count ? std::sqrt(sum_skew2 / count) : std::numeric_limits<double>::quiet_NaN();
  }
};

/// set name -> cells indexed by iteration (BP iteration l, or BRF round k for bs_relative).
using ErrorTable = std::map<std::string, std::vector<ErrorCell>>;

inline void merge_tables(ErrorTable& into, const ErrorTable& from) {
  for (const auto& [name, cells] : from) {
    auto& dst = into[name];
    if (dst.size() < cells.size()) dst.resize(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) dst[i].merge(cells[i]);
  }
}

/// Evaluated backhaul nodes and the base stations hanging off them.
struct NodeSets {
  std::vector<int> mesh;
  std::vector<int> bs;
  std::vector<int> bs_parent;
};

inline NodeSets node_sets(const Scenario& s) {
  const SyncGraph& g = s.topology;
  const RolePlan leaf = partition(g, PartitionPolicy::LeafBrf);
  NodeSets out;
  for (const auto& id : s.evaluated_nodes) out.mesh.push_back(g.index_of(id));
  for (int b : leaf.brf_nodes()) {
    const int p = leaf.parent[static_cast<std::size_t>(b)];
    if (std::find(out.mesh.begin(), out.mesh.end(), p) != out.mesh.end()) {
      out.bs.push_back(b);
      out.bs_parent.push_back(p);
    }
  }
  return out;
}

inline RolePlan plan_for(const Scenario& s, Mode mode) {
  return partition(s.topology, mode == Mode::Bp ? PartitionPolicy::AllBp : PartitionPolicy::LeafBrf);
}

/// Everything produced by one trial.
struct TrialRun {
  int trial = 0;
  std::uint64_t seed = 0;
  NetworkTruth truth;
  NetworkRecords records;
  RolePlan plan;
  std::optional<HybridResult> hybrid;            // bp and hybrid modes
  std::vector<BrfTrack> pairwise;                // brf-pairwise mode
};

inline std::vector<BrfTrack> run_pairwise(const Scenario& s, const RolePlan& plan, const NetworkRecords& rec,
                                          const NetworkTruth& truth) {
  const SyncGraph& g = s.topology;
  std::vector<BrfTrack> out;
  for (int node : plan.brf_nodes()) {
    BrfTrack t;
    t.node = node;
    t.parent = plan.parent[static_cast<std::size_t>(node)];
    const int e = *g.edge_between(node, t.parent);
    if (g.edge(e).sender != t.parent)
      throw ConfigError("brf-pairwise: link of '" + g.node(node).id + "' must be initiated by its parent");
    t.states = run_brf(rec.per_edge[static_cast<std::size_t>(e)], truth.links[static_cast<std::size_t>(e)],
                       ThetaState::from_prior(g.node(node).prior), s.brf);
    for (const auto& st : t.states) t.relative.push_back(brf_estimate(st));
    out.push_back(std::move(t));
  }
  return out;
}

inline TrialRun run_trial(const Scenario& s, Mode mode, int trial) {
  TrialRun r;
  r.trial = trial;
  r.seed = trial_seed(s.seed, static_cast<std::uint64_t>(trial));
  r.truth = sample_truth(s, r.seed);
  r.records = simulate_exchanges(s.topology, r.truth, s.schedule, r.seed);
  r.plan = plan_for(s, mode);
  if (mode == Mode::BrfPairwise) {
    r.pairwise = run_pairwise(s, r.plan, r.records, r.truth);
  } else {
    r.hybrid = run_hybrid(s.topology, r.plan, r.records, r.truth, hybrid_options(s));
  }
  return r;
}

/// Estimate of `node` at iteration l, holding the last available one after BP stopped.
inline std::optional<ClockEstimate> held_estimate(const TrialRun& r, int node, int l) {
  const auto& h = *r.hybrid;
  for (const auto& t : h.brf) {
    if (t.node != node) continue;
    const int last = static_cast<int>(t.absolute.size()) - 1;
    return t.absolute[static_cast<std::size_t>(std::min(l, last))];
  }
  const int last = static_cast<int>(h.bp.estimates.size()) - 1;
  return h.bp.estimates[static_cast<std::size_t>(std::min(l, last))][static_cast<std::size_t>(node)];
}

inline ErrorTable trial_errors(const Scenario& s, const NodeSets& sets, Mode mode, const TrialRun& r) {
  ErrorTable t;
  auto truth_of = [&](int n) { return r.truth.clocks[static_cast<std::size_t>(n)]; };

  const std::vector<BrfTrack>& tracks = mode == Mode::BrfPairwise ? r.pairwise : r.hybrid->brf;
  if (mode != Mode::Bp) {
    auto& rel = t["bs_relative"];
    rel.resize(static_cast<std::size_t>(s.schedule.rounds) + 1);
    for (std::size_t b = 0; b < sets.bs.size(); ++b) {
      for (const auto& tr : tracks) {
        if (tr.node != sets.bs[b]) continue;
        const ClockParams truth = relative_params(truth_of(tr.node), truth_of(tr.parent));
        for (std::size_t k = 0; k < tr.relative.size(); ++k) rel[k].add(tr.relative[k], truth);
      }
    }
  }
  if (mode == Mode::BrfPairwise) return t;

  const auto n_iter = static_cast<std::size_t>(s.max_iterations) + 1;
  auto& mesh = t["mesh"];
  auto& bs = t["bs_absolute"];
  auto& all = t["evaluated"];
  mesh.resize(n_iter);
  bs.resize(n_iter);
  all.resize(n_iter);
  for (std::size_t l = 0; l < n_iter; ++l) {
    for (int n : sets.mesh) {
      if (auto e = held_estimate(r, n, static_cast<int>(l))) {
        mesh[l].add(*e, truth_of(n));
        all[l].add(*e, truth_of(n));
      }
    }
    for (int n : sets.bs) {
      if (auto e = held_estimate(r, n, static_cast<int>(l))) {
        bs[l].add(*e, truth_of(n));
        all[l].add(*e, truth_of(n));
      }
    }
  }
  return t;
}

struct RmseRow {
  std::string algorithm;
  std::string node_set;
  int iteration = 0;
  double offset_rmse_ns = 0.0;
  double skew_rmse_ppm = 0.0;
  int trials = 0;
};

struct MonteCarloResult {
  Mode mode = Mode::Bp;
  int first_trial = 0;
  int trials = 0;
  ErrorTable table;
  std::vector<ErrorTable> per_trial;
  std::vector<int> stop_iterations;  // empty for brf-pairwise
  std::vector<char> converged;
  std::vector<std::string> warnings;

  std::vector<RmseRow> rows() const {
    std::vector<RmseRow> out;
    static const char* order[] = {"evaluated", "mesh", "bs_absolute", "bs_relative"};
    for (const char* name : order) {
      auto it = table.find(name);
      if (it == table.end()) continue;
      for (std::size_t i = 0; i < it->second.size(); ++i) {
        out.push_back({mode_name(mode), name, static_cast<int>(i), it->second[i].offset_rmse(),
                       it->second[i].skew_rmse_ppm(), trials});
      }
    }
    return out;
  }

  const ErrorCell& cell(const std::string& set, int iteration) const {
    return table.at(set).at(static_cast<std::size_t>(iteration));
  }
};

inline int resolve_workers(int requested, int trials) {
  int w = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  return std::clamp(w, 1, std::max(1, trials));
}

/// Runs trials [first_trial, first_trial + s.trials). Per-trial work is independent and
/// reduced in trial order, so the result does not depend on the worker count.
inline MonteCarloResult run_monte_carlo(const Scenario& s, Mode mode, int first_trial = 0) {
  s.validate();
  const NodeSets sets = node_sets(s);
  const int n = s.trials;

  MonteCarloResult res;
  res.mode = mode;
  res.first_trial = first_trial;
  res.trials = n;
  res.per_trial.resize(static_cast<std::size_t>(n));
  std::vector<int> stops(static_cast<std::size_t>(n), 0);
  std::vector<char> conv(static_cast<std::size_t>(n), 0);
  std::vector<std::vector<std::string>> warns(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));

  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      const auto u = static_cast<std::size_t>(i);
      try {
        const TrialRun r = run_trial(s, mode, first_trial + i);
        res.per_trial[u] = trial_errors(s, sets, mode, r);
        if (r.hybrid) {
          stops[u] = r.hybrid->bp.stop_iteration;
          conv[u] = r.hybrid->bp.converged;
          warns[u] = r.hybrid->bp.warnings;
        }
      } catch (...) {
        errors[u] = std::current_exception();
      }
    }
  };
  const int workers = resolve_workers(s.workers, n);
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  for (int i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    if (!errors[u]) continue;
    const int trial = first_trial + i;
    const std::string where = "trial " + std::to_string(trial) + " (seed " +
                              std::to_string(trial_seed(s.seed, static_cast<std::uint64_t>(trial))) + ")";
    try {
      std::rethrow_exception(errors[u]);
    } catch (const std::exception& e) {
      throw Error(where + ": " + e.what());
    }
  }

  for (int i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    merge_tables(res.table, res.per_trial[u]);
    for (const auto& w : warns[u]) {
      if (std::find(res.warnings.begin(), res.warnings.end(), w) == res.warnings.end()) res.warnings.push_back(w);
    }
  }
  if (mode != Mode::BrfPairwise) {
    res.stop_iterations = std::move(stops);
    res.converged = std::move(conv);
  }
  return res;
}

}  // namespace clocksync
