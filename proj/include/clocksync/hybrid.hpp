#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "clocksync/brf.hpp"
#include "clocksync/gbp.hpp"
#include "clocksync/graph.hpp"
#include "clocksync/timestamp.hpp"

namespace clocksync {

/// Which estimator each node runs, and the parent of every BRF node.
struct RolePlan {
  std::vector<Role> roles;
  std::vector<int> parent;  // -1 unless roles[i] == BrfNode

  std::vector<int> brf_nodes() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < roles.size(); ++i) {
      if (roles[i] == Role::BrfNode) out.push_back(static_cast<int>(i));
    }
    return out;
  }
  std::vector<bool> bp_mask() const {
    std::vector<bool> out(roles.size());
    for (std::size_t i = 0; i < roles.size(); ++i) out[i] = roles[i] != Role::BrfNode;
    return out;
  }
};

enum class PartitionPolicy {
  /// Explicit roles are kept; Auto nodes of degree 1 hanging off a non-leaf become BRF
  /// nodes, all other Auto nodes BP nodes.
  LeafBrf,
  /// Every non-master node runs BP; explicit BRF roles are ignored.
  AllBp,
};

inline void validate_plan(const SyncGraph& g, const RolePlan& plan) {
  const auto n = static_cast<std::size_t>(g.node_count());
  if (plan.roles.size() != n || plan.parent.size() != n) throw ConfigError("RolePlan: size mismatch with graph");
  bool any_master = false;
  for (std::size_t i = 0; i < n; ++i) {
    const Role r = plan.roles[i];
    if (r == Role::Auto) throw ConfigError("RolePlan: unresolved role for '" + g.node(static_cast<int>(i)).id + "'");
    if (r == Role::Master) any_master = true;
    if (r == Role::BrfNode) {
      const int p = plan.parent[i];
      if (p < 0 || p >= g.node_count()) throw ConfigError("RolePlan: BRF node '" + g.node(static_cast<int>(i)).id + "' has no parent");
      if (!g.edge_between(static_cast<int>(i), p))
        throw ConfigError("RolePlan: parent of '" + g.node(static_cast<int>(i)).id + "' is not a neighbor");
      const Role pr = plan.roles[static_cast<std::size_t>(p)];
      if (pr != Role::BpNode && pr != Role::Master)
        throw ConfigError("RolePlan: parent of '" + g.node(static_cast<int>(i)).id + "' must be a BP node or the MN");
    } else if (plan.parent[i] != -1) {
      throw ConfigError("RolePlan: only BRF nodes carry a parent");
    }
  }
  if (!any_master) throw ConfigError("RolePlan: graph has no master node");
  if (!g.is_connected(plan.bp_mask())) throw ConfigError("RolePlan: BP subgraph is disconnected");
}

inline RolePlan partition(const SyncGraph& g, PartitionPolicy policy = PartitionPolicy::LeafBrf) {
  if (!g.is_connected()) throw ConfigError("partition: graph is not connected");
  if (g.masters().empty()) throw ConfigError("partition: graph has no master node");
  const auto n = static_cast<std::size_t>(g.node_count());
  RolePlan plan{std::vector<Role>(n, Role::BpNode), std::vector<int>(n, -1)};

  for (int i = 0; i < g.node_count(); ++i) {
    const auto& spec = g.node(i);
    auto& role = plan.roles[static_cast<std::size_t>(i)];
    if (spec.role == Role::Master) {
      role = Role::Master;
      continue;
    }
    if (policy == PartitionPolicy::AllBp) continue;

    bool brf = spec.role == Role::BrfNode;
    if (spec.role == Role::Auto && g.degree(i) == 1) {
      const int nbr = g.neighbors(i).front().first;
      brf = g.degree(nbr) > 1;
    }
    if (!brf) continue;
    role = Role::BrfNode;
    int parent = -1;
    if (spec.parent) {
      parent = g.index_of(*spec.parent);
    } else if (g.degree(i) == 1) {
      parent = g.neighbors(i).front().first;
    } else {
      throw ConfigError("partition: BRF node '" + spec.id + "' needs an explicit parent");
    }
    plan.parent[static_cast<std::size_t>(i)] = parent;
  }
  validate_plan(g, plan);
  return plan;
}

/// Ground truth of one simulated network.
struct NetworkTruth {
  std::vector<ClockParams> clocks;  // per node
  std::vector<LinkModel> links;     // per edge
};

/// Stamps of every link, in graph edge order. Each record names the edge's sender as j.
struct NetworkRecords {
  std::vector<std::vector<TimestampRecord>> per_edge;
  std::vector<std::vector<ExchangeTrace>> traces;
};

/// Independent stream for each edge, derived from the trial seed and edge index.
inline Rng edge_rng(std::uint64_t trial_seed, int edge) {
  std::seed_seq seq{static_cast<std::uint32_t>(trial_seed), static_cast<std::uint32_t>(trial_seed >> 32),
                    1u, static_cast<std::uint32_t>(edge)};
  return Rng(seq);
}

inline NetworkRecords simulate_exchanges(const SyncGraph& g, const NetworkTruth& truth,
                                         const RoundSchedule& schedule, std::uint64_t trial_seed) {
  NetworkRecords out;
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto& spec = g.edge(e);
    Rng rng = edge_rng(trial_seed, e);
    std::vector<ExchangeTrace> tr;
    out.per_edge.push_back(run_rounds(truth.clocks[static_cast<std::size_t>(spec.receiver())],
                                      truth.clocks[static_cast<std::size_t>(spec.sender)],
                                      truth.links[static_cast<std::size_t>(e)], schedule, rng, &tr));
    out.traces.push_back(std::move(tr));
  }
  return out;
}

struct HybridOptions {
  BpOptions bp;
  BrfConfig brf;
  ObservationOptions observation;
};

/// Trajectory of one BRF node.
struct BrfTrack {
  int node = -1;
  int parent = -1;
  /// relative[k]: estimate against the parent after k rounds (k = 0 is the prior).
  std::vector<ClockEstimate> relative;
  std::vector<BrfState> states;
  /// absolute[l]: estimate at BP iteration l. l = 0 is the node's own prior estimate;
  /// l >= 1 composes the final relative estimate with the parent's BP estimate at l.
  std::vector<std::optional<ClockEstimate>> absolute;
};

struct HybridResult {
  RolePlan plan;
  BpResult bp;
  std::vector<BrfTrack> brf;
};

/// BP over the BP nodes and the MN, BRF on each BRF node's link to its parent, and
/// absolute BRF-node estimates by clock composition.
inline HybridResult run_hybrid(const SyncGraph& g, const RolePlan& plan, const NetworkRecords& records,
                               const NetworkTruth& truth, const HybridOptions& opts = {}) {
  validate_plan(g, plan);
  HybridResult res;
  res.plan = plan;

  std::vector<std::optional<ObservationPair>> obs(static_cast<std::size_t>(g.edge_count()));
  const auto mask = plan.bp_mask();
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto& spec = g.edge(e);
    if (!mask[static_cast<std::size_t>(spec.a)] || !mask[static_cast<std::size_t>(spec.b)]) continue;
    obs[static_cast<std::size_t>(e)] =
        build_observation(records.per_edge[static_cast<std::size_t>(e)], truth.links[static_cast<std::size_t>(e)],
                          opts.observation);
  }
  res.bp = run_bp(make_bp_network(g, obs, mask), opts.bp);

  for (int node : plan.brf_nodes()) {
    BrfTrack track;
    track.node = node;
    track.parent = plan.parent[static_cast<std::size_t>(node)];
    const int e = *g.edge_between(node, track.parent);
    if (g.edge(e).sender != track.parent)
      throw ConfigError("run_hybrid: BRF link of '" + g.node(node).id + "' must be initiated by its parent");

    const ThetaState prior = ThetaState::from_prior(g.node(node).prior);
    track.states = run_brf(records.per_edge[static_cast<std::size_t>(e)], truth.links[static_cast<std::size_t>(e)],
                           prior, opts.brf);
    for (const auto& s : track.states) track.relative.push_back(brf_estimate(s));

    const ClockEstimate rel_final = track.relative.back();
    for (std::size_t l = 0; l < res.bp.estimates.size(); ++l) {
      if (l == 0) {
        track.absolute.push_back(prior.estimate());
        continue;
      }
      const auto& parent_est = res.bp.estimates[l][static_cast<std::size_t>(track.parent)];
      if (parent_est) {
        track.absolute.push_back(compose_estimates(rel_final, *parent_est));
      } else {
        track.absolute.push_back(std::nullopt);
      }
    }
    res.brf.push_back(std::move(track));
  }
  return res;
}

}  // namespace clocksync
