#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "clocksync/brf.hpp"
#include "clocksync/gbp.hpp"
#include "clocksync/graph.hpp"
#include "clocksync/hybrid.hpp"
#include "clocksync/timestamp.hpp"

namespace clocksync {

/// Everything a Monte-Carlo run needs besides the mode.
struct Scenario {
  std::string name = "baseline";
  SyncGraph topology;
  RoundSchedule schedule;
  int max_iterations = 10;  // L
  double epsilon = 0.01;
  int trials = 1000;
  std::uint64_t seed = 1;

  std::pair<double, double> offset_range{-1000.0, 1000.0};  // ns, uniform
  double skew_mean = 1.0;
  double skew_variance = 1e-4;
  std::pair<double, double> skew_bounds{0.9, 1.1};  // truncation of the skew draw
  std::pair<double, double> delay_range{200.0, 300.0};  // ns, uniform per link
  double sigma_t = 4.0;
  double sigma_r = 4.0;

  std::vector<std::string> evaluated_nodes{"v1", "v6"};
  BrfConfig brf;
  ObservationOptions observation;
  int workers = 0;  // 0: hardware concurrency

  void validate() const {
    if (schedule.rounds < 2) throw ConfigError("scenario: at least 2 rounds are required");
    if (max_iterations < 1) throw ConfigError("scenario: max_iterations must be at least 1");
    if (!(epsilon > 0.0)) throw ConfigError("scenario: epsilon must be positive");
    if (trials < 1) throw ConfigError("scenario: trials must be at least 1");
    if (!(offset_range.first <= offset_range.second)) throw ConfigError("scenario: bad offset range");
    if (!(skew_bounds.first > 0.0 && skew_bounds.first < skew_bounds.second))
      throw ConfigError("scenario: bad skew bounds");
    if (!(skew_variance >= 0.0)) throw ConfigError("scenario: skew variance must be non-negative");
    if (skew_variance == 0.0 && (skew_mean < skew_bounds.first || skew_mean > skew_bounds.second))
      throw ConfigError("scenario: skew mean outside its bounds");
    if (!(delay_range.first > 0.0 && delay_range.first <= delay_range.second))
      throw ConfigError("scenario: bad delay range");
    if (!(sigma_t >= 0.0 && sigma_r >= 0.0)) throw ConfigError("scenario: noise must be non-negative");
    if (workers < 0) throw ConfigError("scenario: workers must be non-negative");
    double max_delay = delay_range.second;
    for (const auto& e : topology.edges()) {
      if (e.delay) max_delay = std::max(max_delay, *e.delay);
      if (e.delay_range) max_delay = std::max(max_delay, e.delay_range->second);
    }
    if (!(schedule.delta > schedule.turnaround + 2.0 * max_delay))
      throw ConfigError("scenario: delta_ns must exceed turnaround_ns + 2 * largest delay");
    if (topology.masters().size() != 1) throw ConfigError("scenario: topology needs exactly one master node");
    if (!topology.is_connected()) throw ConfigError("scenario: topology is not connected");
    for (const auto& id : evaluated_nodes) {
      if (!topology.has_node(id)) throw ConfigError("scenario: evaluated node '" + id + "' not in topology");
    }
  }
};

/// Backhaul mesh v1..v7 with the master on v7 and a leaf base station on v1 and on v6.
/// Links start from the endpoint closer to the master, so every base station's link is
/// initiated by its parent.
inline SyncGraph default_topology() {
  SyncGraph g;
  g.add_node({"v7", Role::Master, ClockPrior::master(), std::nullopt});
  for (const char* id : {"v1", "v2", "v3", "v4", "v5", "v6"}) g.add_node({id, Role::Auto, ClockPrior::skew_only(), std::nullopt});
  g.add_node({"bs1", Role::Auto, ClockPrior::skew_only(), std::nullopt});
  g.add_node({"bs6", Role::Auto, ClockPrior::skew_only(), std::nullopt});

  g.add_edge("v7", "v1");
  g.add_edge("v7", "v3");
  g.add_edge("v7", "v4");
  g.add_edge("v7", "v6");
  g.add_edge("v1", "v2");
  g.add_edge("v3", "v2");
  g.add_edge("v4", "v5");
  g.add_edge("v6", "v5");
  g.add_edge("v1", "bs1");
  g.add_edge("v6", "bs6");
  return g;
}

/// Ring v1..v7 with chords v2-v7 and v4-v7, master v7, base stations on v1 and v6.
inline SyncGraph ring_chords_topology() {
  SyncGraph g;
  g.add_node({"v7", Role::Master, ClockPrior::master(), std::nullopt});
  for (const char* id : {"v1", "v2", "v3", "v4", "v5", "v6"}) g.add_node({id, Role::Auto, ClockPrior::skew_only(), std::nullopt});
  g.add_node({"bs1", Role::Auto, ClockPrior::skew_only(), std::nullopt});
  g.add_node({"bs6", Role::Auto, ClockPrior::skew_only(), std::nullopt});

  g.add_edge("v7", "v1");
  g.add_edge("v7", "v2");
  g.add_edge("v7", "v4");
  g.add_edge("v7", "v6");
  g.add_edge("v1", "v2");
  g.add_edge("v2", "v3");
  g.add_edge("v4", "v3");
  g.add_edge("v4", "v5");
  g.add_edge("v6", "v5");
  g.add_edge("v1", "bs1");
  g.add_edge("v6", "bs6");
  return g;
}

inline Scenario default_scenario() {
  Scenario s;
  s.topology = default_topology();
  return s;
}

/// 64-bit mix of (master seed, trial index); adjacent trials get unrelated seeds.
inline std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (trial + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Draws true clocks and link delays for one trial. The master reads reference time.
inline NetworkTruth sample_truth(const Scenario& s, std::uint64_t seed) {
  const SyncGraph& g = s.topology;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0u};
  Rng rng(seq);
  std::uniform_real_distribution<double> offset(s.offset_range.first, s.offset_range.second);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double skew_sd = std::sqrt(s.skew_variance);

  NetworkTruth t;
  for (int i = 0; i < g.node_count(); ++i) {
    ClockParams c;
    c.offset = offset(rng);
    do {
      c.skew = s.skew_mean + skew_sd * unit(rng);
    } while (c.skew <= s.skew_bounds.first || c.skew >= s.skew_bounds.second);
    if (g.node(i).role == Role::Master) c = ClockParams{};
    t.clocks.push_back(c);
  }
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto& spec = g.edge(e);
    const auto range = spec.delay_range.value_or(s.delay_range);
    const double u = std::uniform_real_distribution<double>(range.first, range.second)(rng);
    LinkModel link;
    link.delay = spec.delay.value_or(u);
    link.sigma_t = spec.sigma_t.value_or(s.sigma_t);
    link.sigma_r = spec.sigma_r.value_or(s.sigma_r);
    link.validate();
    t.links.push_back(link);
  }
  return t;
}

inline HybridOptions hybrid_options(const Scenario& s) {
  HybridOptions o;
  o.bp.max_iterations = s.max_iterations;
  o.bp.epsilon = s.epsilon;
  o.brf = s.brf;
  o.observation = s.observation;
  return o;
}

}  // namespace clocksync
