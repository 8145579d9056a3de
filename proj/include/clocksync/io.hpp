#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "clocksync/monte_carlo.hpp"

namespace clocksync {

using Json = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "0.1.0";

namespace detail {

inline void require_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

// Variances may be "inf" (flat) in files.
inline double read_variance(const Json& j, const std::string& where) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw ConfigError(where + ": expected a number or \"inf\"");
  }
  if (!j.is_number()) throw ConfigError(where + ": expected a number or \"inf\"");
  return j.get<double>();
}

inline Json write_variance(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

inline std::pair<double, double> read_pair(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(where + ": expected [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

template <class T>
T read_as(const Json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + ": wrong type");
  }
}

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + p.string() + "'");
}

inline Json parse_json(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace detail

inline ClockPrior prior_from_json(const Json& j, const std::string& where) {
  detail::require_keys(j, {"offset_mean_ns", "offset_variance_ns2", "skew_mean", "skew_variance"}, where);
  ClockPrior p;
  if (j.contains("offset_mean_ns")) p.offset_mean = detail::read_as<double>(j["offset_mean_ns"], where);
  if (j.contains("offset_variance_ns2")) p.offset_variance = detail::read_variance(j["offset_variance_ns2"], where);
  if (j.contains("skew_mean")) p.skew_mean = detail::read_as<double>(j["skew_mean"], where);
  if (j.contains("skew_variance")) p.skew_variance = detail::read_variance(j["skew_variance"], where);
  return p;
}

inline Json prior_to_json(const ClockPrior& p) {
  return Json{{"offset_mean_ns", p.offset_mean},
              {"offset_variance_ns2", detail::write_variance(p.offset_variance)},
              {"skew_mean", p.skew_mean},
              {"skew_variance", detail::write_variance(p.skew_variance)}};
}

/// Nodes list id, role and prior; edges name the responder i and the sender j.
inline SyncGraph topology_from_json(const Json& j) {
  detail::require_keys(j, {"name", "nodes", "edges"}, "topology");
  if (!j.contains("nodes") || !j["nodes"].is_array()) throw ConfigError("topology: missing 'nodes' array");
  if (!j.contains("edges") || !j["edges"].is_array()) throw ConfigError("topology: missing 'edges' array");
  SyncGraph g;
  for (const auto& n : j["nodes"]) {
    detail::require_keys(n, {"id", "role", "prior", "parent"}, "topology node");
    if (!n.contains("id")) throw ConfigError("topology node: missing 'id'");
    NodeSpec spec;
    spec.id = detail::read_as<std::string>(n["id"], "topology node id");
    const std::string where = "node '" + spec.id + "'";
    if (n.contains("role")) spec.role = parse_role(detail::read_as<std::string>(n["role"], where));
    if (n.contains("prior")) spec.prior = prior_from_json(n["prior"], where + " prior");
    if (spec.role == Role::Master) spec.prior = ClockPrior::master();
    if (n.contains("parent")) spec.parent = detail::read_as<std::string>(n["parent"], where);
    g.add_node(std::move(spec));
  }
  for (const auto& e : j["edges"]) {
    detail::require_keys(e, {"i", "j", "d_ns", "d_range_ns", "sigma_t_ns", "sigma_r_ns"}, "topology edge");
    if (!e.contains("i") || !e.contains("j")) throw ConfigError("topology edge: needs 'i' and 'j'");
    const auto i = detail::read_as<std::string>(e["i"], "edge i");
    const auto jj = detail::read_as<std::string>(e["j"], "edge j");
    const std::string where = "edge " + i + "-" + jj;
    EdgeSpec spec;
    if (e.contains("d_ns")) spec.delay = detail::read_as<double>(e["d_ns"], where);
    if (e.contains("d_range_ns")) spec.delay_range = detail::read_pair(e["d_range_ns"], where);
    if (e.contains("sigma_t_ns")) spec.sigma_t = detail::read_as<double>(e["sigma_t_ns"], where);
    if (e.contains("sigma_r_ns")) spec.sigma_r = detail::read_as<double>(e["sigma_r_ns"], where);
    g.add_edge(jj, i, spec, jj);
  }
  for (const auto& n : g.nodes()) {
    if (n.parent && !g.has_node(*n.parent)) throw ConfigError("node '" + n.id + "': unknown parent '" + *n.parent + "'");
  }
  return g;
}

inline Json topology_to_json(const SyncGraph& g) {
  Json nodes = Json::array();
  for (const auto& n : g.nodes()) {
    Json o{{"id", n.id}, {"role", role_name(n.role)}};
    if (n.role != Role::Master) o["prior"] = prior_to_json(n.prior);
    if (n.parent) o["parent"] = *n.parent;
    nodes.push_back(o);
  }
  Json edges = Json::array();
  for (const auto& e : g.edges()) {
    Json o{{"i", g.node(e.receiver()).id}, {"j", g.node(e.sender).id}};
    if (e.delay) o["d_ns"] = *e.delay;
    if (e.delay_range) o["d_range_ns"] = {e.delay_range->first, e.delay_range->second};
    if (e.sigma_t) o["sigma_t_ns"] = *e.sigma_t;
    if (e.sigma_r) o["sigma_r_ns"] = *e.sigma_r;
    edges.push_back(o);
  }
  return Json{{"nodes", nodes}, {"edges", edges}};
}

inline SyncGraph load_topology(const std::filesystem::path& p) {
  return topology_from_json(detail::parse_json(detail::read_file(p), p.string()));
}

inline const char* prediction_name(PredictionModel m) {
  return m == PredictionModel::Literal ? "literal" : "state_coupled";
}

inline PredictionModel parse_prediction(const std::string& s) {
  if (s == "state_coupled") return PredictionModel::StateCoupled;
  if (s == "literal") return PredictionModel::Literal;
  throw ConfigError("unknown BRF prediction model '" + s + "'");
}

/// Fields absent from the file keep their defaults. `topology` is inline; `topology_file`
/// is resolved against `base_dir`. Neither means the built-in default mesh.
inline Scenario scenario_from_json(const Json& j, const std::filesystem::path& base_dir = {}) {
  detail::require_keys(j,
                       {"name", "topology", "topology_file", "rounds", "t0_ns", "delta_ns", "turnaround_ns",
                        "max_iterations", "epsilon", "trials", "seed", "offset_range_ns", "skew_mean",
                        "skew_variance", "skew_bounds", "delay_range_ns", "sigma_t_ns", "sigma_r_ns",
                        "evaluated_nodes", "brf", "zero_noise_variance_ns2", "workers"},
                       "scenario");
  Scenario s;
  auto num = [&](const char* key, auto& field) {
    if (j.contains(key)) field = detail::read_as<std::decay_t<decltype(field)>>(j[key], std::string("scenario.") + key);
  };
  num("name", s.name);
  if (j.contains("topology") && j.contains("topology_file"))
    throw ConfigError("scenario: give either 'topology' or 'topology_file', not both");
  if (j.contains("topology")) {
    s.topology = topology_from_json(j["topology"]);
  } else if (j.contains("topology_file")) {
    s.topology = load_topology(base_dir / detail::read_as<std::string>(j["topology_file"], "scenario.topology_file"));
  } else {
    s.topology = default_topology();
  }
  num("rounds", s.schedule.rounds);
  num("t0_ns", s.schedule.t0);
  num("delta_ns", s.schedule.delta);
  num("turnaround_ns", s.schedule.turnaround);
  num("max_iterations", s.max_iterations);
  num("epsilon", s.epsilon);
  num("trials", s.trials);
  num("seed", s.seed);
  if (j.contains("offset_range_ns")) s.offset_range = detail::read_pair(j["offset_range_ns"], "scenario.offset_range_ns");
  num("skew_mean", s.skew_mean);
  num("skew_variance", s.skew_variance);
  if (j.contains("skew_bounds")) s.skew_bounds = detail::read_pair(j["skew_bounds"], "scenario.skew_bounds");
  if (j.contains("delay_range_ns")) s.delay_range = detail::read_pair(j["delay_range_ns"], "scenario.delay_range_ns");
  num("sigma_t_ns", s.sigma_t);
  num("sigma_r_ns", s.sigma_r);
  num("evaluated_nodes", s.evaluated_nodes);
  if (j.contains("brf")) {
    const Json& b = j["brf"];
    detail::require_keys(b, {"prediction", "process_noise"}, "scenario.brf");
    if (b.contains("prediction")) s.brf.model = parse_prediction(detail::read_as<std::string>(b["prediction"], "brf.prediction"));
    if (b.contains("process_noise")) {
      const auto q = detail::read_as<std::vector<std::vector<double>>>(b["process_noise"], "brf.process_noise");
      if (q.size() != 2 || q[0].size() != 2 || q[1].size() != 2) throw ConfigError("brf.process_noise: expected 2x2");
      s.brf.process_noise << q[0][0], q[0][1], q[1][0], q[1][1];
    }
  }
  num("zero_noise_variance_ns2", s.observation.zero_noise_variance);
  num("workers", s.workers);
  s.validate();
  return s;
}

inline Json scenario_to_json(const Scenario& s) {
  const Mat2& q = s.brf.process_noise;
  return Json{{"name", s.name},
              {"topology", topology_to_json(s.topology)},
              {"rounds", s.schedule.rounds},
              {"t0_ns", s.schedule.t0},
              {"delta_ns", s.schedule.delta},
              {"turnaround_ns", s.schedule.turnaround},
              {"max_iterations", s.max_iterations},
              {"epsilon", s.epsilon},
              {"trials", s.trials},
              {"seed", s.seed},
              {"offset_range_ns", {s.offset_range.first, s.offset_range.second}},
              {"skew_mean", s.skew_mean},
              {"skew_variance", s.skew_variance},
              {"skew_bounds", {s.skew_bounds.first, s.skew_bounds.second}},
              {"delay_range_ns", {s.delay_range.first, s.delay_range.second}},
              {"sigma_t_ns", s.sigma_t},
              {"sigma_r_ns", s.sigma_r},
              {"evaluated_nodes", s.evaluated_nodes},
              {"brf",
               {{"prediction", prediction_name(s.brf.model)},
                {"process_noise", {{q(0, 0), q(0, 1)}, {q(1, 0), q(1, 1)}}}}},
              {"zero_noise_variance_ns2", s.observation.zero_noise_variance},
              {"workers", s.workers}};
}

/// A scenario file, or a run manifest (whose "scenario" member is used).
inline Scenario load_scenario(const std::filesystem::path& p) {
  const Json j = detail::parse_json(detail::read_file(p), p.string());
  try {
    if (j.is_object() && j.contains("scenario") && j.contains("tool")) return scenario_from_json(j["scenario"], p.parent_path());
    return scenario_from_json(j, p.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

inline std::string rmse_csv(const std::vector<RmseRow>& rows) {
  std::string out = "algorithm,node_set,iteration,offset_rmse_ns,skew_rmse_ppm,trials\n";
  for (const auto& r : rows) {
    out += r.algorithm + "," + r.node_set + "," + std::to_string(r.iteration) + "," + detail::fmt(r.offset_rmse_ns) +
           "," + detail::fmt(r.skew_rmse_ppm) + "," + std::to_string(r.trials) + "\n";
  }
  return out;
}

inline Json run_manifest(const Scenario& s, Mode mode, const MonteCarloResult& res) {
  Json stops = Json::object();
  if (!res.stop_iterations.empty()) {
    std::map<int, int> hist;
    for (int l : res.stop_iterations) ++hist[l];
    for (const auto& [l, c] : hist) stops[std::to_string(l)] = c;
  }
  Json m{{"tool", "clocksync"},
         {"version", kToolVersion},
         {"mode", mode_name(mode)},
         {"seed", s.seed},
         {"trials", s.trials},
         {"first_trial", res.first_trial},
         {"scenario", scenario_to_json(s)}};
  if (!res.stop_iterations.empty()) m["stop_iteration_histogram"] = stops;
  if (!res.warnings.empty()) m["warnings"] = res.warnings;
  return m;
}

/// Writes rmse.csv and manifest.json into `dir`.
inline void emit_results(const Scenario& s, Mode mode, const MonteCarloResult& res, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create '" + dir.string() + "': " + ec.message());
  detail::write_file(dir / "rmse.csv", rmse_csv(res.rows()));
  detail::write_file(dir / "manifest.json", run_manifest(s, mode, res).dump(2) + "\n");
}

/// Stamps of one link as k,c_j_t1,c_i_t2,c_i_t3,c_j_t4.
inline std::string records_csv(const std::vector<TimestampRecord>& recs) {
  std::ostringstream out;
  out << "k,c_j_t1,c_i_t2,c_i_t3,c_j_t4\n";
  char buf[160];
  for (const auto& r : recs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.round, r.c_j_t1, r.c_i_t2, r.c_i_t3, r.c_j_t4);
    out << buf;
  }
  return out.str();
}

/// All links of a trial, with the link named by its responder i and sender j.
inline std::string trial_records_csv(const SyncGraph& g, const NetworkRecords& rec) {
  std::ostringstream out;
  out << "i,j,k,c_j_t1,c_i_t2,c_i_t3,c_j_t4\n";
  char buf[200];
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto& spec = g.edge(e);
    for (const auto& r : rec.per_edge[static_cast<std::size_t>(e)]) {
      std::snprintf(buf, sizeof buf, "%s,%s,%d,%.17g,%.17g,%.17g,%.17g\n", g.node(spec.receiver()).id.c_str(),
                    g.node(spec.sender).id.c_str(), r.round, r.c_j_t1, r.c_i_t2, r.c_i_t3, r.c_j_t4);
      out << buf;
    }
  }
  return out.str();
}

/// Per-node estimate trajectory of one trial on a shared timeline: steps 1..K are stamp
/// rounds (BRF nodes update, BP nodes still hold their prior), step K+l is BP iteration l.
inline std::string estimates_csv(const Scenario& s, const TrialRun& r) {
  const SyncGraph& g = s.topology;
  const int k_rounds = s.schedule.rounds;
  std::ostringstream out;
  out << "node,role,step,k,l,skew,offset_ns,relative_skew,relative_offset_ns,true_skew,true_offset_ns\n";
  auto cell = [](const std::optional<ClockEstimate>& e, bool skew) {
    return e ? detail::fmt(skew ? e->skew : e->offset) : std::string();
  };
  const std::vector<BrfTrack>& tracks = r.hybrid ? r.hybrid->brf : r.pairwise;
  const int l_stop = r.hybrid ? r.hybrid->bp.stop_iteration : 0;

  for (int n = 0; n < g.node_count(); ++n) {
    const auto truth = r.truth.clocks[static_cast<std::size_t>(n)];
    const Role role = r.plan.roles[static_cast<std::size_t>(n)];
    const BrfTrack* track = nullptr;
    for (const auto& t : tracks) {
      if (t.node == n) track = &t;
    }
    for (int step = 0; step <= k_rounds + l_stop; ++step) {
      const int k = std::min(step, k_rounds);
      const int l = std::max(0, step - k_rounds);
      std::optional<ClockEstimate> abs, rel;
      if (track) {
        rel = track->relative[static_cast<std::size_t>(k)];
        if (r.hybrid) abs = track->absolute[static_cast<std::size_t>(l)];
      } else if (r.hybrid) {
        abs = r.hybrid->bp.estimates[static_cast<std::size_t>(l)][static_cast<std::size_t>(n)];
      } else {
        continue;
      }
      out << g.node(n).id << "," << role_name(role) << "," << step << "," << k << "," << l << "," << cell(abs, true)
          << "," << cell(abs, false) << "," << cell(rel, true) << "," << cell(rel, false) << ","
          << detail::fmt(truth.skew) << "," << detail::fmt(truth.offset) << "\n";
    }
  }
  return out.str();
}

/// Rows of an RMSE CSV keyed by (node_set, iteration).
struct CsvTable {
  std::set<std::string> algorithms;
  std::map<std::pair<std::string, int>, std::pair<double, double>> rows;
};

inline CsvTable read_rmse_csv(const std::filesystem::path& p) {
  std::istringstream in(detail::read_file(p));
  std::string line;
  if (!std::getline(in, line) || line != "algorithm,node_set,iteration,offset_rmse_ns,skew_rmse_ppm,trials")
    throw ConfigError(p.string() + ": not an RMSE CSV");
  CsvTable t;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) f.push_back(tok);
    if (f.size() != 6) throw ConfigError(p.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    std::pair<std::string, int> key;
    std::pair<double, double> val;
    try {
      key = {f[1], std::stoi(f[2])};
      val = {std::stod(f[3]), std::stod(f[4])};
    } catch (const std::logic_error&) {
      throw ConfigError(p.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    t.algorithms.insert(f[0]);
    if (!t.rows.emplace(key, val).second)
      throw ConfigError(p.string() + ":" + std::to_string(lineno) + ": duplicate node_set/iteration row");
  }
  return t;
}

}  // namespace clocksync
