// clocksync: Monte-Carlo driver for BP, hybrid and pairwise BRF clock synchronization.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "clocksync/clocksync.hpp"

namespace fs = std::filesystem;
using namespace clocksync;

namespace {

struct RunArgs {
  std::string mode;
  std::string scenario;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out = "out";
};

void add_run_options(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--mode", a.mode, "bp | hybrid | brf-pairwise")
      ->check(CLI::IsMember({"bp", "hybrid", "brf-pairwise"}));
  cmd->add_option("--scenario", a.scenario, "scenario JSON or run manifest (default: built-in baseline scenario)");
  cmd->add_option("--trials", a.trials, "Monte-Carlo trials")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", a.seed, "master seed");
  cmd->add_option("--workers", a.workers, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", a.out, "output directory");
}

Scenario resolve_scenario(const RunArgs& a) {
  Scenario s = a.scenario.empty() ? default_scenario() : load_scenario(a.scenario);
  if (a.trials) s.trials = *a.trials;
  if (a.seed) s.seed = *a.seed;
  if (a.workers) s.workers = *a.workers;
  s.validate();
  return s;
}

// Mode from the flag, else from a manifest, else bp.
Mode resolve_mode(const RunArgs& a) {
  if (!a.mode.empty()) return parse_mode(a.mode);
  if (!a.scenario.empty()) {
    const Json j = detail::parse_json(detail::read_file(a.scenario), a.scenario);
    if (j.is_object() && j.contains("tool") && j.contains("mode")) return parse_mode(j["mode"].get<std::string>());
  }
  return Mode::Bp;
}

void print_summary(const MonteCarloResult& res) {
  for (const auto& r : res.rows()) {
    if (r.iteration != 0 && r.iteration != 4 &&
        r.iteration != static_cast<int>(res.table.at(r.node_set).size()) - 1)
      continue;
    std::printf("%-12s %-12s %3d  offset %9.4f ns  skew %9.5f ppm\n", r.algorithm.c_str(), r.node_set.c_str(),
                r.iteration, r.offset_rmse_ns, r.skew_rmse_ppm);
  }
  if (!res.stop_iterations.empty()) {
    int worst = 0;
    for (int l : res.stop_iterations) worst = std::max(worst, l);
    std::printf("worst BP stop iteration over %d trials: %d\n", res.trials, worst);
  }
  for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

int cmd_simulate(const RunArgs& a, std::optional<int> dump_trial) {
  const Scenario s = resolve_scenario(a);
  const Mode mode = resolve_mode(a);
  const MonteCarloResult res = run_monte_carlo(s, mode);
  emit_results(s, mode, res, a.out);
  if (dump_trial) {
    if (*dump_trial < 0 || *dump_trial >= s.trials) throw ConfigError("--dump-trial outside [0, trials)");
    const TrialRun r = run_trial(s, mode, *dump_trial);
    detail::write_file(fs::path(a.out) / "records.csv", trial_records_csv(s.topology, r.records));
    detail::write_file(fs::path(a.out) / "estimates.csv", estimates_csv(s, r));
  }
  print_summary(res);
  std::printf("wrote %s\n", (fs::path(a.out) / "rmse.csv").string().c_str());
  return 0;
}

std::vector<std::string> split_values(const std::string& list) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : list) {
    if (c == '[' || c == '{') ++depth;
    if (c == ']' || c == '}') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

int cmd_sweep(const RunArgs& a, const std::string& field, const std::string& values) {
  const Scenario base = resolve_scenario(a);
  const Mode mode = resolve_mode(a);
  const auto list = split_values(values);
  if (list.empty()) throw ConfigError("--values is empty");

  std::string combined = "field,value,algorithm,node_set,iteration,offset_rmse_ns,skew_rmse_ppm,trials\n";
  for (const auto& v : list) {
    Json j = scenario_to_json(base);
    if (!j.contains(field)) throw ConfigError("unknown scenario field '" + field + "'");
    Json parsed;
    try {
      parsed = Json::parse(v);
    } catch (const nlohmann::json::parse_error&) {
      parsed = v;
    }
    j[field] = parsed;
    const Scenario s = scenario_from_json(j);
    const MonteCarloResult res = run_monte_carlo(s, mode);
    const fs::path dir = fs::path(a.out) / (field + "=" + v);
    emit_results(s, mode, res, dir);
    for (const auto& r : res.rows()) {
      combined += field + ",\"" + v + "\"," + r.algorithm + "," + r.node_set + "," + std::to_string(r.iteration) +
                  "," + detail::fmt(r.offset_rmse_ns) + "," + detail::fmt(r.skew_rmse_ppm) + "," +
                  std::to_string(r.trials) + "\n";
    }
    std::printf("%s=%s done\n", field.c_str(), v.c_str());
  }
  detail::write_file(fs::path(a.out) / "sweep.csv", combined);
  std::printf("wrote %s\n", (fs::path(a.out) / "sweep.csv").string().c_str());
  return 0;
}

int cmd_compare(const std::string& lhs, const std::string& rhs, std::optional<double> tolerance) {
  const CsvTable a = read_rmse_csv(lhs);
  const CsvTable b = read_rmse_csv(rhs);
  std::map<int, std::pair<double, double>> per_iter;
  int missing = 0;
  for (const auto& [key, va] : a.rows) {
    auto it = b.rows.find(key);
    if (it == b.rows.end()) {
      std::printf("only in %s: %s,%d\n", lhs.c_str(), key.first.c_str(), key.second);
      ++missing;
      continue;
    }
    auto& d = per_iter[key.second];
    d.first = std::max(d.first, std::abs(va.first - it->second.first));
    d.second = std::max(d.second, std::abs(va.second - it->second.second));
  }
  for (const auto& [key, vb] : b.rows) {
    if (!a.rows.count(key)) {
      std::printf("only in %s: %s,%d\n", rhs.c_str(), key.first.c_str(), key.second);
      ++missing;
    }
  }
  double worst = 0.0;
  std::printf("iteration,max_offset_delta_ns,max_skew_delta_ppm\n");
  for (const auto& [l, d] : per_iter) {
    std::printf("%d,%s,%s\n", l, detail::fmt(d.first).c_str(), detail::fmt(d.second).c_str());
    worst = std::max({worst, d.first, d.second});
  }
  if (missing > 0) std::printf("%d rows present in only one file\n", missing);
  if (tolerance && !(worst <= *tolerance)) {
    std::printf("max delta %s exceeds tolerance %s\n", detail::fmt(worst).c_str(), detail::fmt(*tolerance).c_str());
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clocksync: BP / hybrid BRF clock synchronization Monte-Carlo"};
  app.require_subcommand(1);

  RunArgs sim_args;
  std::optional<int> dump_trial;
  auto* sim = app.add_subcommand("simulate", "run one Monte-Carlo experiment");
  add_run_options(sim, sim_args);
  sim->add_option("--dump-trial", dump_trial, "also write records.csv and estimates.csv for this trial index");

  RunArgs sweep_args;
  std::string field, values;
  auto* sweep = app.add_subcommand("sweep", "vary one scenario field over a list of values");
  add_run_options(sweep, sweep_args);
  sweep->add_option("--field", field, "scenario field name, e.g. sigma_t_ns")->required();
  sweep->add_option("--values", values, "comma-separated JSON values, e.g. 2,4,8")->required();

  std::string lhs, rhs;
  std::optional<double> tolerance;
  auto* compare = app.add_subcommand("compare", "report max per-iteration RMSE deltas between two CSVs");
  compare->add_option("lhs", lhs)->required()->check(CLI::ExistingFile);
  compare->add_option("rhs", rhs)->required()->check(CLI::ExistingFile);
  compare->add_option("--tolerance", tolerance, "exit nonzero if any delta exceeds this");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_args, dump_trial);
    if (sweep->parsed()) return cmd_sweep(sweep_args, field, values);
    if (compare->parsed()) return cmd_compare(lhs, rhs, tolerance);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
