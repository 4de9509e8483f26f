#pragma once

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdcsync/config.hpp"
#include "rdcsync/floodsim.hpp"
#include "rdcsync/metrics.hpp"
#include "rdcsync/netsim.hpp"
#include "rdcsync/topology.hpp"

namespace rdcsync {

struct ElectionOutcome {
  std::optional<SimTime> first_new_round;  // first accepted round of a later epoch
  std::optional<SimTime> winner_round;     // first accepted round of the final root
  NodeId winner = kNoNode;
};

struct TrialResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;

  // topology facts
  std::size_t nodes = 0;
  int diameter = 0;
  int graph_diameter = 0;
  int topology_attempts = 1;

  // sync mode
  ErrorSeries series;
  SteadyState steady;
  double threshold_us = 0.0;
  std::optional<int> convergence_periods;
  std::optional<int> reconvergence_periods;  // after a root kill
  std::vector<HopError> hop_curve;
  std::optional<GrowthFit> growth;
  PathStats flood_paths;
  bool trees_ok = true;
  std::optional<SimTime> first_round;
  RunStats run;
  std::optional<double> mean_d_fixed_hat;
  ElectionOutcome election;
  std::vector<TraceEvent> trace;
  std::vector<Snapshot> probes;

  // paths mode: "<flooding>@<plr>" -> stats
  std::map<std::string, PathStats> path_study;
};

inline Topology build_topology(const ExperimentConfig& cfg, std::uint64_t seed) {
  return generate_topology(cfg.topology, seed);
}

inline std::string path_key(const std::string& flooding, double plr) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s@%g", flooding.c_str(), plr);
  return buf;
}

inline TrialResult run_paths_trial(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrialResult r;
  r.seed = seed;
  const Topology topo = build_topology(cfg, seed);
  r.nodes = topo.node_count();
  r.diameter = topo.diameter;
  r.graph_diameter = topo.graph_diameter;
  r.topology_attempts = topo.attempts;
  for (const auto& f : cfg.paths.flooding)
    for (double plr : cfg.paths.plr) {
      FloodSimConfig fc;
      fc.flooding = f == "slow" ? Flooding::slow : Flooding::rapid;
      fc.plr = plr;
      fc.packets_per_broadcast = cfg.paths.packets_per_broadcast;
      fc.link_delay_us = round_half_away(cfg.delay.d_fixed_us);
      // same seed for every cell: waits are paired across loss rates
      FloodSim sim(topo, fc, seed);
      r.path_study[path_key(f, plr)] = sim.run(cfg.paths.rounds);
    }
  r.ok = true;
  return r;
}

inline TrialResult run_sync_trial(const ExperimentConfig& cfg, std::uint64_t seed, bool keep_trace) {
  TrialResult r;
  r.seed = seed;
  const Topology topo = build_topology(cfg, seed);
  r.nodes = topo.node_count();
  r.diameter = topo.diameter;
  r.graph_diameter = topo.graph_diameter;
  r.topology_attempts = topo.attempts;

  Simulator sim(cfg.sim_config(topo, keep_trace), seed);
  const SimTime horizon = cfg.horizon();
  const SimTime steady_from = steady_state_start(horizon);
  HopErrorAccumulator hops(topo.hop_distance, topo.reference);
  std::vector<Snapshot> kept;
  std::vector<std::pair<SimTime, SeriesRow>> raw;
  sim.on_probe([&](const Snapshot& s) {
    const auto le = local_error(s, topo);
    const auto ge = global_error(s);
    raw.push_back({s.t, SeriesRow{s.t, 0, le.max, le.mean, ge.max, ge.mean}});
    if (s.t >= steady_from) hops.add(s);
    if (keep_trace) kept.push_back(s);
  });
  r.run = sim.run(horizon);
  r.first_round = sim.first_transmission();

  const SimTime period = cfg.sync_period();
  const SimTime origin = r.first_round.value_or(0);
  for (auto& [t, row] : raw) {
    row.period_index = period_index(t, origin, period);
    r.series.push_back(row);
  }
  r.steady = steady_state(r.series, steady_from);
  r.threshold_us = cfg.convergence_factor * r.steady.mean_max_global;
  r.convergence_periods = convergence_time(r.series, r.threshold_us);
  if (cfg.kill_root_at_s) {
    const SimTime kill = seconds(*cfg.kill_root_at_s);
    std::optional<SimTime> last_bad;
    for (const auto& row : r.series)
      if (row.t >= kill && row.max_global >= r.threshold_us) last_bad = row.t;
    r.reconvergence_periods = last_bad ? static_cast<int>((*last_bad - kill) / period) + 1 : 0;
    if (!r.series.empty() && r.series.back().max_global >= r.threshold_us) r.reconvergence_periods.reset();

    const auto& acc = sim.accepts();
    std::uint64_t final_round = 0;
    for (const auto& a : acc) final_round = std::max(final_round, a.round);
    const auto final_epoch = round_id::epoch(final_round);
    const auto final_rank = round_id::rank_of(final_round);
    for (const auto& a : acc) {
      if (a.t < kill || round_id::epoch(a.round) == 0) continue;
      if (!r.election.first_new_round) r.election.first_new_round = a.t;
      if (round_id::epoch(a.round) == final_epoch && round_id::rank_of(a.round) == final_rank) {
        r.election.winner_round = a.t;
        break;
      }
    }
    if (r.election.winner_round) r.election.winner = final_rank & 0xFFFF;
  }
  r.hop_curve = hops.result();
  try {
    r.growth = fit_hop_growth(r.hop_curve);
  } catch (const std::exception&) {
    r.growth.reset();
  }
  std::size_t running = 0;
  for (const auto& nd : sim.nodes())
    if (nd.booted() && nd.alive()) ++running;
  r.flood_paths = flood_path_stats(sim.accepts(), running > 0 ? running - 1 : 0);
  r.trees_ok = rounds_form_trees(sim.accepts());

  double sum = 0.0;
  int n = 0;
  for (auto& nd : sim.nodes()) {
    if (nd.father() == kNoNode) continue;
    if (auto d = nd.d_fixed_estimate(nd.father())) {
      sum += *d;
      ++n;
    }
  }
  if (n) r.mean_d_fixed_hat = sum / n;
  if (keep_trace) {
    r.trace = sim.trace_log();
    r.probes = std::move(kept);
  }
  r.ok = true;
  return r;
}

inline TrialResult run_trial(const ExperimentConfig& cfg, std::uint64_t seed, bool keep_trace = false) {
  try {
    return cfg.mode == ExperimentMode::paths ? run_paths_trial(cfg, seed) : run_sync_trial(cfg, seed, keep_trace);
  } catch (const std::exception& e) {
    TrialResult r;
    r.seed = seed;
    r.ok = false;
    r.error = e.what();
    return r;
  }
}

inline nlohmann::ordered_json path_stats_json(const PathStats& p) {
  nlohmann::ordered_json j;
  j["rounds"] = p.rounds;
  j["incomplete"] = p.incomplete;
  j["mode"] = p.mode();
  j["min"] = p.min_length();
  j["max"] = p.max_length();
  nlohmann::ordered_json pmf = nlohmann::ordered_json::array();
  for (const auto& [len, k] : p.counts) pmf.push_back({{"length", len}, {"probability", p.probability(len)}});
  j["pmf"] = pmf;
  return j;
}

template <typename T>
nlohmann::ordered_json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json summary_json(const ExperimentConfig& cfg, const TrialResult& r) {
  nlohmann::ordered_json j;
  j["name"] = cfg.name;
  j["seed"] = r.seed;
  j["ok"] = r.ok;
  if (!r.ok) {
    j["error"] = r.error;
    return j;
  }
  j["mode"] = cfg.mode == ExperimentMode::sync ? "sync" : "paths";
  j["protocol"] = std::string(to_string(cfg.protocol));
  j["topology"] = {{"kind", to_string(cfg.topology.kind)},
                   {"nodes", r.nodes},
                   {"diameter", r.diameter},
                   {"graph_diameter", r.graph_diameter},
                   {"attempts", r.topology_attempts}};
  if (cfg.mode == ExperimentMode::paths) {
    nlohmann::ordered_json cells;
    for (const auto& [k, p] : r.path_study) cells[k] = path_stats_json(p);
    j["paths"] = cells;
    return j;
  }
  j["horizon_s"] = cfg.horizon_s;
  j["probes"] = r.series.size();
  j["events"] = r.run.events;
  j["starved"] = r.run.starved;
  j["first_round_us"] = opt_json(r.first_round);
  j["steady_state"] = {{"from_s", to_seconds(steady_state_start(cfg.horizon()))},
                       {"probes", r.steady.probes},
                       {"mean_max_local_us", r.steady.mean_max_local},
                       {"mean_mean_local_us", r.steady.mean_mean_local},
                       {"mean_max_global_us", r.steady.mean_max_global},
                       {"std_max_global_us", r.steady.std_max_global},
                       {"mean_mean_global_us", r.steady.mean_mean_global}};
  j["convergence"] = {{"threshold_us", r.threshold_us},
                      {"periods", opt_json(r.convergence_periods)},
                      {"converged", r.convergence_periods.has_value()}};
  if (cfg.kill_root_at_s) {
    j["election"] = {{"kill_at_s", *cfg.kill_root_at_s},
                     {"first_new_round_s", r.election.first_new_round
                                               ? nlohmann::ordered_json(to_seconds(*r.election.first_new_round))
                                               : nlohmann::ordered_json(nullptr)},
                     {"winner_round_s", r.election.winner_round
                                            ? nlohmann::ordered_json(to_seconds(*r.election.winner_round))
                                            : nlohmann::ordered_json(nullptr)},
                     {"winner", r.election.winner == kNoNode ? nlohmann::ordered_json(nullptr)
                                                             : nlohmann::ordered_json(r.election.winner)},
                     {"reconvergence_periods", opt_json(r.reconvergence_periods)}};
  }
  nlohmann::ordered_json hops = nlohmann::ordered_json::array();
  for (const auto& h : r.hop_curve) hops.push_back({{"hop", h.hop}, {"mean_us", h.mean}, {"std_us", h.std}});
  j["error_vs_hop"] = hops;
  if (r.growth)
    j["hop_growth"] = {{"sqrt", {{"a", r.growth->sqrt_a}, {"b", r.growth->sqrt_b}, {"aic", r.growth->aic_sqrt}}},
                       {"linear", {{"a", r.growth->lin_a}, {"b", r.growth->lin_b}, {"aic", r.growth->aic_linear}}},
                       {"sqrt_preferred", r.growth->sqrt_preferred()}};
  j["mean_d_fixed_hat_us"] = opt_json(r.mean_d_fixed_hat);
  j["flood_paths"] = path_stats_json(r.flood_paths);
  j["rounds_form_trees"] = r.trees_ok;
  return j;
}

inline std::string fmt_num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline void write_series_csv(std::ostream& os, const ErrorSeries& s) {
  os << "t_us,period_index,max_local,mean_local,max_global,mean_global\n";
  for (const auto& r : s)
    os << r.t << ',' << r.period_index << ',' << fmt_num(r.max_local) << ',' << fmt_num(r.mean_local) << ','
       << fmt_num(r.max_global) << ',' << fmt_num(r.mean_global) << '\n';
}

inline void write_pathdist_csv(std::ostream& os, const PathStats& p, const std::string& cell = {}) {
  if (cell.empty())
    os << "length,probability\n";
  for (const auto& [len, k] : p.counts) {
    if (!cell.empty()) os << cell << ',';
    os << len << ',' << fmt_num(p.probability(len)) << '\n';
  }
}

inline void write_probes_csv(std::ostream& os, const std::vector<Snapshot>& snaps) {
  os << "true_time_us,node_id,logical_us\n";
  for (const auto& s : snaps)
    for (NodeId i = 0; i < s.logical.size(); ++i)
      if (s.present(i)) os << s.t << ',' << i << ',' << fmt_num(s.logical[i]) << '\n';
}

/// Writes out/<name>/<seed>/{summary.json, series.csv, pathdist.csv[, trace.ndjson, probes.csv]}.
inline void write_trial(const std::filesystem::path& dir, const ExperimentConfig& cfg, const TrialResult& r,
                        bool trace) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "summary.json", std::ios::binary);
    f << summary_json(cfg, r).dump(2) << '\n';
  }
  if (!r.ok) return;
  if (cfg.mode == ExperimentMode::paths) {
    std::ofstream f(dir / "pathdist.csv", std::ios::binary);
    f << "cell,length,probability\n";
    for (const auto& [k, p] : r.path_study) write_pathdist_csv(f, p, k);
    return;
  }
  {
    std::ofstream f(dir / "series.csv", std::ios::binary);
    write_series_csv(f, r.series);
  }
  {
    std::ofstream f(dir / "pathdist.csv", std::ios::binary);
    write_pathdist_csv(f, r.flood_paths);
  }
  if (trace) {
    std::ofstream t(dir / "trace.ndjson", std::ios::binary);
    write_trace_ndjson(t, r.trace);
    std::ofstream p(dir / "probes.csv", std::ios::binary);
    write_probes_csv(p, r.probes);
  }
}

inline unsigned worker_count() {
  if (const char* env = std::getenv("RDCSYNC_WORKERS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs f(i) for i in [0, n) on a small pool; results land in index order.
template <typename F>
void parallel_for(std::size_t n, F&& f, unsigned workers = worker_count()) {
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  for (auto& t : pool) t.join();
}

inline std::vector<TrialResult> run_trials(const ExperimentConfig& cfg, std::uint64_t seed, int trials,
                                           bool keep_trace = false) {
  std::vector<TrialResult> out(static_cast<std::size_t>(trials));
  parallel_for(out.size(), [&](std::size_t i) { out[i] = run_trial(cfg, seed + i, keep_trace); });
  return out;
}

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitConfig = 2, kExitTrialFailed = 3 };

inline nlohmann::ordered_json aggregate_json(const ExperimentConfig& cfg, const std::vector<TrialResult>& rs) {
  nlohmann::ordered_json j;
  j["name"] = cfg.name;
  j["protocol"] = std::string(to_string(cfg.protocol));
  j["trials"] = rs.size();
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  std::vector<double> mg, conv;
  std::size_t failed = 0;
  for (const auto& r : rs) {
    nlohmann::ordered_json t{{"seed", r.seed}, {"ok", r.ok}};
    if (!r.ok) {
      ++failed;
      t["error"] = r.error;
    } else if (cfg.mode == ExperimentMode::sync) {
      t["mean_max_global_us"] = r.steady.mean_max_global;
      t["convergence_periods"] = opt_json(r.convergence_periods);
      mg.push_back(r.steady.mean_max_global);
      if (r.convergence_periods) conv.push_back(*r.convergence_periods);
    } else {
      nlohmann::ordered_json modes;
      for (const auto& [k, p] : r.path_study) modes[k] = p.mode();
      t["path_modes"] = modes;
    }
    list.push_back(t);
  }
  j["failed"] = failed;
  j["per_trial"] = list;
  if (!mg.empty()) {
    j["mean_max_global_us"] = stats::mean(mg);
    j["std_max_global_us"] = stats::stddev(mg);
  }
  if (!conv.empty()) j["mean_convergence_periods"] = stats::mean(conv);
  return j;
}

/// Runs the trials and writes per-trial and aggregate outputs.
inline int run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_root, std::uint64_t seed,
                          int trials, bool trace) {
  const auto results = run_trials(cfg, seed, trials, trace);
  const auto base = out_root / cfg.name;
  bool failed = false;
  for (const auto& r : results) {
    write_trial(base / std::to_string(r.seed), cfg, r, trace);
    failed = failed || !r.ok;
  }
  std::filesystem::create_directories(base);
  std::ofstream f(base / "aggregate.json", std::ios::binary);
  f << aggregate_json(cfg, results).dump(2) << '\n';
  return failed ? kExitTrialFailed : kExitOk;
}

struct SweepCell {
  std::string protocol;
  double period_s = 0.0;
  double mean_max_global = 0.0;
  double std_max_global = 0.0;
  std::size_t failed = 0;
};

/// One experiment per (protocol, period) cell; the std is taken over all
/// steady-state probes of all trials in the cell.
inline std::vector<SweepCell> sweep(const ExperimentConfig& base, const std::vector<double>& periods_s,
                                    const std::vector<std::string>& protocols, std::uint64_t seed, int trials) {
  if (periods_s.empty()) throw ConfigError(0, "sweep_periods_s: must not be empty");
  std::vector<SweepCell> cells;
  for (const auto& proto : protocols)
    for (double p : periods_s) {
      ExperimentConfig cfg = base;
      cfg.protocol = protocol_from_string(proto);
      cfg.sync_period_s = p;
      cfg.mode = ExperimentMode::sync;
      const auto rs = run_trials(cfg, seed, trials);
      SweepCell c{proto, p, 0, 0, 0};
      std::vector<double> pooled;
      for (const auto& r : rs) {
        if (!r.ok) {
          ++c.failed;
          continue;
        }
        for (const auto& row : r.series)
          if (row.t >= steady_state_start(cfg.horizon())) pooled.push_back(row.max_global);
      }
      c.mean_max_global = stats::mean(pooled);
      c.std_max_global = stats::stddev(pooled);
      cells.push_back(c);
    }
  return cells;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepCell>& cells) {
  os << "protocol,period_s,mean_max_global,std_max_global\n";
  for (const auto& c : cells)
    os << c.protocol << ',' << fmt_num(c.period_s) << ',' << fmt_num(c.mean_max_global) << ','
       << fmt_num(c.std_max_global) << '\n';
}

}  // namespace rdcsync
