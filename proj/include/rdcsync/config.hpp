#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdcsync/baselines.hpp"
#include "rdcsync/netsim.hpp"
#include "rdcsync/protocol.hpp"
#include "rdcsync/topology.hpp"

namespace rdcsync {

enum class ExperimentMode { sync, paths };

/// Flooding-path study on the topology (no clocks).
struct PathStudy {
  std::uint64_t rounds = 10000;
  std::vector<std::string> flooding = {"rapid", "slow"};
  std::vector<double> plr = {0.0, 0.1};
  int packets_per_broadcast = 1;

  bool operator==(const PathStudy&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ExperimentMode mode = ExperimentMode::sync;
  ProtocolKind protocol = ProtocolKind::rdc_rmts;
  TopologySpec topology{TopologyKind::line, 25};
  double sync_period_s = 30.0;
  double probe_interval_s = 10.0;
  int N = 5;
  int W = 2;
  int w = 2;
  double d_fixed_prior_us = 3.0;
  DelayDecomposition delay;
  double plr = 0.0;
  DriftConfig drift;
  double horizon_s = 10800.0;
  std::uint64_t seed = 1;
  int trials = 1;
  bool measurement_jitter = false;
  std::optional<double> kill_root_at_s;
  double max_initial_offset_s = 10.0;
  double convergence_factor = 2.5;
  std::size_t regression_size = 8;
  std::size_t entry_send_limit = 3;
  std::size_t neighbor_capacity = 256;
  double rapid_latency_lo_ms = 10.0;
  double rapid_latency_hi_ms = 50.0;
  double dfixed_alpha = 0.125;
  double dfixed_ceiling_us = 30.0;
  double phi_band_ppm = 1000.0;
  bool election = true;
  std::vector<double> sweep_periods_s = {30, 150, 300, 500, 800};
  std::vector<std::string> sweep_protocols;  // empty = just `protocol`
  PathStudy paths;

  bool operator==(const ExperimentConfig&) const = default;

  SimTime sync_period() const { return seconds(sync_period_s); }
  SimTime horizon() const { return seconds(horizon_s); }

  ProtocolParams protocol_params() const {
    ProtocolParams p;
    p.kind = protocol;
    p.burst_size = N;
    p.fifo_pages = W;
    p.window = w;
    p.d_fixed_prior_us = d_fixed_prior_us;
    p.regression_size = regression_size;
    p.entry_send_limit = entry_send_limit;
    p.neighbor_capacity = neighbor_capacity;
    p.sync_period = sync_period();
    p.rapid_latency = {seconds(rapid_latency_lo_ms / 1000.0), seconds(rapid_latency_hi_ms / 1000.0)};
    p.dfixed_alpha = dfixed_alpha;
    p.dfixed_ceiling_us = dfixed_ceiling_us;
    p.phi_band_ppm = phi_band_ppm;
    p.election = election;
    return p;
  }

  SimConfig sim_config(const Topology& topo, bool trace = false) const {
    SimConfig c;
    c.topology = topo;
    c.protocol = protocol_params();
    c.link = LinkModel{delay, plr};
    c.drift = drift;
    c.probe_interval = seconds(probe_interval_s);
    c.measurement_jitter = measurement_jitter;
    c.max_initial_offset = seconds(max_initial_offset_s);
    if (kill_root_at_s) c.kill_root_at = seconds(*kill_root_at_s);
    c.trace = trace;
    return c;
  }
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

inline const char* to_string(TopologyKind k) {
  switch (k) {
    case TopologyKind::line: return "line";
    case TopologyKind::grid: return "grid";
    case TopologyKind::rgg: return "rgg";
  }
  return "?";
}

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["name"] = c.name;
  j["mode"] = c.mode == ExperimentMode::sync ? "sync" : "paths";
  j["protocol"] = std::string(to_string(c.protocol));
  j["topology"] = ordered_json{{"kind", to_string(c.topology.kind)},
                               {"nodes", c.topology.nodes},
                               {"rows", c.topology.rows},
                               {"cols", c.topology.cols},
                               {"area_m", c.topology.area_m},
                               {"range_m", c.topology.range_m},
                               {"reference", c.topology.reference},
                               {"max_attempts", c.topology.max_attempts}};
  j["sync_period_s"] = c.sync_period_s;
  j["probe_interval_s"] = c.probe_interval_s;
  j["N"] = c.N;
  j["W"] = c.W;
  j["w"] = c.w;
  j["d_fixed_prior_us"] = c.d_fixed_prior_us;
  j["delay"] = ordered_json{{"d_fixed_us", c.delay.d_fixed_us},
                            {"sigma_us", c.delay.sigma_us},
                            {"p_unc", c.delay.p_unc},
                            {"unc_lo_us", c.delay.unc_lo_us},
                            {"unc_hi_us", c.delay.unc_hi_us}};
  j["plr"] = c.plr;
  j["drift"] = ordered_json{{"mode", c.drift.mode == DriftMode::constant ? "constant" : "bounded_random_walk"},
                            {"rate_spread_ppm", c.drift.rate_spread_ppm},
                            {"walk_step_ppm_per_period", c.drift.walk_step_ppm_per_period},
                            {"rate_bound_ppm", c.drift.rate_bound_ppm}};
  j["horizon_s"] = c.horizon_s;
  j["seed"] = c.seed;
  j["trials"] = c.trials;
  j["measurement_jitter"] = c.measurement_jitter;
  j["kill_root_at_s"] = c.kill_root_at_s ? ordered_json(*c.kill_root_at_s) : ordered_json(nullptr);
  j["max_initial_offset_s"] = c.max_initial_offset_s;
  j["convergence_factor"] = c.convergence_factor;
  j["regression_size"] = c.regression_size;
  j["entry_send_limit"] = c.entry_send_limit;
  j["neighbor_capacity"] = c.neighbor_capacity;
  j["rapid_latency_ms"] = ordered_json::array({c.rapid_latency_lo_ms, c.rapid_latency_hi_ms});
  j["dfixed_alpha"] = c.dfixed_alpha;
  j["dfixed_ceiling_us"] = c.dfixed_ceiling_us;
  j["phi_band_ppm"] = c.phi_band_ppm;
  j["election"] = c.election;
  j["sweep_periods_s"] = c.sweep_periods_s;
  j["sweep_protocols"] = c.sweep_protocols;
  j["paths"] = ordered_json{{"rounds", c.paths.rounds},
                            {"flooding", c.paths.flooding},
                            {"plr", c.paths.plr},
                            {"packets_per_broadcast", c.paths.packets_per_broadcast}};
  return j;
}

namespace detail {

inline int line_at(std::string_view text, std::size_t pos) {
  int line = 1;
  for (std::size_t i = 0; i < pos && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

// Reads a JSON object strictly: every key must be consumed, values must
// have the right type, and failures point at the line of the key.
class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  int line_of(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    std::size_t found = std::string_view::npos;
    for (const auto& key : path) {
      const std::string quoted = "\"" + key + "\"";
      const auto p = text_.find(quoted, pos);
      if (p == std::string_view::npos) break;
      found = p;
      pos = p + quoted.size();
    }
    return found == std::string_view::npos ? 1 : line_at(text_, found);
  }

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& msg) const {
    std::string dotted;
    for (const auto& k : path) dotted += (dotted.empty() ? "" : ".") + k;
    throw ConfigError(line_of(path), dotted.empty() ? msg : dotted + ": " + msg);
  }

  void require_object(const nlohmann::json& j, const std::vector<std::string>& path) const {
    if (!j.is_object()) fail(path, "expected an object");
  }

  void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& path,
                      std::initializer_list<std::string_view> known) const {
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool ok = false;
      for (auto k : known) ok = ok || k == it.key();
      if (!ok) {
        auto p = path;
        p.push_back(it.key());
        fail(p, "unknown key");
      }
    }
  }

  template <typename T>
  void read(const nlohmann::json& obj, const std::vector<std::string>& parent, const char* key, T& out) const {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    auto path = parent;
    path.emplace_back(key);
    const auto& v = *it;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(path, "expected true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(path, "expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(path, "expected a number");
      out = v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(path, "expected an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
        fail(path, "expected a non-negative integer");
      out = v.get<T>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
  }

 private:
  std::string_view text_;
};

}  // namespace detail

inline void validate(const ExperimentConfig& c, const detail::Reader& r) {
  auto need = [&](bool ok, std::vector<std::string> path, const std::string& msg) {
    if (!ok) r.fail(path, msg);
  };
  need(c.sync_period_s > 0, {"sync_period_s"}, "must be positive");
  need(c.probe_interval_s > 0, {"probe_interval_s"}, "must be positive");
  need(c.horizon_s > 0, {"horizon_s"}, "must be positive");
  need(c.N >= 1 && c.N <= 255, {"N"}, "must lie in [1, 255]");
  need(c.W >= 2, {"W"}, "must be at least 2");
  need(c.w >= 2 && c.w <= c.W, {"w"}, "must lie in [2, W]");
  need(c.d_fixed_prior_us >= 0, {"d_fixed_prior_us"}, "must be non-negative");
  need(c.delay.d_fixed_us >= 0, {"delay", "d_fixed_us"}, "must be non-negative");
  need(c.delay.sigma_us >= 0, {"delay", "sigma_us"}, "must be non-negative");
  need(c.delay.p_unc >= 0 && c.delay.p_unc <= 1, {"delay", "p_unc"}, "must lie in [0, 1]");
  need(c.delay.unc_lo_us <= c.delay.unc_hi_us, {"delay", "unc_hi_us"}, "must not be below unc_lo_us");
  need(c.plr >= 0 && c.plr <= 1, {"plr"}, "must lie in [0, 1]");
  need(c.drift.rate_bound_ppm >= 0, {"drift", "rate_bound_ppm"}, "must be non-negative");
  need(c.drift.rate_spread_ppm >= 0 && c.drift.rate_spread_ppm <= c.drift.rate_bound_ppm,
       {"drift", "rate_spread_ppm"}, "must lie in [0, rate_bound_ppm]");
  need(c.drift.walk_step_ppm_per_period >= 0, {"drift", "walk_step_ppm_per_period"}, "must be non-negative");
  need(c.trials >= 1, {"trials"}, "must be at least 1");
  need(!c.kill_root_at_s || *c.kill_root_at_s >= 0, {"kill_root_at_s"}, "must be non-negative");
  need(c.max_initial_offset_s >= 0, {"max_initial_offset_s"}, "must be non-negative");
  need(c.convergence_factor > 0, {"convergence_factor"}, "must be positive");
  need(c.regression_size >= 2, {"regression_size"}, "must be at least 2");
  need(c.neighbor_capacity >= 1, {"neighbor_capacity"}, "must be positive");
  need(c.rapid_latency_lo_ms >= 0 && c.rapid_latency_hi_ms >= c.rapid_latency_lo_ms, {"rapid_latency_ms"},
       "expected [lo, hi] with 0 <= lo <= hi");
  need(c.dfixed_alpha > 0 && c.dfixed_alpha <= 1, {"dfixed_alpha"}, "must lie in (0, 1]");
  need(c.phi_band_ppm > 0, {"phi_band_ppm"}, "must be positive");
  need(!c.sweep_periods_s.empty(), {"sweep_periods_s"}, "must not be empty");
  for (double p : c.sweep_periods_s) need(p > 0, {"sweep_periods_s"}, "periods must be positive");
  need(c.paths.rounds >= 1, {"paths", "rounds"}, "must be at least 1");
  need(c.paths.packets_per_broadcast >= 1, {"paths", "packets_per_broadcast"}, "must be at least 1");
  for (const auto& f : c.paths.flooding)
    need(f == "rapid" || f == "slow", {"paths", "flooding"}, "entries must be \"rapid\" or \"slow\"");
  for (double p : c.paths.plr) need(p >= 0 && p <= 1, {"paths", "plr"}, "entries must lie in [0, 1]");
  const auto& t = c.topology;
  if (t.kind == TopologyKind::grid) {
    need(t.rows >= 1 && t.cols >= 1, {"topology", "rows"}, "grid needs positive rows and cols");
    need(t.reference < t.rows * t.cols, {"topology", "reference"}, "outside the node range");
  } else {
    need(t.nodes >= 1, {"topology", "nodes"}, "must be positive");
    need(t.reference < t.nodes, {"topology", "reference"}, "outside the node range");
  }
  if (t.kind == TopologyKind::rgg) {
    need(t.area_m > 0, {"topology", "area_m"}, "must be positive");
    need(t.range_m > 0, {"topology", "range_m"}, "must be positive");
  }
}

inline ExperimentConfig parse_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(detail::line_at(text, e.byte > 0 ? e.byte - 1 : 0), std::string("malformed JSON: ") + e.what());
  }
  detail::Reader r(text);
  r.require_object(j, {});
  r.reject_unknown(j, {},
                   {"name", "mode", "protocol", "topology", "sync_period_s", "probe_interval_s", "N", "W", "w",
                    "d_fixed_prior_us", "delay", "plr", "drift", "horizon_s", "seed", "trials", "measurement_jitter",
                    "kill_root_at_s", "max_initial_offset_s", "convergence_factor", "regression_size",
                    "entry_send_limit", "neighbor_capacity", "rapid_latency_ms", "dfixed_alpha", "dfixed_ceiling_us",
                    "phi_band_ppm", "election", "sweep_periods_s", "sweep_protocols", "paths"});
  ExperimentConfig c;
  r.read(j, {}, "name", c.name);

  std::string s;
  if (j.contains("mode")) {
    r.read(j, {}, "mode", s);
    if (s == "sync")
      c.mode = ExperimentMode::sync;
    else if (s == "paths")
      c.mode = ExperimentMode::paths;
    else
      r.fail({"mode"}, "expected \"sync\" or \"paths\"");
  }
  if (j.contains("protocol")) {
    r.read(j, {}, "protocol", s);
    try {
      c.protocol = protocol_from_string(s);
    } catch (const InvalidArgument&) {
      r.fail({"protocol"}, "unknown protocol '" + s + "' (none, ftsp, fcsa_lite, pulsesync, rmts, rdc_rmts)");
    }
  }
  if (j.contains("topology")) {
    const auto& t = j["topology"];
    r.require_object(t, {"topology"});
    r.reject_unknown(t, {"topology"}, {"kind", "nodes", "rows", "cols", "area_m", "range_m", "reference", "max_attempts"});
    if (t.contains("kind")) {
      r.read(t, {"topology"}, "kind", s);
      if (s == "line")
        c.topology.kind = TopologyKind::line;
      else if (s == "grid")
        c.topology.kind = TopologyKind::grid;
      else if (s == "rgg")
        c.topology.kind = TopologyKind::rgg;
      else
        r.fail({"topology", "kind"}, "expected line, grid or rgg");
    }
    r.read(t, {"topology"}, "nodes", c.topology.nodes);
    r.read(t, {"topology"}, "rows", c.topology.rows);
    r.read(t, {"topology"}, "cols", c.topology.cols);
    r.read(t, {"topology"}, "area_m", c.topology.area_m);
    r.read(t, {"topology"}, "range_m", c.topology.range_m);
    r.read(t, {"topology"}, "reference", c.topology.reference);
    r.read(t, {"topology"}, "max_attempts", c.topology.max_attempts);
  }
  r.read(j, {}, "sync_period_s", c.sync_period_s);
  r.read(j, {}, "probe_interval_s", c.probe_interval_s);
  r.read(j, {}, "N", c.N);
  r.read(j, {}, "W", c.W);
  r.read(j, {}, "w", c.w);
  r.read(j, {}, "d_fixed_prior_us", c.d_fixed_prior_us);
  if (j.contains("delay")) {
    const auto& d = j["delay"];
    r.require_object(d, {"delay"});
    r.reject_unknown(d, {"delay"}, {"d_fixed_us", "sigma_us", "p_unc", "unc_lo_us", "unc_hi_us"});
    r.read(d, {"delay"}, "d_fixed_us", c.delay.d_fixed_us);
    r.read(d, {"delay"}, "sigma_us", c.delay.sigma_us);
    r.read(d, {"delay"}, "p_unc", c.delay.p_unc);
    r.read(d, {"delay"}, "unc_lo_us", c.delay.unc_lo_us);
    r.read(d, {"delay"}, "unc_hi_us", c.delay.unc_hi_us);
  }
  r.read(j, {}, "plr", c.plr);
  if (j.contains("drift")) {
    const auto& d = j["drift"];
    r.require_object(d, {"drift"});
    r.reject_unknown(d, {"drift"}, {"mode", "rate_spread_ppm", "walk_step_ppm_per_period", "rate_bound_ppm"});
    if (d.contains("mode")) {
      r.read(d, {"drift"}, "mode", s);
      if (s == "constant")
        c.drift.mode = DriftMode::constant;
      else if (s == "bounded_random_walk")
        c.drift.mode = DriftMode::bounded_random_walk;
      else
        r.fail({"drift", "mode"}, "expected constant or bounded_random_walk");
    }
    r.read(d, {"drift"}, "rate_spread_ppm", c.drift.rate_spread_ppm);
    r.read(d, {"drift"}, "walk_step_ppm_per_period", c.drift.walk_step_ppm_per_period);
    r.read(d, {"drift"}, "rate_bound_ppm", c.drift.rate_bound_ppm);
  }
  r.read(j, {}, "horizon_s", c.horizon_s);
  r.read(j, {}, "seed", c.seed);
  r.read(j, {}, "trials", c.trials);
  r.read(j, {}, "measurement_jitter", c.measurement_jitter);
  if (j.contains("kill_root_at_s") && !j["kill_root_at_s"].is_null()) {
    double v = 0;
    r.read(j, {}, "kill_root_at_s", v);
    c.kill_root_at_s = v;
  }
  r.read(j, {}, "max_initial_offset_s", c.max_initial_offset_s);
  r.read(j, {}, "convergence_factor", c.convergence_factor);
  r.read(j, {}, "regression_size", c.regression_size);
  r.read(j, {}, "entry_send_limit", c.entry_send_limit);
  r.read(j, {}, "neighbor_capacity", c.neighbor_capacity);
  if (j.contains("rapid_latency_ms")) {
    const auto& v = j["rapid_latency_ms"];
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      r.fail({"rapid_latency_ms"}, "expected [lo, hi] in milliseconds");
    c.rapid_latency_lo_ms = v[0].get<double>();
    c.rapid_latency_hi_ms = v[1].get<double>();
  }
  r.read(j, {}, "dfixed_alpha", c.dfixed_alpha);
  r.read(j, {}, "dfixed_ceiling_us", c.dfixed_ceiling_us);
  r.read(j, {}, "phi_band_ppm", c.phi_band_ppm);
  r.read(j, {}, "election", c.election);
  if (j.contains("sweep_periods_s")) {
    const auto& v = j["sweep_periods_s"];
    if (!v.is_array()) r.fail({"sweep_periods_s"}, "expected an array of seconds");
    c.sweep_periods_s.clear();
    for (const auto& x : v) {
      if (!x.is_number()) r.fail({"sweep_periods_s"}, "expected numbers");
      c.sweep_periods_s.push_back(x.get<double>());
    }
  }
  if (j.contains("sweep_protocols")) {
    const auto& v = j["sweep_protocols"];
    if (!v.is_array()) r.fail({"sweep_protocols"}, "expected an array of protocol names");
    c.sweep_protocols.clear();
    for (const auto& x : v) {
      if (!x.is_string()) r.fail({"sweep_protocols"}, "expected protocol names");
      try {
        protocol_from_string(x.get<std::string>());
      } catch (const InvalidArgument&) {
        r.fail({"sweep_protocols"}, "unknown protocol '" + x.get<std::string>() + "'");
      }
      c.sweep_protocols.push_back(x.get<std::string>());
    }
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    r.require_object(p, {"paths"});
    r.reject_unknown(p, {"paths"}, {"rounds", "flooding", "plr", "packets_per_broadcast"});
    r.read(p, {"paths"}, "rounds", c.paths.rounds);
    r.read(p, {"paths"}, "packets_per_broadcast", c.paths.packets_per_broadcast);
    if (p.contains("flooding")) {
      const auto& v = p["flooding"];
      if (!v.is_array()) r.fail({"paths", "flooding"}, "expected an array");
      c.paths.flooding.clear();
      for (const auto& x : v) {
        if (!x.is_string()) r.fail({"paths", "flooding"}, "expected strings");
        c.paths.flooding.push_back(x.get<std::string>());
      }
    }
    if (p.contains("plr")) {
      const auto& v = p["plr"];
      if (!v.is_array()) r.fail({"paths", "plr"}, "expected an array");
      c.paths.plr.clear();
      for (const auto& x : v) {
        if (!x.is_number()) r.fail({"paths", "plr"}, "expected numbers");
        c.paths.plr.push_back(x.get<double>());
      }
    }
  }
  validate(c, r);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(0, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// 64-bit FNV-1a, used for the default-config digest.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t config_digest(const ExperimentConfig& c) { return fnv1a64(to_json(c).dump()); }

}  // namespace rdcsync
