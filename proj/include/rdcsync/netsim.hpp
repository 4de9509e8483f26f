#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <queue>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdcsync/clocks.hpp"
#include "rdcsync/estimators.hpp"
#include "rdcsync/packet.hpp"
#include "rdcsync/protocol.hpp"
#include "rdcsync/rng.hpp"
#include "rdcsync/topology.hpp"
#include "rdcsync/types.hpp"

namespace rdcsync {

struct LinkModel {
  DelayDecomposition delay;
  double plr = 0.0;
};

/// D_fixed + N(0, sigma^2) + Bernoulli(p_unc) * U(lo, hi), rounded to whole
/// microseconds. Gaussian tails that would make the delay negative are redrawn.
inline SimTime sample_delay(const LinkModel& link, RngStream& rng) {
  const auto& d = link.delay;
  double g = rng.normal(0.0, d.sigma_us);
  for (int i = 0; i < 64 && d.d_fixed_us + g < 0.0; ++i) g = rng.normal(0.0, d.sigma_us);
  if (d.d_fixed_us + g < 0.0) g = -d.d_fixed_us;
  const double unc = rng.bernoulli(d.p_unc) ? rng.uniform(d.unc_lo_us, d.unc_hi_us) : 0.0;
  return round_half_away(d.d_fixed_us + g + unc);
}

struct DriftConfig {
  DriftMode mode = DriftMode::constant;
  double rate_spread_ppm = 50.0;  // initial rates ~ U(-spread, +spread)
  double walk_step_ppm_per_period = 0.0;
  double rate_bound_ppm = 100.0;

  bool operator==(const DriftConfig&) const = default;
};

struct SimConfig {
  Topology topology;
  ProtocolParams protocol;
  LinkModel link;
  DriftConfig drift;
  SimTime probe_interval = 10 * kMicrosPerSecond;
  bool measurement_jitter = false;
  SimTime max_initial_offset = 10 * kMicrosPerSecond;
  std::optional<SimTime> kill_root_at;
  bool trace = false;
};

/// Logical clocks of all nodes at one true instant; NaN where a node is not
/// running (not booted yet or dead).
struct Snapshot {
  SimTime t = 0;
  std::vector<double> logical;

  bool present(NodeId i) const { return !std::isnan(logical[i]); }
};

struct AcceptRecord {
  SimTime t = 0;
  NodeId node = 0;
  NodeId father = 0;
  std::uint64_t round = 0;
  std::uint16_t hops = 0;
};

struct RunStats {
  SimTime end = 0;
  std::uint64_t events = 0;
  bool starved = false;
};

enum class EventKind : std::uint8_t { boot, deliver, period, compensation, probe, kill };

struct Event {
  SimTime at = 0;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::probe;
  bool last = false;
  NodeId node = 0;
  std::uint32_t burst = 0;
  std::uint16_t index = 0;
  std::uint64_t token = 0;
};

struct EventLater {
  bool operator()(const Event& a, const Event& b) const {
    return a.at != b.at ? a.at > b.at : a.seq > b.seq;
  }
};

/// Single-threaded discrete-event simulation of one network.
class Simulator final : public NodeContext {
 public:
  using ProbeSink = std::function<void(const Snapshot&)>;

  Simulator(SimConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)),
        seed_(seed),
        jitter_rng_(seed, RngStream::stream_for(0, StreamPurpose::probe_jitter)) {
    cfg_.protocol.validate();
    cfg_.link.delay.validate();
    if (cfg_.link.plr < 0 || cfg_.link.plr > 1) throw InvalidArgument("plr must lie in [0,1]");
    const auto n = static_cast<NodeId>(cfg_.topology.node_count());
    nodes_.reserve(n);
    for (NodeId i = 0; i < n; ++i) {
      RngStream osc_rng(seed, RngStream::stream_for(i, StreamPurpose::oscillator));
      OscillatorModel osc;
      osc.rate_bound_ppm = cfg_.drift.rate_bound_ppm;
      osc.rate_ppm = osc_rng.uniform(-cfg_.drift.rate_spread_ppm, cfg_.drift.rate_spread_ppm);
      osc.initial_offset_us = cfg_.max_initial_offset > 0 ? osc_rng.uniform_int(0, cfg_.max_initial_offset) : 0;
      osc.drift_mode = cfg_.drift.mode;
      osc.walk_step_ppm_per_period = cfg_.drift.walk_step_ppm_per_period;
      osc.walk_interval = cfg_.protocol.sync_period;
      std::optional<RngStream> walk;
      if (osc.drift_mode == DriftMode::bounded_random_walk)
        walk.emplace(seed, RngStream::stream_for(i, StreamPurpose::oscillator, 1));
      nodes_.emplace_back(i, i == cfg_.topology.reference, cfg_.protocol, HardwareClock(osc, std::move(walk)), seed);
      delay_rng_.emplace_back(seed, RngStream::stream_for(i, StreamPurpose::link_delay));
      loss_rng_.emplace_back(seed, RngStream::stream_for(i, StreamPurpose::link_loss));
      RngStream boot_rng(seed, RngStream::stream_for(i, StreamPurpose::boot));
      boot_at_.push_back(boot_rng.uniform_int(0, cfg_.protocol.sync_period - 1));
    }
  }

  void on_probe(ProbeSink sink) { sink_ = std::move(sink); }

  RunStats run(SimTime horizon) {
    RunStats st;
    for (NodeId i = 0; i < nodes_.size(); ++i) push({boot_at_[i], 0, EventKind::boot, false, i, 0, 0, 0});
    if (cfg_.probe_interval > 0) push({cfg_.probe_interval, 0, EventKind::probe, false, 0, 0, 0, 0});
    if (cfg_.kill_root_at)
      push({*cfg_.kill_root_at, 0, EventKind::kill, false, cfg_.topology.reference, 0, 0, 0});
    while (!queue_.empty()) {
      const Event ev = queue_.top();
      if (ev.at > horizon) break;
      queue_.pop();
      now_ = ev.at;
      ++st.events;
      dispatch(ev);
    }
    if (queue_.empty() && now_ < horizon) {
      st.starved = true;
      trace({now_, TraceKind::starve, kNoNode, kNoNode, 0, 0, 0, 0, {}});
    }
    st.end = queue_.empty() ? now_ : horizon;
    return st;
  }

  Snapshot probe(SimTime t) {
    Snapshot s{t, std::vector<double>(nodes_.size(), std::numeric_limits<double>::quiet_NaN())};
    for (auto& nd : nodes_) {
      if (!nd.booted() || !nd.alive()) continue;
      double v = static_cast<double>(nd.logical_at(t));
      if (cfg_.measurement_jitter) v += jitter_rng_.normal(0.07, 0.0033);
      s.logical[nd.id()] = v;
    }
    return s;
  }

  Node& node(NodeId i) { return nodes_.at(i); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const SimConfig& config() const { return cfg_; }
  const std::vector<TraceEvent>& trace_log() const { return trace_; }
  const std::vector<AcceptRecord>& accepts() const { return accepts_; }
  std::optional<SimTime> first_transmission() const { return first_tx_; }
  std::uint64_t deliveries() const { return deliveries_; }

  // NodeContext
  SimTime now() const override { return now_; }

  void transmit(NodeId sender, std::vector<std::pair<SimTime, SyncPacket>> burst) override {
    if (!first_tx_) first_tx_ = now_;
    const std::uint32_t slot = alloc_burst();
    auto& b = bursts_[slot];
    b.packets.clear();
    for (auto& [t, p] : burst) b.packets.push_back(std::move(p));
    b.refs = 0;
    std::vector<SimTime> at(burst.size());
    for (NodeId v : cfg_.topology.adjacency[sender]) {
      if (nodes_[v].booted() && !nodes_[v].alive()) continue;
      int last = -1;
      for (std::size_t k = 0; k < burst.size(); ++k) {
        if (loss_rng_[sender].bernoulli(cfg_.link.plr)) {
          at[k] = -1;
          continue;
        }
        at[k] = burst[k].first + sample_delay(cfg_.link, delay_rng_[sender]);
        if (last < 0 || at[k] >= at[static_cast<std::size_t>(last)]) last = static_cast<int>(k);
      }
      for (std::size_t k = 0; k < burst.size(); ++k) {
        if (at[k] < 0) continue;
        push({at[k], 0, EventKind::deliver, static_cast<int>(k) == last, v, slot, static_cast<std::uint16_t>(k), 0});
        ++b.refs;
      }
    }
    if (b.refs == 0) free_.push_back(slot);
  }

  void set_timer(NodeId node, TimerKind kind, SimTime at, std::uint64_t token) override {
    push({at, 0, kind == TimerKind::period ? EventKind::period : EventKind::compensation, false, node, 0, 0, token});
  }

  void accepted(NodeId node, NodeId father, std::uint64_t round, std::uint16_t hops) override {
    accepts_.push_back({now_, node, father, round, hops});
  }

  bool tracing() const override { return cfg_.trace; }
  void trace(TraceEvent ev) override {
    if (cfg_.trace) trace_.push_back(std::move(ev));
  }

 private:
  struct Burst {
    std::vector<SyncPacket> packets;
    std::uint32_t refs = 0;
  };

  void push(Event ev) {
    ev.seq = next_seq_++;
    queue_.push(ev);
  }

  std::uint32_t alloc_burst() {
    if (!free_.empty()) {
      const auto s = free_.back();
      free_.pop_back();
      return s;
    }
    bursts_.emplace_back();
    return static_cast<std::uint32_t>(bursts_.size() - 1);
  }

  void dispatch(const Event& ev) {
    switch (ev.kind) {
      case EventKind::boot:
        nodes_[ev.node].boot(*this);
        break;
      case EventKind::deliver: {
        auto& b = bursts_[ev.burst];
        ++deliveries_;
        nodes_[ev.node].on_packet(*this, b.packets[ev.index], ev.last);
        if (--b.refs == 0) free_.push_back(ev.burst);
        break;
      }
      case EventKind::period:
        nodes_[ev.node].on_timer(*this, TimerKind::period, ev.token);
        break;
      case EventKind::compensation:
        nodes_[ev.node].on_timer(*this, TimerKind::compensation, ev.token);
        break;
      case EventKind::probe: {
        const Snapshot s = probe(now_);
        if (cfg_.trace) {
          std::int64_t n = 0;
          double lo = std::numeric_limits<double>::infinity();
          double hi = -lo;
          for (double v : s.logical)
            if (!std::isnan(v)) {
              ++n;
              lo = std::min(lo, v);
              hi = std::max(hi, v);
            }
          trace({now_, TraceKind::probe, kNoNode, kNoNode, 0, n, n ? hi - lo : 0.0, 0, {}});
        }
        if (sink_) sink_(s);
        push({now_ + cfg_.probe_interval, 0, EventKind::probe, false, 0, 0, 0, 0});
        break;
      }
      case EventKind::kill:
        if (nodes_[ev.node].booted()) nodes_[ev.node].kill(*this);
        break;
    }
  }

  SimConfig cfg_;
  std::uint64_t seed_;
  std::vector<Node> nodes_;
  std::vector<RngStream> delay_rng_;
  std::vector<RngStream> loss_rng_;
  std::vector<SimTime> boot_at_;
  RngStream jitter_rng_;
  std::priority_queue<Event, std::vector<Event>, EventLater> queue_;
  std::uint64_t next_seq_ = 0;
  SimTime now_ = 0;
  std::vector<Burst> bursts_;
  std::vector<std::uint32_t> free_;
  std::vector<TraceEvent> trace_;
  std::vector<AcceptRecord> accepts_;
  std::optional<SimTime> first_tx_;
  std::uint64_t deliveries_ = 0;
  ProbeSink sink_;
};

/// One JSON object per line with fixed keys: t, ev, node, peer, round,
/// value, x, y, note. Absent ids are -1.
inline void write_trace_ndjson(std::ostream& os, const std::vector<TraceEvent>& events) {
  for (const auto& e : events) {
    nlohmann::ordered_json j;
    j["t"] = e.t;
    j["ev"] = to_string(e.kind);
    j["node"] = e.node == kNoNode ? -1 : static_cast<std::int64_t>(e.node);
    j["peer"] = e.peer == kNoNode ? -1 : static_cast<std::int64_t>(e.peer);
    j["round"] = e.round;
    j["value"] = e.value;
    j["x"] = e.x;
    j["y"] = e.y;
    j["note"] = e.note;
    os << j.dump() << '\n';
  }
}

}  // namespace rdcsync
