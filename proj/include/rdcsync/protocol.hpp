#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rdcsync/baselines.hpp"
#include "rdcsync/clocks.hpp"
#include "rdcsync/estimators.hpp"
#include "rdcsync/packet.hpp"
#include "rdcsync/rng.hpp"
#include "rdcsync/types.hpp"

namespace rdcsync {

enum class NodeRole { root, non_root, candidate };
enum class TimerKind { period, compensation };

inline const char* to_string(NodeRole r) {
  switch (r) {
    case NodeRole::root: return "root";
    case NodeRole::non_root: return "non_root";
    case NodeRole::candidate: return "candidate";
  }
  return "?";
}

struct ProtocolParams {
  ProtocolKind kind = ProtocolKind::rdc_rmts;
  int burst_size = 5;  // N, multi-broadcast protocols only
  int fifo_pages = 2;  // W
  int window = 2;      // w
  double d_fixed_prior_us = 3.0;
  std::size_t regression_size = 8;
  std::size_t entry_send_limit = 3;  // slow flooding: entries needed before forwarding
  std::size_t neighbor_capacity = 64;
  SimTime sync_period = 30 * kMicrosPerSecond;
  LatencyRange rapid_latency = kRapidLatency;
  double sigma_factor = 3.0;
  double sigma_floor_us = 1.0;
  double dfixed_alpha = 0.125;
  double dfixed_ceiling_us = 30.0;
  double phi_band_ppm = kDefaultPhiBandPpm;
  int silence_rounds = 2;
  bool election = true;
  double lr_throwout_us = 1000.0;

  BaselineConfig baseline() const { return baseline_config(kind, d_fixed_prior_us); }
  bool multi_broadcast() const {
    const auto b = baseline();
    return b.skew_rule == SkewRule::mle || b.offset_rule == OffsetRule::theta3;
  }
  int packets_per_round() const { return multi_broadcast() ? burst_size : 1; }

  void validate() const {
    if (burst_size < 1 || burst_size > 255) throw InvalidArgument("N must lie in [1,255]");
    if (fifo_pages < 2) throw InvalidArgument("W must be at least 2");
    if (window < 2 || window > fifo_pages) throw InvalidArgument("w must lie in [2, W]");
    if (regression_size < 2) throw InvalidArgument("regression table needs at least 2 entries");
    if (neighbor_capacity < 1) throw InvalidArgument("neighbor capacity must be positive");
    if (sync_period <= 0) throw InvalidArgument("sync period must be positive");
    if (rapid_latency.lo < 0 || rapid_latency.hi < rapid_latency.lo) throw InvalidArgument("bad rapid latency range");
    if (sigma_factor <= 0) throw InvalidArgument("sigma factor must be positive");
    if (silence_rounds < 1) throw InvalidArgument("silence rounds must be positive");
    if (!(dfixed_alpha > 0 && dfixed_alpha <= 1)) throw InvalidArgument("alpha must lie in (0,1]");
  }
};

enum class TraceKind { boot, deliver, accept, correction, reject, role, kill, probe, starve };

inline const char* to_string(TraceKind k) {
  switch (k) {
    case TraceKind::boot: return "boot";
    case TraceKind::deliver: return "deliver";
    case TraceKind::accept: return "accept";
    case TraceKind::correction: return "correction";
    case TraceKind::reject: return "reject";
    case TraceKind::role: return "role";
    case TraceKind::kill: return "kill";
    case TraceKind::probe: return "probe";
    case TraceKind::starve: return "starve";
  }
  return "?";
}

// Generic record; which fields carry meaning depends on the kind (see README).
struct TraceEvent {
  SimTime t = 0;
  TraceKind kind = TraceKind::boot;
  NodeId node = kNoNode;
  NodeId peer = kNoNode;
  std::uint64_t round = 0;
  std::int64_t value = 0;
  double x = 0.0;
  double y = 0.0;
  std::string note;
};

/// What a node may ask of the simulator.
class NodeContext {
 public:
  virtual ~NodeContext() = default;
  virtual SimTime now() const = 0;
  /// One multi-broadcast burst; each packet leaves at its own send time.
  virtual void transmit(NodeId sender, std::vector<std::pair<SimTime, SyncPacket>> burst) = 0;
  virtual void set_timer(NodeId node, TimerKind kind, SimTime at, std::uint64_t token) = 0;
  virtual void accepted(NodeId node, NodeId father, std::uint64_t round, std::uint16_t hops) = 0;
  virtual bool tracing() const = 0;
  virtual void trace(TraceEvent ev) = 0;
};

/// W pages of hardware timestamp batches per father, newest first.
class TimestampFifo {
 public:
  explicit TimestampFifo(std::size_t pages = 2) : pages_(pages) {}

  void push(NodeId from, BroadcastBatch b) {
    auto& q = ring_[from];
    q.push_front(std::move(b));
    while (q.size() > pages_) q.pop_back();
  }
  std::size_t depth(NodeId from) const {
    auto it = ring_.find(from);
    return it == ring_.end() ? 0 : it->second.size();
  }
  /// 1-based page, 1 = newest.
  const BroadcastBatch& page(NodeId from, std::size_t k) const { return ring_.at(from).at(k - 1); }
  void erase(NodeId from) { ring_.erase(from); }
  std::size_t pages() const { return pages_; }

 private:
  std::size_t pages_;
  std::map<NodeId, std::deque<BroadcastBatch>> ring_;
};

struct NeighborEntry {
  SimTime last_heard = 0;
  std::uint64_t last_round = 0;
  std::uint32_t activity = 0;
  double last_phi = 1.0;
  Tick last_theta_cum = 0;
  Tick last_recv_hw = 0;
  // uplink sample harvested from this neighbor and the round it forwarded
  std::optional<Tick> buf_value;
  std::uint64_t buf_round = 0;
};

class NeighborTable {
 public:
  explicit NeighborTable(std::size_t capacity = 64) : capacity_(capacity) {}

  /// nullptr when the neighbor is new and the table is full.
  NeighborEntry* touch(NodeId j, SimTime now) {
    auto it = entries_.find(j);
    if (it == entries_.end()) {
      if (entries_.size() >= capacity_) return nullptr;
      it = entries_.emplace(j, NeighborEntry{}).first;
    }
    it->second.last_heard = now;
    ++it->second.activity;
    return &it->second;
  }
  NeighborEntry* find(NodeId j) {
    auto it = entries_.find(j);
    return it == entries_.end() ? nullptr : &it->second;
  }
  /// Drops neighbors silent for longer than max_silence; returns their ids.
  std::vector<NodeId> evict(SimTime now, SimTime max_silence) {
    std::vector<NodeId> gone;
    for (auto it = entries_.begin(); it != entries_.end();) {
      if (now - it->second.last_heard > max_silence) {
        gone.push_back(it->first);
        it = entries_.erase(it);
      } else {
        ++it;
      }
    }
    return gone;
  }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::map<NodeId, NeighborEntry>& entries() const { return entries_; }
  std::map<NodeId, NeighborEntry>& entries() { return entries_; }

 private:
  std::size_t capacity_;
  std::map<NodeId, NeighborEntry> entries_;
};

/// Counts period ticks without fresh synchronization traffic.
struct ElectionTimer {
  int silent_rounds = 0;
};

/// True when the node should announce candidacy.
inline bool election_step(ElectionTimer& e, bool heard_sync, int threshold) {
  e.silent_rounds = heard_sync ? 0 : e.silent_rounds + 1;
  return e.silent_rounds >= threshold;
}

/// One sensor node running any of the supported protocols.
class Node {
 public:
  Node(NodeId id, bool reference, const ProtocolParams& params, HardwareClock hw, std::uint64_t seed)
      : id_(id),
        reference_(reference),
        params_(params),
        cfg_(params.baseline()),
        hw_(std::move(hw)),
        fifo_(static_cast<std::size_t>(params.fifo_pages)),
        neighbors_(params.neighbor_capacity),
        lr_(params.regression_size),
        spacing_rng_(seed, RngStream::stream_for(id, StreamPurpose::burst_spacing)),
        latency_rng_(seed, RngStream::stream_for(id, StreamPurpose::latency)),
        schedule_rng_(seed, RngStream::stream_for(id, StreamPurpose::schedule)) {}

  NodeId id() const { return id_; }
  bool alive() const { return alive_; }
  bool booted() const { return booted_; }
  NodeRole role() const { return role_; }
  std::uint64_t round() const { return round_id_; }
  std::uint16_t hops() const { return hops_; }
  NodeId father() const { return father_; }
  double phi() const { return lc_.phi; }
  const LogicalClockState& logical_state() const { return lc_; }
  const NeighborTable& neighbors() const { return neighbors_; }
  std::optional<double> d_fixed_estimate(NodeId father) const {
    auto it = dfixed_.find(father);
    if (it == dfixed_.end()) return std::nullopt;
    return it->second.value();
  }
  const ElectionTimer& election() const { return election_; }

  Tick hw_at(SimTime t) { return hw_.read(t); }
  Tick logical_at(SimTime t) { return logical_read(lc_, hw_.read(t)); }

  void boot(NodeContext& ctx) {
    booted_ = true;
    alive_ = true;
    const Tick h = hw_.read(ctx.now());
    lc_ = LogicalClockState{1.0, 0, h, h};
    if (ctx.tracing()) ctx.trace({ctx.now(), TraceKind::boot, id_, kNoNode, 0, h, 0, 0, {}});
    if (params_.kind == ProtocolKind::none) return;
    if (reference_) {
      role_ = NodeRole::root;
      hops_ = 0;
      round_id_ = round_id::make(0, round_id::rank(0, id_), 0);
    }
    SimTime first = ctx.now() + params_.sync_period;
    if (cfg_.flooding == Flooding::slow && !reference_)
      first = ctx.now() + slow_flood_phase(schedule_rng_, params_.sync_period);
    ctx.set_timer(id_, TimerKind::period, first, period_token_);
  }

  void kill(NodeContext& ctx) {
    alive_ = false;
    if (ctx.tracing()) ctx.trace({ctx.now(), TraceKind::kill, id_, kNoNode, round_id_, 0, 0, 0, {}});
  }

  void on_timer(NodeContext& ctx, TimerKind kind, std::uint64_t token) {
    if (!alive_ || !booted_) return;
    if (kind == TimerKind::period) {
      if (token != period_token_) return;
      ctx.set_timer(id_, TimerKind::period, ctx.now() + params_.sync_period, period_token_);
      on_period(ctx);
    } else {
      if (token != comp_token_) return;
      compensation_task(ctx);
    }
  }

  /// Packets of one burst arrive one by one; the simulator flags the last
  /// surviving one so the burst can be processed as a batch.
  void on_packet(NodeContext& ctx, const SyncPacket& pkt, bool last_in_burst) {
    if (!alive_ || !booted_ || params_.kind == ProtocolKind::none) return;
    auto& pend = pending_[pkt.sender_id];
    if (!pend.empty() && pend.front().pkt.round_id != pkt.round_id) pend.clear();
    const Tick h = hw_.read(ctx.now());
    pend.push_back(Rx{pkt, h, logical_read(lc_, h)});
    if (!last_in_burst) return;
    std::vector<Rx> rx = std::move(pend);
    pending_.erase(pkt.sender_id);
    on_burst(ctx, pkt.sender_id, std::move(rx));
  }

 private:
  struct Rx {
    SyncPacket pkt;
    Tick hw = 0;
    Tick logical = 0;
  };

  struct Accepted {
    NodeId father = kNoNode;
    std::uint64_t round = 0;
    double father_phi = 1.0;
    double father_phi_prev = 1.0;
    std::optional<Tick> uplink;
    std::optional<double> father_step;  // father's correction between uplink and downlink
    std::vector<double> p_d;
    Tick recv_hw = 0;
    Tick recv_logical = 0;
  };

  bool lr_family() const { return cfg_.skew_rule == SkewRule::lr; }

  std::uint32_t my_rank() const {
    if (role_ != NodeRole::non_root) return round_id::rank_of(round_id_);
    return round_id::rank(hops_, id_);
  }

  bool same_lineage_prev(std::uint64_t tag, std::uint64_t round) const {
    return round_id::seq(round) > 0 && tag + 1 == round;
  }

  void on_period(NodeContext& ctx) {
    const SimTime grace = 2 * params_.sync_period + params_.sync_period / 2;
    for (NodeId gone : neighbors_.evict(ctx.now(), grace)) {
      fifo_.erase(gone);
      skew_hat_.erase(gone);
    }
    if (role_ == NodeRole::non_root) {
      const bool heard = heard_;
      heard_ = false;
      // Only a node that has heard a root can notice losing it. A slow-flooding
      // father is silent while refilling its table, so that gap is tolerated.
      const int threshold = cfg_.flooding == Flooding::slow
                                ? params_.silence_rounds + static_cast<int>(params_.entry_send_limit)
                                : params_.silence_rounds;
      if (params_.election && synced_once_ && election_step(election_, heard, threshold)) {
        become_candidate(ctx, round_id::epoch(round_id_) + 1);
        return;
      }
      if (cfg_.flooding == Flooding::slow && synced_once_ && lr_.size() >= params_.entry_send_limit)
        send_burst(ctx);
      return;
    }
    election_.silent_rounds = 0;
    root_on_period(ctx);
  }

  void root_on_period(NodeContext& ctx) {
    round_id_ = round_id::next(round_id_);
    if (role_ == NodeRole::candidate && ++own_rounds_ >= 2) {
      role_ = NodeRole::root;
      if (ctx.tracing()) ctx.trace({ctx.now(), TraceKind::role, id_, kNoNode, round_id_, 0, 0, 0, "root"});
    }
    send_burst(ctx);
  }

  void become_candidate(NodeContext& ctx, std::uint32_t epoch) {
    const std::uint32_t rank = my_rank();
    role_ = NodeRole::candidate;
    own_rounds_ = 0;
    election_.silent_rounds = 0;
    round_id_ = round_id::make(epoch, rank, 0);
    hops_ = 0;
    father_ = kNoNode;
    acc_.reset();
    ++comp_token_;
    const Tick h = hw_.read(ctx.now());
    lc_ = apply_correction(lc_, 1.0, 0, h, params_.phi_band_ppm);
    lr_.clear();
    lr_errors_ = 0;
    if (ctx.tracing()) ctx.trace({ctx.now(), TraceKind::role, id_, kNoNode, round_id_, rank, 0, 0, "candidate"});
    root_on_period(ctx);
  }

  void send_burst(NodeContext& ctx) {
    const int n = params_.packets_per_round();
    std::vector<std::pair<SimTime, SyncPacket>> burst;
    burst.reserve(static_cast<std::size_t>(n));
    SimTime t = ctx.now();
    for (int k = 1; k <= n; ++k) {
      if (k > 1) t += spacing_rng_.uniform_int(1, 3);
      const Tick h = hw_.read(t);
      SyncPacket p;
      p.sender_id = id_;
      p.seq_in_batch = static_cast<std::uint8_t>(k);
      p.batch_size = static_cast<std::uint8_t>(n);
      p.hw_ts = h;
      p.logical_ts = logical_read(lc_, h);
      p.phi = lc_.phi;
      p.round_id = round_id_;
      p.theta_cum = lc_.theta_hat;
      p.hops = hops_;
      if (k == 1) {
        p.neighbor_buf = harvest_buffer();
        last_forward_hw_ = h;
        last_forward_round_ = round_id_;
      }
      burst.emplace_back(t, std::move(p));
    }
    ctx.transmit(id_, std::move(burst));
  }

  // Entries from the previous round go out; older ones are dropped.
  NeighborBuffer harvest_buffer() {
    NeighborBuffer buf;
    for (auto& [j, e] : neighbors_.entries()) {
      if (!e.buf_value) continue;
      if (same_lineage_prev(e.buf_round, round_id_) && buf.size() < neighbors_.capacity())
        buf.emplace_back(j, *e.buf_value);
      if (e.buf_round < round_id_) e.buf_value.reset();
    }
    return buf;
  }

  void on_burst(NodeContext& ctx, NodeId j, std::vector<Rx> rx) {
    std::sort(rx.begin(), rx.end(), [](const Rx& a, const Rx& b) { return a.pkt.seq_in_batch < b.pkt.seq_in_batch; });
    NeighborEntry* nb = neighbors_.touch(j, ctx.now());
    if (!nb) return;
    const SyncPacket& first = rx.front().pkt;
    const std::uint64_t rid = first.round_id;
    if (ctx.tracing())
      ctx.trace({ctx.now(), TraceKind::deliver, id_, j, rid, static_cast<std::int64_t>(rx.size()), 0, 0, {}});

    const bool had_prev = nb->activity > 1;
    const double father_phi_prev = had_prev ? nb->last_phi : first.phi;
    const std::uint64_t prev_round = nb->last_round;
    const Tick prev_theta_cum = nb->last_theta_cum;
    const Tick prev_recv_hw = nb->last_recv_hw;
    nb->last_phi = first.phi;
    nb->last_round = rid;
    nb->last_theta_cum = first.theta_cum;
    nb->last_recv_hw = rx.front().hw;

    BroadcastBatch b;
    b.round_id = rid;
    double dmin = 0.0;
    std::vector<double> p_d;
    for (const auto& r : rx) {
      b.push(r.pkt.seq_in_batch, r.pkt.hw_ts, r.hw, r.pkt.logical_ts, r.logical);
      p_d.push_back(static_cast<double>(r.logical - r.pkt.logical_ts));
    }
    dmin = stats::min(p_d);
    if (!lr_family()) fifo_.push(j, b);

    if (rid <= round_id_) {
      harvest(*nb, dmin, rid);
      return;
    }
    if (params_.election && round_id::epoch(rid) > round_id::epoch(round_id_) && round_id::rank_of(rid) > my_rank()) {
      harvest(*nb, dmin, rid);
      become_candidate(ctx, round_id::epoch(rid));
      return;
    }

    // fresh round
    if (role_ != NodeRole::non_root) {
      role_ = NodeRole::non_root;
      if (ctx.tracing()) ctx.trace({ctx.now(), TraceKind::role, id_, j, rid, 0, 0, 0, "resign"});
    }
    round_id_ = rid;
    hops_ = static_cast<std::uint16_t>(std::min<int>(first.hops + 1, 0xFFFF));
    father_ = j;
    heard_ = true;
    synced_once_ = true;
    ctx.accepted(id_, j, rid, hops_);
    if (ctx.tracing())
      ctx.trace({ctx.now(), TraceKind::accept, id_, j, rid, hops_, 0, 0, {}});

    if (lr_family()) {
      lr_accept(ctx, rx);
      if (cfg_.flooding == Flooding::rapid) schedule_compensation(ctx);
      return;
    }

    Accepted a;
    a.father = j;
    a.round = rid;
    a.father_phi = first.phi;
    a.father_phi_prev = father_phi_prev;
    a.p_d = std::move(p_d);
    a.recv_hw = rx.front().hw;
    a.recv_logical = rx.front().logical;
    if (first.neighbor_buf) {
      for (const auto& [who, v] : *first.neighbor_buf)
        if (who == id_) a.uplink = v;
    }
    // The father's own correction since the uplink exchange must be known to
    // pair the two directions: its previous burst (round R-1) must have reached
    // us before we forwarded R-1.
    if (a.uplink && had_prev && same_lineage_prev(prev_round, rid) && last_forward_round_ == prev_round &&
        prev_recv_hw <= last_forward_hw_)
      a.father_step = static_cast<double>(first.theta_cum - prev_theta_cum);
    acc_ = std::move(a);
    schedule_compensation(ctx);
  }

  void harvest(NeighborEntry& nb, double dmin, std::uint64_t rid) {
    const Tick v = round_half_away(dmin);
    if (nb.buf_value && nb.buf_round == rid) {
      nb.buf_value = std::min(*nb.buf_value, v);
    } else {
      nb.buf_value = v;
      nb.buf_round = rid;
    }
  }

  void schedule_compensation(NodeContext& ctx) {
    ++comp_token_;
    ctx.set_timer(id_, TimerKind::compensation, ctx.now() + draw_latency(latency_rng_, params_.rapid_latency),
                  comp_token_);
  }

  void compensation_task(NodeContext& ctx) {
    if (lr_family()) {
      send_burst(ctx);
      return;
    }
    if (!acc_) return;
    const Accepted a = std::move(*acc_);
    acc_.reset();

    // (1) skew from FIFO pages 1 and w
    double phi_hat = skew_hat_.count(a.father) ? skew_hat_[a.father] : 1.0;
    const auto w = static_cast<std::size_t>(params_.window);
    if (fifo_.depth(a.father) >= w) {
      const auto& nw = fifo_.page(a.father, 1);
      const auto& old = fifo_.page(a.father, w);
      if (old.round_id < nw.round_id && nw.round_id == a.round) {
        try {
          const auto p = clean_skew_observations(old, nw);
          const double tau = static_cast<double>(nw.sender_hw.front() - old.sender_hw.front());
          if (tau > 0) {
            phi_hat = skew_mle(p, tau).phi_hat;
            skew_hat_[a.father] = phi_hat;
          }
        } catch (const InsufficientData&) {
          // keep the previous estimate
        }
      }
    }
    // (2) rate relative to the father's logical clock
    const double phi_old = lc_.phi;
    const double phi_new = a.father_phi / phi_hat;

    // (3) offset of our logical clock relative to the father's
    OffsetEstimate est;
    if (cfg_.offset_rule == OffsetRule::adaptive && a.uplink && a.father_step) {
      const double rel = phi_old * phi_hat / a.father_phi_prev;
      const double sep = static_cast<double>(a.recv_hw - last_forward_hw_);
      const double theta_delta = (rel - 1.0) * sep - *a.father_step;
      const double up[] = {static_cast<double>(*a.uplink)};
      est = joint_offset_mle(up, a.p_d, theta_delta);
      auto& tr = dfixed_.try_emplace(a.father, params_.dfixed_alpha, params_.dfixed_ceiling_us).first->second;
      tr.offer(*est.d_fixed_hat);
    } else if (cfg_.offset_rule == OffsetRule::adaptive) {
      est = min_offset_mle(a.p_d, dfixed_fallback(a.father));
    } else {
      est = OffsetEstimate{offset_theta3(a.p_d, params_.d_fixed_prior_us), std::nullopt, OffsetMethod::min_mle};
    }

    // (4) correction anchored at the downlink receive instant
    const Tick h = hw_.read(ctx.now());
    const Tick current = logical_read(lc_, h);
    const double elapsed = static_cast<double>(h - a.recv_hw);
    const double base = static_cast<double>(a.recv_logical) - est.theta_hat;
    try {
      const Tick step = round_half_away(base + elapsed * phi_new) - current;
      lc_ = apply_correction(lc_, phi_new, step, h, params_.phi_band_ppm);
      if (ctx.tracing())
        ctx.trace({ctx.now(), TraceKind::correction, id_, a.father, a.round, step, phi_new,
                   est.d_fixed_hat.value_or(-1.0), est.method == OffsetMethod::joint_mle ? "joint" : "min"});
    } catch (const CorrectionRejected& e) {
      const Tick step = round_half_away(base + elapsed * phi_old) - current;
      lc_ = apply_correction(lc_, phi_old, step, h, params_.phi_band_ppm);
      if (ctx.tracing()) ctx.trace({ctx.now(), TraceKind::reject, id_, a.father, a.round, step, e.phi(), 0, {}});
    }
    // (5) forward
    send_burst(ctx);
  }

  // Delay spikes are positive within each page, so the tail detector runs on
  // each page's one-way differences and a pair survives only if both halves do.
  std::vector<double> clean_skew_observations(const BroadcastBatch& old, const BroadcastBatch& nw) const {
    const std::size_t n = std::min(old.n_received(), nw.n_received());
    std::vector<double> u(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = static_cast<double>(old.receiver_hw[i] - old.sender_hw[i]);
      v[i] = static_cast<double>(nw.receiver_hw[i] - nw.sender_hw[i]);
    }
    const double cut_u = outlier_filter(u, params_.sigma_factor, params_.sigma_floor_us).back();
    const double cut_v = outlier_filter(v, params_.sigma_factor, params_.sigma_floor_us).back();
    std::vector<double> p;
    for (std::size_t i = 0; i < n; ++i)
      if (u[i] <= cut_u && v[i] <= cut_v) p.push_back(v[i] - u[i]);
    if (p.size() < 2) throw InsufficientData("fewer than 2 clean skew pairs");
    return p;
  }

  double dfixed_fallback(NodeId father) const {
    auto it = dfixed_.find(father);
    if (it != dfixed_.end() && it->second.value()) return *it->second.value();
    double sum = 0.0;
    int n = 0;
    for (const auto& [k, tr] : dfixed_)
      if (tr.value()) {
        sum += *tr.value();
        ++n;
      }
    return n ? sum / n : 0.0;
  }

  // The regression only supplies the rate: y is the father's logical time
  // minus own hardware time, or with a shared rate the father's hardware time
  // minus own, composed with the father's forwarded rate. The offset steps to
  // the newest one-way estimate.
  void lr_accept(NodeContext& ctx, const std::vector<Rx>& rx) {
    std::vector<double> theta1;
    for (const auto& r : rx) theta1.push_back(offset_theta1(r.pkt.logical_ts, r.hw));
    std::size_t best = 0;
    double theta = 0.0;
    switch (cfg_.offset_rule) {
      case OffsetRule::theta1: theta = theta1[0]; break;
      case OffsetRule::theta2: theta = offset_theta2(rx[0].pkt.logical_ts, rx[0].hw, cfg_.d_fixed_prior_us); break;
      default:
        best = static_cast<std::size_t>(std::min_element(theta1.begin(), theta1.end()) - theta1.begin());
        theta = offset_theta3(theta1, cfg_.d_fixed_prior_us);
        break;
    }
    const Rx& r = rx[best];
    if (cfg_.shared_rate && lr_father_ != r.pkt.sender_id) {
      lr_.clear();
      lr_errors_ = 0;
      lr_father_ = r.pkt.sender_id;
    }
    const double x = static_cast<double>(r.hw);
    const double y = static_cast<double>(cfg_.shared_rate ? r.pkt.hw_ts - r.hw : r.pkt.logical_ts - r.hw);
    // An outlier is dropped; more than 3 in a row means the table is stale.
    if (lr_.size() >= params_.entry_send_limit && std::abs(lr_.fit().at(x) - y) > params_.lr_throwout_us) {
      if (++lr_errors_ <= 3) return;
      lr_.clear();
    }
    lr_errors_ = 0;
    lr_.add(x, y);
    const double slope = lr_.fit().slope;
    const double phi = cfg_.shared_rate ? r.pkt.phi * (1.0 + slope) : 1.0 + slope;
    const Tick h = hw_.read(ctx.now());
    const Tick current = logical_read(lc_, h);
    // theta is own hardware minus father logical; the step lands on the
    // father's time as seen at the receive instant, carried forward.
    const Tick recv_target = r.hw - round_half_away(theta);
    const Tick target = recv_target + round_half_away(static_cast<double>(h - r.hw) * phi);
    try {
      lc_ = apply_correction(lc_, phi, target - current, h, params_.phi_band_ppm);
      if (ctx.tracing())
        ctx.trace({ctx.now(), TraceKind::correction, id_, father_, round_id_, target - current, lc_.phi, -1.0, "lr"});
    } catch (const CorrectionRejected& e) {
      lr_.clear();
      const Tick t2 = recv_target + (h - r.hw);
      lc_ = apply_correction(lc_, 1.0, t2 - current, h, params_.phi_band_ppm);
      if (ctx.tracing()) ctx.trace({ctx.now(), TraceKind::reject, id_, father_, round_id_, t2 - current, e.phi(), 0, {}});
    }
  }

  NodeId id_;
  bool reference_;
  ProtocolParams params_;
  BaselineConfig cfg_;
  HardwareClock hw_;
  LogicalClockState lc_{};
  bool alive_ = false;
  bool booted_ = false;
  NodeRole role_ = NodeRole::non_root;
  std::uint64_t round_id_ = 0;
  std::uint16_t hops_ = 0xFF;
  NodeId father_ = kNoNode;
  bool heard_ = false;
  bool synced_once_ = false;
  int own_rounds_ = 0;
  int lr_errors_ = 0;
  NodeId lr_father_ = kNoNode;
  ElectionTimer election_{};

  TimestampFifo fifo_;
  NeighborTable neighbors_;
  std::map<NodeId, double> skew_hat_;
  std::map<NodeId, DelayFixedTracker> dfixed_;
  RegressionTable lr_;
  std::map<NodeId, std::vector<Rx>> pending_;
  std::optional<Accepted> acc_;
  Tick last_forward_hw_ = 0;
  std::uint64_t last_forward_round_ = 0;
  std::uint64_t period_token_ = 1;
  std::uint64_t comp_token_ = 0;

  RngStream spacing_rng_;
  RngStream latency_rng_;
  RngStream schedule_rng_;
};

}  // namespace rdcsync
