#pragma once

#include <cstdint>
#include <limits>
#include <queue>
#include <utility>
#include <vector>

#include "rdcsync/baselines.hpp"
#include "rdcsync/metrics.hpp"
#include "rdcsync/rng.hpp"
#include "rdcsync/topology.hpp"
#include "rdcsync/types.hpp"

namespace rdcsync {

/// Path-only flooding model: every node forwards a round once, a random wait
/// after it first hears it, and a neighbor hears a forward unless all of its
/// packets are lost. Clocks are not modelled.
struct FloodSimConfig {
  Flooding flooding = Flooding::rapid;
  double plr = 0.0;
  int packets_per_broadcast = 1;
  SimTime link_delay_us = 3;

  LatencyRange wait() const { return flooding == Flooding::rapid ? kRapidLatency : kSlowLatency; }
};

class FloodSim {
 public:
  FloodSim(const Topology& topo, FloodSimConfig cfg, std::uint64_t seed) : topo_(topo), cfg_(cfg) {
    const auto n = static_cast<NodeId>(topo.node_count());
    for (NodeId i = 0; i < n; ++i) {
      wait_rng_.emplace_back(seed, RngStream::stream_for(i, StreamPurpose::latency));
      loss_rng_.emplace_back(seed, RngStream::stream_for(i, StreamPurpose::link_loss));
    }
    arrival_.resize(n);
    hops_.resize(n);
    father_.resize(n);
    wait_.resize(n);
  }

  /// One round from the reference; returns the deepest accepted path, or -1
  /// when some node never heard the round.
  int run_round() {
    const auto n = topo_.node_count();
    const LatencyRange w = cfg_.wait();
    // waits are drawn for every node every round so runs with different
    // loss rates see identical waits
    for (std::size_t i = 0; i < n; ++i) wait_[i] = draw_latency(wait_rng_[i], w);
    constexpr SimTime kNever = std::numeric_limits<SimTime>::max();
    std::fill(arrival_.begin(), arrival_.end(), kNever);
    std::fill(father_.begin(), father_.end(), kNoNode);
    std::fill(hops_.begin(), hops_.end(), -1);
    using Item = std::pair<SimTime, NodeId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    const NodeId ref = topo_.reference;
    arrival_[ref] = 0;
    hops_[ref] = 0;
    pq.push({0, ref});
    std::vector<char> done(n, 0);
    int deepest = 0;
    std::size_t reached = 0;
    while (!pq.empty()) {
      const auto [t, u] = pq.top();
      pq.pop();
      if (done[u]) continue;
      done[u] = 1;
      ++reached;
      deepest = std::max(deepest, hops_[u]);
      const SimTime fwd = u == ref ? t : t + wait_[u];
      for (NodeId v : topo_.adjacency[u]) {
        if (done[v]) continue;
        bool heard = false;
        for (int k = 0; k < cfg_.packets_per_broadcast; ++k)
          if (!loss_rng_[u].bernoulli(cfg_.plr)) heard = true;
        if (!heard) continue;
        const SimTime at = fwd + cfg_.link_delay_us;
        if (at < arrival_[v]) {
          arrival_[v] = at;
          father_[v] = u;
          hops_[v] = hops_[u] + 1;
          pq.push({at, v});
        }
      }
    }
    return reached == n ? deepest : -1;
  }

  PathStats run(std::uint64_t rounds) {
    PathStats ps;
    for (std::uint64_t r = 0; r < rounds; ++r) {
      const int d = run_round();
      if (d < 0)
        ++ps.incomplete;
      else
        ps.add_round(d);
    }
    return ps;
  }

  const std::vector<int>& hops() const { return hops_; }
  const std::vector<NodeId>& fathers() const { return father_; }

 private:
  const Topology& topo_;
  FloodSimConfig cfg_;
  std::vector<RngStream> wait_rng_;
  std::vector<RngStream> loss_rng_;
  std::vector<SimTime> arrival_;
  std::vector<int> hops_;
  std::vector<NodeId> father_;
  std::vector<SimTime> wait_;
};

}  // namespace rdcsync
