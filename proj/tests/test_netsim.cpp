#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "rdcsync/experiment.hpp"
#include "rdcsync/floodsim.hpp"
#include "rdcsync/netsim.hpp"
#include "rdcsync/topology.hpp"

using namespace rdcsync;

namespace {

SimConfig quiet_config(const Topology& topo, ProtocolKind kind = ProtocolKind::none) {
  SimConfig c;
  c.topology = topo;
  c.protocol.kind = kind;
  return c;
}

std::string trace_text(const Simulator& sim) {
  std::ostringstream os;
  write_trace_ndjson(os, sim.trace_log());
  return os.str();
}

}  // namespace

TEST(Topology, LineDiameter) {
  const auto t = generate_topology({TopologyKind::line, 25});
  EXPECT_EQ(t.node_count(), 25u);
  EXPECT_EQ(t.edge_count(), 24u);
  EXPECT_EQ(t.diameter, 24);
  EXPECT_EQ(t.graph_diameter, 24);
  for (NodeId i = 0; i < 25; ++i) EXPECT_EQ(t.hop_distance[i], static_cast<int>(i));
}

TEST(Topology, GridFourNeighbor) {
  TopologySpec s;
  s.kind = TopologyKind::grid;
  s.rows = 5;
  s.cols = 5;
  const auto t = generate_topology(s);
  EXPECT_EQ(t.node_count(), 25u);
  EXPECT_EQ(t.edge_count(), 40u);
  EXPECT_EQ(t.diameter, 8);
  EXPECT_TRUE(t.adjacent(0, 1));
  EXPECT_TRUE(t.adjacent(0, 5));
  EXPECT_FALSE(t.adjacent(0, 6));
  for (NodeId i = 0; i < 25; ++i) EXPECT_EQ(t.hop_distance[i], static_cast<int>(i / 5 + i % 5));
}

TEST(Topology, RggConnectedAndRecorded) {
  TopologySpec s;
  s.kind = TopologyKind::rgg;
  s.nodes = 300;
  s.area_m = 200;
  s.range_m = 80;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto t = generate_topology(s, seed);
    EXPECT_EQ(t.node_count(), 300u);
    EXPECT_GE(t.diameter, 2);
    EXPECT_LE(t.diameter, 9);
    EXPECT_GE(t.graph_diameter, t.diameter);
    // brute-force check of the unit-disk rule
    for (NodeId i = 0; i < 300; i += 37)
      for (NodeId j = 0; j < 300; ++j) {
        if (i == j) continue;
        const double dx = t.positions[i].first - t.positions[j].first;
        const double dy = t.positions[i].second - t.positions[j].second;
        EXPECT_EQ(t.adjacent(i, j), std::sqrt(dx * dx + dy * dy) <= 80.0);
      }
    const auto again = generate_topology(s, seed);
    EXPECT_EQ(again.adjacency, t.adjacency);
  }
}

TEST(Topology, RggTooSparseFails) {
  TopologySpec s;
  s.kind = TopologyKind::rgg;
  s.nodes = 50;
  s.area_m = 1000;
  s.range_m = 10;
  s.max_attempts = 5;
  EXPECT_THROW(generate_topology(s, 1), TopologyError);
}

TEST(SampleDelay, Deterministic) {
  LinkModel l{DelayDecomposition{3.0, 0.0, 0.0, 5, 50}, 0.0};
  RngStream rng(1, 1);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_delay(l, rng), 3);
}

TEST(SampleDelay, MeanMatchesFixedDelay) {
  LinkModel l{DelayDecomposition{3.0, 0.5, 0.0, 5, 50}, 0.0};
  RngStream rng(2, 2);
  const int n = 100000;
  double sum = 0;
  for (int i = 0; i < n; ++i) sum += static_cast<double>(sample_delay(l, rng));
  // integer rounding adds a uniform(-1/2,1/2) term to the Gaussian
  const double sd = std::sqrt(0.25 + 1.0 / 12.0);
  EXPECT_NEAR(sum / n, 3.0, 3 * sd / std::sqrt(n));
}

TEST(SampleDelay, UncertainFraction) {
  LinkModel l{DelayDecomposition{3.0, 0.5, 0.01, 5, 50}, 0.0};
  RngStream rng(3, 3);
  const int n = 100000;
  int big = 0;
  for (int i = 0; i < n; ++i) big += sample_delay(l, rng) > 3.0 + 1.5 + 5.0;
  EXPECT_NEAR(static_cast<double>(big) / n, 0.01, 3 * std::sqrt(0.01 * 0.99 / n));
}

TEST(SampleDelay, NeverNegative) {
  LinkModel l{DelayDecomposition{0.5, 2.0, 0.0, 5, 50}, 0.0};
  RngStream rng(4, 4);
  for (int i = 0; i < 100000; ++i) EXPECT_GE(sample_delay(l, rng), 0);
}

TEST(Broadcast, DeliveryCounts) {
  const auto topo = generate_topology({TopologyKind::line, 3});
  auto burst = [] {
    std::vector<std::pair<SimTime, SyncPacket>> b;
    for (int k = 0; k < 5; ++k) b.emplace_back(2 * k, SyncPacket{});
    return b;
  };
  {
    Simulator sim(quiet_config(topo), 1);
    sim.transmit(1, burst());
    sim.run(kMicrosPerSecond);
    EXPECT_EQ(sim.deliveries(), 10u);  // N x deg
  }
  {
    auto c = quiet_config(topo);
    c.link.plr = 1.0;
    Simulator sim(c, 1);
    sim.transmit(1, burst());
    sim.run(kMicrosPerSecond);
    EXPECT_EQ(sim.deliveries(), 0u);
  }
  {
    auto c = quiet_config(topo);
    c.link.plr = 0.1;
    Simulator sim(c, 1);
    const int rounds = 10000;
    for (int r = 0; r < rounds; ++r) sim.transmit(0, burst());
    sim.run(kMicrosPerSecond);
    const double expect = rounds * 5 * 0.9;
    EXPECT_NEAR(static_cast<double>(sim.deliveries()), expect, 4 * std::sqrt(rounds * 5 * 0.09));
  }
}

TEST(Broadcast, FullBatchLossIsRare) {
  // two nodes: a round is incomplete only if every packet of the burst is lost
  const auto topo = generate_topology({TopologyKind::line, 2});
  FloodSimConfig fc;
  fc.plr = 0.1;
  fc.packets_per_broadcast = 5;
  const auto five = FloodSim(topo, fc, 1).run(10000);
  EXPECT_LE(five.incomplete, 2u);  // expected 0.1 rounds
  fc.packets_per_broadcast = 1;
  const auto one = FloodSim(topo, fc, 1).run(10000);
  EXPECT_NEAR(static_cast<double>(one.incomplete), 1000.0, 4 * std::sqrt(10000 * 0.09));
}

TEST(Run, EmptyProtocolOnlyProbes) {
  const auto topo = generate_topology({TopologyKind::line, 4});
  auto c = quiet_config(topo);
  c.trace = true;
  Simulator sim(c, 3);
  int probes = 0;
  sim.on_probe([&](const Snapshot&) { ++probes; });
  const auto st = sim.run(600 * kMicrosPerSecond);
  EXPECT_EQ(probes, 60);
  EXPECT_EQ(sim.deliveries(), 0u);
  EXPECT_FALSE(sim.first_transmission().has_value());
  for (const auto& e : sim.trace_log()) EXPECT_TRUE(e.kind == TraceKind::boot || e.kind == TraceKind::probe);
  EXPECT_FALSE(st.starved);
}

TEST(Run, StarvationEndsCleanly) {
  const auto topo = generate_topology({TopologyKind::line, 3});
  auto c = quiet_config(topo);
  c.probe_interval = 0;
  c.trace = true;
  Simulator sim(c, 3);
  const auto st = sim.run(3600 * kMicrosPerSecond);
  EXPECT_TRUE(st.starved);
  EXPECT_EQ(sim.trace_log().back().kind, TraceKind::starve);
}

TEST(Run, IdenticalSeedsIdenticalTraces) {
  const auto topo = generate_topology({TopologyKind::line, 8});
  auto c = quiet_config(topo, ProtocolKind::rdc_rmts);
  c.trace = true;
  c.link.plr = 0.05;
  Simulator a(c, 77), b(c, 77), d(c, 78);
  a.run(900 * kMicrosPerSecond);
  b.run(900 * kMicrosPerSecond);
  d.run(900 * kMicrosPerSecond);
  EXPECT_FALSE(trace_text(a).empty());
  EXPECT_EQ(trace_text(a), trace_text(b));
  EXPECT_NE(trace_text(a), trace_text(d));
}

TEST(Run, CausalOrderAndRapidForwardLatency) {
  const auto topo = generate_topology({TopologyKind::line, 6});
  auto c = quiet_config(topo, ProtocolKind::rdc_rmts);
  c.trace = true;
  Simulator sim(c, 12);
  sim.run(1200 * kMicrosPerSecond);
  SimTime prev = 0;
  std::map<std::pair<NodeId, std::uint64_t>, SimTime> accepted_at;
  int checked = 0;
  for (const auto& e : sim.trace_log()) {
    EXPECT_GE(e.t, prev);
    prev = e.t;
    if (e.kind == TraceKind::accept) accepted_at[{e.node, e.round}] = e.t;
    if (e.kind == TraceKind::correction) {
      auto it = accepted_at.find({e.node, e.round});
      ASSERT_NE(it, accepted_at.end());
      EXPECT_GE(e.t - it->second, 10'000);
      EXPECT_LE(e.t - it->second, 50'000);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Probe, PerfectSyncAllEqual) {
  const auto topo = generate_topology({TopologyKind::line, 5});
  auto c = quiet_config(topo);
  c.drift.rate_spread_ppm = 0;
  c.max_initial_offset = 0;
  Simulator sim(c, 1);
  bool any = false;
  sim.on_probe([&](const Snapshot& s) {
    if (s.t < 30 * kMicrosPerSecond) return;  // all booted by then
    any = true;
    for (double v : s.logical) EXPECT_EQ(v, static_cast<double>(s.t));
    EXPECT_EQ(global_error(s).max, 0.0);
  });
  sim.run(300 * kMicrosPerSecond);
  EXPECT_TRUE(any);
}

TEST(Probe, MeasurementJitterStatistics) {
  const auto topo = generate_topology({TopologyKind::line, 4});
  auto c = quiet_config(topo);
  c.measurement_jitter = true;
  Simulator sim(c, 1);
  sim.run(60 * kMicrosPerSecond);
  const SimTime t = 60 * kMicrosPerSecond;
  const int n = 20000;
  const double base = static_cast<double>(sim.node(2).logical_at(t));
  std::vector<double> err;
  for (int i = 0; i < n; ++i) err.push_back(sim.probe(t).logical[2] - base);
  EXPECT_NEAR(stats::mean(err), 0.07, 0.0005);
  EXPECT_NEAR(stats::stddev(err), 0.0033, 0.0002);
}

TEST(Probe, DefaultInterval) {
  EXPECT_EQ(SimConfig{}.probe_interval, 10 * kMicrosPerSecond);
  EXPECT_DOUBLE_EQ(ExperimentConfig{}.probe_interval_s, 10.0);
}

TEST(FloodPaths, LongestPathAtLeastHopDistance) {
  TopologySpec s;
  s.kind = TopologyKind::rgg;
  s.nodes = 300;
  s.area_m = 200;
  s.range_m = 80;
  const auto topo = generate_topology(s, 1);
  for (auto fl : {Flooding::rapid, Flooding::slow}) {
    FloodSimConfig fc;
    fc.flooding = fl;
    fc.plr = 0.1;
    FloodSim sim(topo, fc, 3);
    for (int r = 0; r < 200; ++r) {
      const int d = sim.run_round();
      if (d < 0) continue;
      EXPECT_GE(d, topo.diameter);
      for (NodeId i = 0; i < topo.node_count(); ++i) {
        EXPECT_GE(sim.hops()[i], topo.hop_distance[i]);
        if (i != topo.reference) EXPECT_TRUE(topo.adjacent(i, sim.fathers()[i]));
      }
    }
  }
}

TEST(FloodPaths, LineRapidAlwaysFullLength) {
  const auto topo = generate_topology({TopologyKind::line, 25});
  FloodSimConfig fc;
  const auto ps = FloodSim(topo, fc, 1).run(1000);
  EXPECT_EQ(ps.rounds, 1000u);
  EXPECT_DOUBLE_EQ(ps.probability(24), 1.0);
}

TEST(FloodPaths, LineSimulatorPathAlways24) {
  ExperimentConfig c;
  c.horizon_s = 1800;
  const auto r = run_trial(c, 5);
  ASSERT_TRUE(r.ok) << r.error;
  EXPECT_GT(r.flood_paths.rounds, 50u);
  EXPECT_DOUBLE_EQ(r.flood_paths.probability(24), 1.0);
  EXPECT_TRUE(r.trees_ok);
}

TEST(Performance, LargeNetworkHourUnderBudget) {
  ExperimentConfig c;
  c.topology.kind = TopologyKind::rgg;
  c.topology.nodes = 300;
  c.horizon_s = 3600;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_trial(c, 1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_TRUE(r.ok) << r.error;
  EXPECT_LT(secs, 60.0);
  RecordProperty("wall_seconds", std::to_string(secs));
}

TEST(FloodPaths, SparseRggRapidModeNearDiameterPlusTwo) {
  // 300 nodes at 26 m range: reference eccentricity 9 for this seed
  TopologySpec s;
  s.kind = TopologyKind::rgg;
  s.nodes = 300;
  s.area_m = 200;
  s.range_m = 26;
  const auto topo = generate_topology(s, 3);
  ASSERT_EQ(topo.diameter, 9);
  FloodSimConfig rapid;
  FloodSimConfig slow;
  slow.flooding = Flooding::slow;
  const auto a = FloodSim(topo, rapid, 3).run(2000);
  const auto b = FloodSim(topo, slow, 3).run(2000);
  EXPECT_NEAR(a.mode(), topo.diameter + 2, 1);
  EXPECT_GT(b.mode(), a.mode());
  EXPECT_GE(a.min_length(), topo.diameter);
}

TEST(LineRuns, RdcSteadyStateBands) {
  ExperimentConfig c;
  std::vector<double> local, global;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = run_trial(c, seed);
    ASSERT_TRUE(r.ok) << r.error;
    local.push_back(r.steady.mean_max_local);
    global.push_back(r.steady.mean_max_global);
  }
  EXPECT_GE(stats::mean(local), 3.0);
  EXPECT_LE(stats::mean(local), 6.0);
  EXPECT_GE(stats::mean(global), 6.0);
  EXPECT_LE(stats::mean(global), 12.0);
}

TEST(LineRuns, ErrorGrowsWithHopForEveryProtocol) {
  for (auto k : {ProtocolKind::ftsp, ProtocolKind::fcsa_lite, ProtocolKind::pulsesync, ProtocolKind::rmts,
                 ProtocolKind::rdc_rmts}) {
    ExperimentConfig c;
    c.protocol = k;
    std::vector<double> mean(25, 0.0);
    const int trials = 5;
    for (std::uint64_t seed = 1; seed <= trials; ++seed) {
      const auto r = run_trial(c, seed);
      ASSERT_TRUE(r.ok) << r.error;
      ASSERT_EQ(r.hop_curve.size(), 25u);
      for (int h = 0; h < 25; ++h) mean[h] += r.hop_curve[h].mean / trials;
    }
    EXPECT_DOUBLE_EQ(mean[0], 0.0);
    std::vector<std::pair<double, double>> pts;
    for (int h = 0; h < 25; ++h) pts.emplace_back(h, mean[h]);
    EXPECT_GT(fit_line(pts).slope, 0.0) << to_string(k);
    // trend: each block of 6 hops sits above the previous one
    for (int b = 1; b < 4; ++b) {
      double lo = 0, hi = 0;
      for (int h = 1; h <= 6; ++h) {
        lo += mean[(b - 1) * 6 + h];
        hi += mean[b * 6 + h];
      }
      EXPECT_GT(hi, lo) << to_string(k) << " block " << b;
    }
  }
}
