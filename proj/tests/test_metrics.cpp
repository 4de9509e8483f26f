#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "rdcsync/metrics.hpp"
#include "rdcsync/rng.hpp"

using namespace rdcsync;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Snapshot snap(std::vector<double> v, SimTime t = 0) { return Snapshot{t, std::move(v)}; }

ErrorPair pairwise_oracle(const std::vector<double>& v) {
  ErrorPair e;
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      if (std::isnan(v[i]) || std::isnan(v[j])) continue;
      const double d = std::abs(v[i] - v[j]);
      e.max = std::max(e.max, d);
      sum += d;
      ++n;
    }
  e.mean = n ? sum / n : 0.0;
  return e;
}

ErrorSeries series_of(const std::vector<double>& max_global) {
  ErrorSeries s;
  for (std::size_t i = 0; i < max_global.size(); ++i)
    s.push_back({static_cast<SimTime>(i), static_cast<int>(i) + 1, 0, 0, max_global[i], 0});
  return s;
}

AcceptRecord acc(NodeId node, NodeId father, std::uint64_t round, std::uint16_t hops = 1) {
  return {0, node, father, round, hops};
}

}  // namespace

TEST(LocalError, Line3Example) {
  const auto topo = generate_topology({TopologyKind::line, 3});
  const auto e = local_error(snap({0, 5, 5}), topo);
  EXPECT_DOUBLE_EQ(e.max, 5.0);
  EXPECT_DOUBLE_EQ(e.mean, 2.5);
}

TEST(LocalError, SkipsAbsentNodes) {
  const auto topo = generate_topology({TopologyKind::line, 3});
  const auto e = local_error(snap({0, kNaN, 100}), topo);
  EXPECT_DOUBLE_EQ(e.max, 0.0);
  EXPECT_DOUBLE_EQ(e.mean, 0.0);
}

TEST(GlobalError, TwoNodeExample) {
  const auto e = global_error(snap({0, 10}));
  EXPECT_DOUBLE_EQ(e.max, 10.0);
  EXPECT_DOUBLE_EQ(e.mean, 10.0);
}

TEST(GlobalError, MatchesPairwiseOracle) {
  RngStream rng(9, 9);
  for (int rep = 0; rep < 2000; ++rep) {
    const auto n = rng.uniform_int(0, 10);
    std::vector<double> v;
    for (std::int64_t i = 0; i < n; ++i)
      v.push_back(rng.bernoulli(0.1) ? kNaN : std::round(rng.uniform(-1000, 1000)));
    const auto got = global_error(snap(v));
    const auto want = pairwise_oracle(v);
    EXPECT_DOUBLE_EQ(got.max, want.max);
    EXPECT_NEAR(got.mean, want.mean, 1e-9 * (1 + want.mean));
  }
}

TEST(LocalError, GridMatchesEdgeOracle) {
  TopologySpec s;
  s.kind = TopologyKind::grid;
  s.rows = 3;
  s.cols = 4;
  const auto topo = generate_topology(s);
  RngStream rng(2, 2);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> v;
    for (int i = 0; i < 12; ++i) v.push_back(std::round(rng.uniform(-50, 50)));
    double mx = 0, sum = 0;
    int n = 0;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        const int i = r * 4 + c;
        if (c + 1 < 4) {
          mx = std::max(mx, std::abs(v[i] - v[i + 1]));
          sum += std::abs(v[i] - v[i + 1]);
          ++n;
        }
        if (r + 1 < 3) {
          mx = std::max(mx, std::abs(v[i] - v[i + 4]));
          sum += std::abs(v[i] - v[i + 4]);
          ++n;
        }
      }
    const auto e = local_error(snap(v), topo);
    EXPECT_DOUBLE_EQ(e.max, mx);
    EXPECT_NEAR(e.mean, sum / n, 1e-12);
  }
}

TEST(PeriodIndex, Examples) {
  const SimTime T = 30'000'000;
  EXPECT_EQ(period_index(5, 100, T), 1);
  EXPECT_EQ(period_index(100, 100, T), 1);
  EXPECT_EQ(period_index(100 + T - 1, 100, T), 1);
  EXPECT_EQ(period_index(100 + T, 100, T), 2);
  EXPECT_EQ(steady_state_start(10800), 7200);
}

TEST(ConvergenceTime, Examples) {
  // last violation at period 3 -> converged from period 4
  EXPECT_EQ(convergence_time(series_of({50, 40, 30, 5, 4, 6}), 10.0), 4);
  EXPECT_EQ(convergence_time(series_of({5, 4, 6}), 10.0), 1);
  // a late spike resets convergence
  EXPECT_EQ(convergence_time(series_of({50, 5, 5, 12, 5}), 10.0), 5);
  EXPECT_FALSE(convergence_time(series_of({50, 5, 12}), 10.0).has_value());
  EXPECT_FALSE(convergence_time({}, 10.0).has_value());
}

TEST(SteadyState, FinalThirdOnly) {
  ErrorSeries s;
  for (int i = 0; i < 9; ++i) s.push_back({i, i + 1, 1, 1, i < 6 ? 100.0 : 2.0 + (i - 6), 1});
  const auto st = steady_state(s, steady_state_start(9));
  EXPECT_EQ(st.probes, 3u);
  EXPECT_DOUBLE_EQ(st.mean_max_global, 3.0);
}

TEST(ErrorVsHop, ReferenceHopIsZero) {
  const auto topo = generate_topology({TopologyKind::line, 4});
  std::vector<Snapshot> ss{snap({100, 103, 98, 110}), snap({200, 201, 206, 190})};
  const auto curve = error_vs_hop(ss, topo);
  ASSERT_EQ(curve.size(), 4u);
  EXPECT_DOUBLE_EQ(curve[0].mean, 0.0);
  EXPECT_DOUBLE_EQ(curve[1].mean, 2.0);
  EXPECT_DOUBLE_EQ(curve[2].mean, 4.0);
  EXPECT_DOUBLE_EQ(curve[3].mean, 10.0);
  EXPECT_EQ(curve[3].samples, 2u);
}

TEST(ErrorVsHop, TakesWorstNodeAtEachHop) {
  TopologySpec s;
  s.kind = TopologyKind::grid;
  s.rows = 2;
  s.cols = 2;
  const auto topo = generate_topology(s);  // nodes 1 and 2 are both one hop out
  const auto curve = error_vs_hop(std::vector<Snapshot>{snap({0, 3, -7, 1})}, topo);
  EXPECT_DOUBLE_EQ(curve[1].mean, 7.0);
  EXPECT_DOUBLE_EQ(curve[2].mean, 1.0);
}

TEST(HopGrowth, PrefersTheGeneratingShape) {
  RngStream rng(4, 4);
  std::vector<HopError> sq, lin;
  for (int k = 0; k <= 24; ++k) {
    sq.push_back({k, 1.0 + 3.0 * std::sqrt(k) + rng.normal(0, 0.1), 0, 10});
    lin.push_back({k, 1.0 + 0.5 * k + rng.normal(0, 0.1), 0, 10});
  }
  const auto gs = fit_hop_growth(sq);
  EXPECT_TRUE(gs.sqrt_preferred());
  EXPECT_NEAR(gs.sqrt_b, 3.0, 0.1);
  const auto gl = fit_hop_growth(lin);
  EXPECT_FALSE(gl.sqrt_preferred());
  EXPECT_NEAR(gl.lin_b, 0.5, 0.02);
  EXPECT_THROW(fit_hop_growth(std::vector<HopError>{{0, 0, 0, 1}, {1, 1, 0, 1}}), InsufficientData);
}

TEST(PathStats, ModeCdfProbability) {
  PathStats p;
  for (int x : {3, 3, 3, 4, 5}) p.add_round(x);
  EXPECT_EQ(p.mode(), 3);
  EXPECT_DOUBLE_EQ(p.probability(3), 0.6);
  EXPECT_DOUBLE_EQ(p.probability(7), 0.0);
  EXPECT_DOUBLE_EQ(p.cdf(4), 0.8);
  EXPECT_EQ(p.min_length(), 3);
  EXPECT_EQ(p.max_length(), 5);
}

TEST(PathStats, FromAcceptsSkipsIncompleteRounds) {
  std::vector<AcceptRecord> a{acc(1, 0, 7, 1), acc(2, 1, 7, 2), acc(1, 0, 8, 1)};
  const auto p = flood_path_stats(a, 2);
  EXPECT_EQ(p.rounds, 1u);
  EXPECT_EQ(p.incomplete, 1u);
  EXPECT_DOUBLE_EQ(p.probability(2), 1.0);
}

TEST(Trees, AcceptsChainsAndRejectsCycles) {
  EXPECT_TRUE(rounds_form_trees(std::vector<AcceptRecord>{acc(1, 0, 1), acc(2, 1, 1), acc(3, 1, 1)}));
  EXPECT_FALSE(rounds_form_trees(std::vector<AcceptRecord>{acc(1, 2, 1), acc(2, 1, 1)}));
  EXPECT_FALSE(rounds_form_trees(std::vector<AcceptRecord>{acc(1, 3, 1), acc(2, 1, 1), acc(3, 2, 1)}));
  EXPECT_FALSE(rounds_form_trees(std::vector<AcceptRecord>{acc(1, 0, 1), acc(1, 0, 1)}));
  // a node may accept once per round
  EXPECT_TRUE(rounds_form_trees(std::vector<AcceptRecord>{acc(1, 0, 1), acc(1, 0, 2)}));
}
