#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "rdcsync/estimators.hpp"
#include "rdcsync/netsim.hpp"
#include "rdcsync/topology.hpp"
#include "rdcsync/types.hpp"

namespace rdcsync {

struct ErrorPair {
  double max = 0.0;
  double mean = 0.0;
};

/// |L_i - L_j| over topology edges whose endpoints are both running.
inline ErrorPair local_error(const Snapshot& s, const Topology& topo) {
  ErrorPair e;
  std::size_t n = 0;
  double sum = 0.0;
  for (const auto& [i, j] : topo.edges()) {
    if (!s.present(i) || !s.present(j)) continue;
    const double d = std::abs(s.logical[i] - s.logical[j]);
    e.max = std::max(e.max, d);
    sum += d;
    ++n;
  }
  e.mean = n ? sum / static_cast<double>(n) : 0.0;
  return e;
}

/// Over all unordered pairs of running nodes. The mean uses the sorted-order
/// identity sum_{i<j} |x_i - x_j| = sum_k (2k - n + 1) x_(k).
inline ErrorPair global_error(const Snapshot& s) {
  std::vector<double> v;
  for (double x : s.logical)
    if (!std::isnan(x)) v.push_back(x);
  ErrorPair e;
  if (v.size() < 2) return e;
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) acc += (2.0 * static_cast<double>(k) - n + 1.0) * v[k];
  e.max = v.back() - v.front();
  e.mean = acc / (n * (n - 1.0) / 2.0);
  return e;
}

struct SeriesRow {
  SimTime t = 0;
  int period_index = 0;
  double max_local = 0.0;
  double mean_local = 0.0;
  double max_global = 0.0;
  double mean_global = 0.0;
};

using ErrorSeries = std::vector<SeriesRow>;

/// Sync-period index of a probe: 1 for the period opened by the first root
/// round (and anything before it), then one per elapsed period.
inline int period_index(SimTime t, SimTime first_round, SimTime period) {
  if (t < first_round) return 1;
  return static_cast<int>((t - first_round) / period) + 1;
}

/// Final third of the run.
inline SimTime steady_state_start(SimTime horizon) { return horizon - horizon / 3; }

struct SteadyState {
  double mean_max_local = 0.0;
  double mean_mean_local = 0.0;
  double mean_max_global = 0.0;
  double std_max_global = 0.0;
  double mean_mean_global = 0.0;
  std::size_t probes = 0;
};

inline SteadyState steady_state(const ErrorSeries& series, SimTime from) {
  std::vector<double> mg;
  SteadyState s;
  for (const auto& r : series) {
    if (r.t < from) continue;
    s.mean_max_local += r.max_local;
    s.mean_mean_local += r.mean_local;
    s.mean_mean_global += r.mean_global;
    mg.push_back(r.max_global);
  }
  s.probes = mg.size();
  if (mg.empty()) return s;
  const double n = static_cast<double>(mg.size());
  s.mean_max_local /= n;
  s.mean_mean_local /= n;
  s.mean_mean_global /= n;
  s.mean_max_global = stats::mean(mg);
  s.std_max_global = stats::stddev(mg);
  return s;
}

/// First period index k such that every probe from period k on keeps
/// max_global below the threshold; nullopt when even the last probe fails.
inline std::optional<int> convergence_time(const ErrorSeries& series, double threshold_us) {
  if (series.empty()) return std::nullopt;
  if (series.back().max_global >= threshold_us) return std::nullopt;
  int k = 1;
  for (const auto& r : series)
    if (r.max_global >= threshold_us) k = r.period_index + 1;
  return k;
}

struct HopError {
  int hop = 0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t samples = 0;
};

/// Time statistics of the per-hop maximum of |L_node - L_reference|.
class HopErrorAccumulator {
 public:
  HopErrorAccumulator(std::vector<int> hop_distance, NodeId reference)
      : hop_(std::move(hop_distance)), ref_(reference) {
    const int max_hop = hop_.empty() ? 0 : *std::max_element(hop_.begin(), hop_.end());
    per_hop_.resize(static_cast<std::size_t>(std::max(max_hop, 0)) + 1);
  }

  void add(const Snapshot& s) {
    if (!s.present(ref_)) return;
    std::vector<double> worst(per_hop_.size(), -1.0);
    for (NodeId i = 0; i < hop_.size(); ++i) {
      if (hop_[i] < 0 || !s.present(i)) continue;
      auto& w = worst[static_cast<std::size_t>(hop_[i])];
      w = std::max(w, std::abs(s.logical[i] - s.logical[ref_]));
    }
    for (std::size_t h = 0; h < worst.size(); ++h)
      if (worst[h] >= 0) per_hop_[h].push_back(worst[h]);
  }

  std::vector<HopError> result() const {
    std::vector<HopError> out;
    for (std::size_t h = 0; h < per_hop_.size(); ++h)
      out.push_back({static_cast<int>(h), stats::mean(per_hop_[h]), stats::stddev(per_hop_[h]), per_hop_[h].size()});
    return out;
  }

 private:
  std::vector<int> hop_;
  NodeId ref_;
  std::vector<std::vector<double>> per_hop_;
};

inline std::vector<HopError> error_vs_hop(std::span<const Snapshot> snaps, const Topology& topo) {
  HopErrorAccumulator acc(topo.hop_distance, topo.reference);
  for (const auto& s : snaps) acc.add(s);
  return acc.result();
}

struct GrowthFit {
  double sqrt_a = 0.0, sqrt_b = 0.0;  // e = a + b sqrt(k)
  double lin_a = 0.0, lin_b = 0.0;    // e = a + b k
  double aic_sqrt = 0.0;
  double aic_linear = 0.0;
  bool sqrt_preferred() const { return aic_sqrt < aic_linear; }
};

/// Least-squares fits of error against sqrt(hop) and hop, both with an
/// intercept, compared by AIC = n ln(RSS/n) + 2p. Hop 0 is skipped.
inline GrowthFit fit_hop_growth(std::span<const HopError> curve) {
  std::vector<std::pair<double, double>> ps, pl;
  for (const auto& h : curve) {
    if (h.hop == 0 || h.samples == 0) continue;
    ps.emplace_back(std::sqrt(static_cast<double>(h.hop)), h.mean);
    pl.emplace_back(static_cast<double>(h.hop), h.mean);
  }
  if (ps.size() < 3) throw InsufficientData("growth fit needs at least 3 hops");
  auto rss = [](const std::vector<std::pair<double, double>>& pts, const LinearFit& f) {
    double r = 0.0;
    for (const auto& [x, y] : pts) r += (y - f.at(x)) * (y - f.at(x));
    return std::max(r, 1e-300);
  };
  const LinearFit fs = fit_line(ps);
  const LinearFit fl = fit_line(pl);
  const double n = static_cast<double>(ps.size());
  GrowthFit g;
  g.sqrt_b = fs.slope;
  g.sqrt_a = fs.at(0.0);
  g.lin_b = fl.slope;
  g.lin_a = fl.at(0.0);
  g.aic_sqrt = n * std::log(rss(ps, fs) / n) + 4.0;
  g.aic_linear = n * std::log(rss(pl, fl) / n) + 4.0;
  return g;
}

/// Per round: the deepest accepted path. Rounds where fewer than
/// `expected_nodes` nodes accepted are counted as incomplete and skipped.
struct PathStats {
  std::map<int, std::uint64_t> counts;  // path length -> rounds
  std::uint64_t rounds = 0;
  std::uint64_t incomplete = 0;

  void add_round(int longest) {
    ++counts[longest];
    ++rounds;
  }
  double probability(int len) const {
    auto it = counts.find(len);
    return rounds && it != counts.end() ? static_cast<double>(it->second) / static_cast<double>(rounds) : 0.0;
  }
  int mode() const {
    int best = -1;
    std::uint64_t c = 0;
    for (const auto& [len, k] : counts)
      if (k > c) {
        c = k;
        best = len;
      }
    return best;
  }
  /// Empirical CDF at len.
  double cdf(int len) const {
    std::uint64_t acc = 0;
    for (const auto& [l, k] : counts)
      if (l <= len) acc += k;
    return rounds ? static_cast<double>(acc) / static_cast<double>(rounds) : 0.0;
  }
  int min_length() const { return counts.empty() ? -1 : counts.begin()->first; }
  int max_length() const { return counts.empty() ? -1 : counts.rbegin()->first; }
};

inline PathStats flood_path_stats(std::span<const AcceptRecord> accepts, std::size_t expected_nodes) {
  std::map<std::uint64_t, std::pair<std::size_t, int>> per_round;  // round -> (accepted nodes, deepest)
  for (const auto& a : accepts) {
    auto& r = per_round[a.round];
    ++r.first;
    r.second = std::max(r.second, static_cast<int>(a.hops));
  }
  PathStats ps;
  for (const auto& [round, r] : per_round) {
    if (r.first < expected_nodes) {
      ++ps.incomplete;
      continue;
    }
    ps.add_round(r.second);
  }
  return ps;
}

/// True when every round's accepted-father relation is a tree rooted at a
/// node that did not accept (the round's origin): no node accepts twice, and
/// each father accepted the same round earlier or is the origin.
inline bool rounds_form_trees(std::span<const AcceptRecord> accepts) {
  std::map<std::uint64_t, std::map<NodeId, NodeId>> fathers;
  for (const auto& a : accepts) {
    auto& f = fathers[a.round];
    if (f.count(a.node)) return false;
    f[a.node] = a.father;
  }
  for (const auto& [round, f] : fathers) {
    std::map<NodeId, int> state;  // 1 = on stack, 2 = done
    for (const auto& [start, _] : f) {
      std::vector<NodeId> chain;
      NodeId u = start;
      while (f.count(u) && state[u] != 2) {
        if (state[u] == 1) return false;
        state[u] = 1;
        chain.push_back(u);
        u = f.at(u);
      }
      for (NodeId c : chain) state[c] = 2;
    }
  }
  return true;
}

}  // namespace rdcsync
