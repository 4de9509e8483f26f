#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "rdcsync/rng.hpp"
#include "rdcsync/types.hpp"

namespace rdcsync {

enum class TopologyKind { line, grid, rgg };

struct TopologySpec {
  TopologyKind kind = TopologyKind::line;
  std::uint32_t nodes = 25;  // line and rgg
  std::uint32_t rows = 5;    // grid
  std::uint32_t cols = 5;    // grid
  double area_m = 200.0;     // rgg: square side length
  double range_m = 80.0;     // rgg: radio range
  NodeId reference = 0;
  int max_attempts = 1000;

  bool operator==(const TopologySpec&) const = default;
};

class TopologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Topology {
  TopologyKind kind = TopologyKind::line;
  std::vector<std::vector<NodeId>> adjacency;
  std::vector<std::pair<double, double>> positions;  // rgg only
  NodeId reference = 0;
  std::vector<int> hop_distance;  // from reference, -1 when unreachable
  int diameter = 0;                // longest hop distance from the reference
  int graph_diameter = 0;          // longest shortest path between any pair
  int attempts = 1;

  std::size_t node_count() const { return adjacency.size(); }
  std::size_t edge_count() const {
    std::size_t e = 0;
    for (const auto& a : adjacency) e += a.size();
    return e / 2;
  }
  std::vector<std::pair<NodeId, NodeId>> edges() const {
    std::vector<std::pair<NodeId, NodeId>> out;
    for (NodeId i = 0; i < adjacency.size(); ++i)
      for (NodeId j : adjacency[i])
        if (i < j) out.emplace_back(i, j);
    return out;
  }
  bool adjacent(NodeId a, NodeId b) const {
    const auto& v = adjacency[a];
    return std::find(v.begin(), v.end(), b) != v.end();
  }
};

inline std::vector<int> bfs_distances(const std::vector<std::vector<NodeId>>& g, NodeId root) {
  std::vector<int> dist(g.size(), -1);
  std::queue<NodeId> todo;
  dist[root] = 0;
  todo.push(root);
  while (!todo.empty()) {
    const NodeId u = todo.front();
    todo.pop();
    for (NodeId v : g[u])
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        todo.push(v);
      }
  }
  return dist;
}

namespace detail {

inline void add_edge(std::vector<std::vector<NodeId>>& g, NodeId a, NodeId b) {
  g[a].push_back(b);
  g[b].push_back(a);
}

inline bool finish(Topology& t) {
  t.hop_distance = bfs_distances(t.adjacency, t.reference);
  if (std::any_of(t.hop_distance.begin(), t.hop_distance.end(), [](int d) { return d < 0; })) return false;
  t.diameter = *std::max_element(t.hop_distance.begin(), t.hop_distance.end());
  t.graph_diameter = 0;
  for (NodeId s = 0; s < t.adjacency.size(); ++s) {
    const auto d = bfs_distances(t.adjacency, s);
    t.graph_diameter = std::max(t.graph_diameter, *std::max_element(d.begin(), d.end()));
  }
  return true;
}

}  // namespace detail

inline Topology generate_topology(const TopologySpec& spec, std::uint64_t seed = 0) {
  Topology t;
  t.kind = spec.kind;
  t.reference = spec.reference;
  switch (spec.kind) {
    case TopologyKind::line: {
      if (spec.nodes < 1) throw TopologyError("line needs at least one node");
      t.adjacency.resize(spec.nodes);
      for (NodeId i = 1; i < spec.nodes; ++i) detail::add_edge(t.adjacency, i - 1, i);
      break;
    }
    case TopologyKind::grid: {
      if (spec.rows < 1 || spec.cols < 1) throw TopologyError("grid needs positive dimensions");
      t.adjacency.resize(static_cast<std::size_t>(spec.rows) * spec.cols);
      for (std::uint32_t r = 0; r < spec.rows; ++r)
        for (std::uint32_t c = 0; c < spec.cols; ++c) {
          const NodeId id = r * spec.cols + c;
          if (c + 1 < spec.cols) detail::add_edge(t.adjacency, id, id + 1);
          if (r + 1 < spec.rows) detail::add_edge(t.adjacency, id, id + spec.cols);
        }
      break;
    }
    case TopologyKind::rgg: {
      if (spec.nodes < 1 || spec.area_m <= 0 || spec.range_m <= 0) throw TopologyError("bad rgg parameters");
      if (spec.reference >= spec.nodes) throw TopologyError("reference outside node range");
      const double r2 = spec.range_m * spec.range_m;
      for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
        RngStream rng(seed, RngStream::stream_for(0, StreamPurpose::topology, static_cast<std::uint32_t>(attempt)));
        t.positions.assign(spec.nodes, {});
        for (auto& p : t.positions) p = {rng.uniform(0.0, spec.area_m), rng.uniform(0.0, spec.area_m)};
        t.adjacency.assign(spec.nodes, {});
        for (NodeId i = 0; i < spec.nodes; ++i)
          for (NodeId j = i + 1; j < spec.nodes; ++j) {
            const double dx = t.positions[i].first - t.positions[j].first;
            const double dy = t.positions[i].second - t.positions[j].second;
            if (dx * dx + dy * dy <= r2) detail::add_edge(t.adjacency, i, j);
          }
        t.attempts = attempt + 1;
        if (detail::finish(t)) return t;
      }
      throw TopologyError("rgg not connected after " + std::to_string(spec.max_attempts) +
                          " attempts (density too low)");
    }
  }
  if (spec.reference >= t.adjacency.size()) throw TopologyError("reference outside node range");
  if (!detail::finish(t)) throw TopologyError("topology not connected");
  return t;
}

}  // namespace rdcsync
