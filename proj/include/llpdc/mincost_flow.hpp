#pragma once

// Exact minimum-cost maximum-flow over integer capacities and integer costs.
//
// Successive shortest augmenting paths with node potentials. The initial
// potentials come from a label-correcting pass (so negative arc costs are
// fine as long as there is no negative cycle); every later shortest-path
// search is Dijkstra on potential-reduced, non-negative costs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace llpdc {

using NodeId = std::size_t;
using Capacity = std::int64_t;
using Cost = std::int64_t;

struct FlowEdge {
  NodeId from = 0;
  NodeId to = 0;
  Capacity capacity = 0;
  Cost unit_cost = 0;
};

struct FlowNetwork {
  std::size_t node_count = 0;
  std::vector<FlowEdge> edges;
  NodeId source = 0;
  NodeId sink = 0;

  /// Appends an edge and returns its index (insertion order is the tie-break order).
  std::size_t add_edge(NodeId from, NodeId to, Capacity capacity, Cost unit_cost) {
    edges.push_back(FlowEdge{from, to, capacity, unit_cost});
    return edges.size() - 1;
  }
};

struct FlowResult {
  std::vector<Capacity> flow_per_edge;
  Capacity total_flow = 0;
  Cost total_cost = 0;
};

class InvalidNetwork : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

// Bound on |sum cap*|cost|| plus the potential range. Leaves headroom for
// the additions done while relaxing reduced costs.
inline constexpr Cost kCostMagnitudeLimit = Cost{1} << 61;

}  // namespace detail

/// Returns std::nullopt when every FlowNetwork invariant holds, otherwise a
/// description of the first violated one. Never mutates the input.
inline std::optional<std::string> validate_network(const FlowNetwork& network) {
  if (network.node_count == 0) return "empty network";
  if (network.source >= network.node_count || network.sink >= network.node_count)
    return "node id out of range";
  if (network.source == network.sink) return "source equals sink";

  // __int128 so the guard itself cannot wrap.
  __int128 magnitude = 0;
  __int128 potential_span = 0;
  for (std::size_t e = 0; e < network.edges.size(); ++e) {
    const FlowEdge& edge = network.edges[e];
    if (edge.from >= network.node_count || edge.to >= network.node_count)
      return "node id out of range";
    if (edge.capacity < 0) return "negative capacity";
    if (edge.from == edge.to) return "self-loop";
    const __int128 abs_cost = edge.unit_cost < 0 ? -static_cast<__int128>(edge.unit_cost)
                                                 : static_cast<__int128>(edge.unit_cost);
    magnitude += static_cast<__int128>(edge.capacity) * abs_cost;
    potential_span += abs_cost;
    if (magnitude > detail::kCostMagnitudeLimit || potential_span > detail::kCostMagnitudeLimit)
      return "cost magnitude overflow";
  }
  return std::nullopt;
}

namespace detail {

struct ResidualArc {
  NodeId to;
  std::size_t reverse;  // index of the paired arc in adjacency[to]
  Capacity residual;
  Cost cost;
  std::size_t edge;  // index into FlowNetwork::edges
  bool forward;
};

class ResidualGraph {
 public:
  explicit ResidualGraph(const FlowNetwork& network) : adjacency_(network.node_count) {
    for (std::size_t e = 0; e < network.edges.size(); ++e) {
      const FlowEdge& edge = network.edges[e];
      auto& out = adjacency_[edge.from];
      auto& in = adjacency_[edge.to];
      out.push_back(ResidualArc{edge.to, in.size(), edge.capacity, edge.unit_cost, e, true});
      in.push_back(ResidualArc{edge.from, out.size() - 1, 0, -edge.unit_cost, e, false});
    }
  }

  std::size_t size() const { return adjacency_.size(); }
  std::vector<ResidualArc>& arcs(NodeId v) { return adjacency_[v]; }
  const std::vector<ResidualArc>& arcs(NodeId v) const { return adjacency_[v]; }

 private:
  std::vector<std::vector<ResidualArc>> adjacency_;
};

inline constexpr Cost kUnreached = std::numeric_limits<Cost>::max();

// Label-correcting shortest paths from a virtual root joined to every node by
// a zero-cost arc; yields feasible potentials for the whole residual graph.
inline std::vector<Cost> initial_potentials(const ResidualGraph& graph) {
  const std::size_t n = graph.size();
  std::vector<Cost> dist(n, 0);
  std::vector<std::size_t> relax_count(n, 0);
  std::vector<char> queued(n, 1);
  std::queue<NodeId> pending;
  for (NodeId v = 0; v < n; ++v) pending.push(v);

  while (!pending.empty()) {
    const NodeId u = pending.front();
    pending.pop();
    queued[u] = 0;
    for (const ResidualArc& arc : graph.arcs(u)) {
      if (arc.residual <= 0) continue;
      if (dist[u] + arc.cost < dist[arc.to]) {
        dist[arc.to] = dist[u] + arc.cost;
        if (++relax_count[arc.to] > n) throw InvalidNetwork("negative-cost cycle");
        if (!queued[arc.to]) {
          queued[arc.to] = 1;
          pending.push(arc.to);
        }
      }
    }
  }
  return dist;
}

}  // namespace detail

/// Solves min-cost max-flow. Throws InvalidNetwork if validate_network fails
/// or a negative-cost cycle is found. An unreachable sink yields zero flow.
///
/// Determinism: Dijkstra pops nodes by (distance, node id) and relaxes arcs
/// in edge-insertion order with a strict comparison, so among equal-length
/// shortest paths the first one discovered in that scan order wins.
inline FlowResult solve_mcmf(const FlowNetwork& network) {
  if (auto error = validate_network(network)) throw InvalidNetwork(*error);

  detail::ResidualGraph graph(network);
  const std::size_t n = graph.size();
  std::vector<Cost> potential = detail::initial_potentials(graph);

  std::vector<Cost> dist(n);
  std::vector<char> settled(n);
  std::vector<std::pair<NodeId, std::size_t>> parent(n);  // (node, arc index)
  using Entry = std::pair<Cost, NodeId>;

  Capacity total_flow = 0;
  for (;;) {
    std::fill(dist.begin(), dist.end(), detail::kUnreached);
    std::fill(settled.begin(), settled.end(), 0);
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> frontier;
    std::vector<NodeId> settled_order;
    dist[network.source] = 0;
    frontier.emplace(0, network.source);

    while (!frontier.empty()) {
      const auto [d, u] = frontier.top();
      frontier.pop();
      if (settled[u]) continue;
      settled[u] = 1;
      settled_order.push_back(u);
      if (u == network.sink) break;
      const auto& arcs = graph.arcs(u);
      for (std::size_t a = 0; a < arcs.size(); ++a) {
        const auto& arc = arcs[a];
        if (arc.residual <= 0 || settled[arc.to]) continue;
        const Cost reduced = arc.cost + potential[u] - potential[arc.to];
        if (d + reduced < dist[arc.to]) {
          dist[arc.to] = d + reduced;
          parent[arc.to] = {u, a};
          frontier.emplace(dist[arc.to], arc.to);
        }
      }
    }
    if (!settled[network.sink]) break;

    // Nodes settled before the sink move by their distance, everything else
    // by the sink distance; this keeps all residual reduced costs >= 0.
    const Cost sink_dist = dist[network.sink];
    std::vector<char> moved(n, 0);
    for (NodeId v : settled_order) {
      potential[v] += dist[v];
      moved[v] = 1;
    }
    for (NodeId v = 0; v < n; ++v)
      if (!moved[v]) potential[v] += sink_dist;

    Capacity bottleneck = std::numeric_limits<Capacity>::max();
    for (NodeId v = network.sink; v != network.source;) {
      const auto [u, a] = parent[v];
      bottleneck = std::min(bottleneck, graph.arcs(u)[a].residual);
      v = u;
    }
    for (NodeId v = network.sink; v != network.source;) {
      const auto [u, a] = parent[v];
      auto& arc = graph.arcs(u)[a];
      arc.residual -= bottleneck;
      graph.arcs(arc.to)[arc.reverse].residual += bottleneck;
      v = u;
    }
    total_flow += bottleneck;
  }

  FlowResult result;
  result.flow_per_edge.assign(network.edges.size(), 0);
  for (NodeId v = 0; v < n; ++v)
    for (const auto& arc : graph.arcs(v))
      if (!arc.forward) result.flow_per_edge[arc.edge] = arc.residual;
  result.total_flow = total_flow;
  for (std::size_t e = 0; e < network.edges.size(); ++e)
    result.total_cost += result.flow_per_edge[e] * network.edges[e].unit_cost;
  return result;
}

}  // namespace llpdc
