#pragma once

// Synthetic stand-ins for the public networks when the edge lists are not
// available locally.

#include <algorithm>
#include <set>
#include <utility>
#include <vector>

#include "keynode/graph.hpp"

namespace keynode::surrogate {

/// Undirected graph with Citeseer's node, edge and weak-component counts
/// (3327 nodes, 4536 edges, 438 components, giant of 2120). The giant is a
/// preferential-attachment tree plus triadic-closure edges; the small
/// components are random recursive trees with random sizes.
inline Graph citation_like(std::uint64_t seed) {
  const std::size_t n = 3327, giant = 2120, comps = 438, edges = 4536;
  Xoshiro256 rng(seed);
  std::vector<Arc> arcs;
  std::vector<std::vector<NodeId>> adj(n);
  auto add = [&](NodeId u, NodeId v) {
    arcs.emplace_back(u, v);
    adj[u].push_back(v);
    adj[v].push_back(u);
  };

  // Endpoint list: picking uniformly from it is degree-proportional.
  std::vector<NodeId> ends{0};
  for (NodeId v = 1; v < giant; ++v) {
    const NodeId t = ends[rng.below(ends.size())];
    add(v, t);
    ends.push_back(t);
    ends.push_back(v);
  }

  const std::size_t rest = n - giant;
  std::set<std::size_t> cuts;
  while (cuts.size() < comps - 2) cuts.insert(1 + rng.below(rest - 1));
  cuts.insert(rest);
  std::size_t prev = 0;
  NodeId base = static_cast<NodeId>(giant);
  for (std::size_t c : cuts) {
    const std::size_t size = c - prev;
    prev = c;
    for (std::size_t i = 1; i < size; ++i)
      add(static_cast<NodeId>(base + i), static_cast<NodeId>(base + rng.below(i)));
    base += static_cast<NodeId>(size);
  }

  std::set<std::pair<NodeId, NodeId>> have;
  for (auto [u, v] : arcs) have.insert(std::minmax(u, v));
  while (arcs.size() < edges) {
    const NodeId u = static_cast<NodeId>(rng.below(giant));
    const NodeId w = adj[u][rng.below(adj[u].size())];
    const NodeId x = adj[w][rng.below(adj[w].size())];
    if (x == u || !have.insert(std::minmax(u, x)).second) continue;
    add(u, x);
  }
  return Graph::from_arcs(n, std::move(arcs), false);
}

/// Directed scale-free graph with reciprocal ties, transposed so that hubs
/// have high out-degree (they are followed, and spread to followers).
inline Graph social_like(std::uint64_t seed) {
  return generate_synthetic(SyntheticModel::barabasi_albert, 2000, 5, seed, {.directed = true, .reciprocity = 0.5})
      .transposed();
}

}  // namespace keynode::surrogate
