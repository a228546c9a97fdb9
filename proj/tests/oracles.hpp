#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. Deliberately independent of the library's BFS code.

#include <limits>
#include <vector>

#include "keynode/graph.hpp"

namespace keynode::oracle {

constexpr int kInf = std::numeric_limits<int>::max() / 4;

// All-pairs distances and shortest-path counts by Floyd–Warshall.
struct AllPairs {
  std::size_t n = 0;
  std::vector<std::vector<int>> d;
  std::vector<std::vector<double>> sigma;
};

inline AllPairs floyd(const Graph& g) {
  AllPairs ap;
  const std::size_t n = g.node_count();
  ap.n = n;
  ap.d.assign(n, std::vector<int>(n, kInf));
  for (NodeId u = 0; u < n; ++u) {
    ap.d[u][u] = 0;
    for (NodeId v : g.out_neighbors(u)) ap.d[u][v] = 1;
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (ap.d[i][k] + ap.d[k][j] < ap.d[i][j]) ap.d[i][j] = ap.d[i][k] + ap.d[k][j];
  // sigma[s][t]: number of shortest s->t paths, built up by distance.
  ap.sigma.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t s = 0; s < n; ++s) {
    ap.sigma[s][s] = 1.0;
    for (int len = 1; len < static_cast<int>(n); ++len)
      for (std::size_t t = 0; t < n; ++t) {
        if (ap.d[s][t] != len) continue;
        for (NodeId p : g.in_neighbors(static_cast<NodeId>(t)))
          if (ap.d[s][p] == len - 1) ap.sigma[s][t] += ap.sigma[s][p];
      }
  }
  return ap;
}

inline double scale_of(std::size_t n) {
  return n > 2 ? 1.0 / (static_cast<double>(n - 1) * static_cast<double>(n - 2)) : 1.0;
}

// Pair-dependency sum: v lies on a shortest s-t path iff d(s,v) + d(v,t) = d(s,t).
inline std::vector<double> betweenness_oracle(const Graph& g) {
  const auto ap = floyd(g);
  const std::size_t n = ap.n;
  std::vector<double> bc(n, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t t = 0; t < n; ++t) {
      if (s == t || ap.d[s][t] >= kInf) continue;
      for (std::size_t v = 0; v < n; ++v) {
        if (v == s || v == t || ap.d[s][v] >= kInf || ap.d[v][t] >= kInf) continue;
        if (ap.d[s][v] + ap.d[v][t] == ap.d[s][t])
          bc[v] += ap.sigma[s][v] * ap.sigma[v][t] / ap.sigma[s][t];
      }
    }
  for (double& b : bc) b *= scale_of(n);
  return bc;
}

// Load: for every ordered pair (s, t) one unit travels from t back toward s,
// splitting equally over the shortest-path predecessors at each node.
inline std::vector<double> load_oracle(const Graph& g) {
  const auto ap = floyd(g);
  const std::size_t n = ap.n;
  std::vector<double> load(n, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t t = 0; t < n; ++t) {
      if (s == t || ap.d[s][t] >= kInf) continue;
      std::vector<double> f(n, 0.0);
      f[t] = 1.0;
      for (int len = ap.d[s][t]; len >= 1; --len)
        for (std::size_t w = 0; w < n; ++w) {
          if (ap.d[s][w] != len || f[w] == 0.0) continue;
          std::vector<NodeId> preds;
          for (NodeId p : g.in_neighbors(static_cast<NodeId>(w)))
            if (ap.d[s][p] == len - 1) preds.push_back(p);
          for (NodeId p : preds) f[p] += f[w] / static_cast<double>(preds.size());
        }
      for (std::size_t v = 0; v < n; ++v)
        if (v != s && v != t) load[v] += f[v];
    }
  for (double& l : load) l *= scale_of(n);
  return load;
}

struct DistanceMeasures {
  std::vector<double> closeness, harmonic, local_reaching;
};

inline DistanceMeasures distance_oracle(const Graph& g) {
  const auto ap = floyd(g);
  const std::size_t n = ap.n;
  DistanceMeasures m;
  m.closeness.assign(n, 0.0);
  m.harmonic.assign(n, 0.0);
  m.local_reaching.assign(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    double reach = 0, total = 0;
    for (std::size_t t = 0; t < n; ++t) {
      if (t == s || ap.d[s][t] >= kInf) continue;
      reach += 1;
      total += ap.d[s][t];
      m.harmonic[s] += 1.0 / ap.d[s][t];
    }
    if (n > 1) {
      m.local_reaching[s] = reach / static_cast<double>(n - 1);
      if (reach > 0) m.closeness[s] = (reach / total) * (reach / static_cast<double>(n - 1));
    }
  }
  return m;
}

}  // namespace keynode::oracle
