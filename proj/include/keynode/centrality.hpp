#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "keynode/common.hpp"
#include "keynode/graph.hpp"
#include "keynode/io.hpp"

namespace keynode {

enum class CentralityId : int {
  degree,
  in_degree,
  out_degree,
  avg_neighbor_degree,
  closeness,
  betweenness,
  local_reaching,
  vote_rank,
  load,
  clustering_coefficient,
  core_number,
  eigenvector,
  pagerank,
  harmonic,
};

inline constexpr std::size_t kCentralityCount = 14;

inline constexpr std::array<CentralityId, kCentralityCount> kAllCentralities = {
    CentralityId::degree,       CentralityId::in_degree,
    CentralityId::out_degree,   CentralityId::avg_neighbor_degree,
    CentralityId::closeness,    CentralityId::betweenness,
    CentralityId::local_reaching, CentralityId::vote_rank,
    CentralityId::load,         CentralityId::clustering_coefficient,
    CentralityId::core_number,  CentralityId::eigenvector,
    CentralityId::pagerank,     CentralityId::harmonic,
};

inline constexpr std::array<std::string_view, kCentralityCount> kCentralityNames = {
    "degree",    "in_degree",      "out_degree", "avg_neighbor_degree",
    "closeness", "betweenness",    "local_reaching", "vote_rank",
    "load",      "clustering_coefficient", "core_number", "eigenvector",
    "pagerank",  "harmonic",
};

inline std::string_view to_string(CentralityId id) {
  return kCentralityNames[static_cast<std::size_t>(id)];
}

inline CentralityId parse_centrality(std::string_view name) {
  for (std::size_t i = 0; i < kCentralityCount; ++i)
    if (kCentralityNames[i] == name) return kAllCentralities[i];
  throw InvalidArgument("unknown centrality '" + std::string(name) + "'");
}

struct NodeScoreMap {
  CentralityId measure = CentralityId::degree;
  std::vector<double> scores;
  std::vector<std::string> warnings;
};

struct CentralityParams {
  double pagerank_damping = 0.85;
  double pagerank_tolerance = 1e-9;
  std::size_t pagerank_max_iterations = 1000;
  double eigenvector_tolerance = 1e-6;
  std::size_t eigenvector_max_iterations = 1000;
};

namespace centrality_detail {

inline double round_1e10(double v) { return std::round(v * 1e10) / 1e10; }

/// Per-source shortest-path sweep producing the path-based measures.
/// Sources are split into a fixed number of contiguous chunks whose partial
/// betweenness/load sums are merged in chunk order, so results do not depend
/// on how many workers ran the chunks.
struct PathSweep {
  std::vector<double> closeness, harmonic, local_reaching, betweenness, load;
  bool normalized = true;
};

inline PathSweep path_sweep(const Graph& g) {
  const std::size_t n = g.node_count();
  PathSweep out;
  out.closeness.assign(n, 0.0);
  out.harmonic.assign(n, 0.0);
  out.local_reaching.assign(n, 0.0);
  out.betweenness.assign(n, 0.0);
  out.load.assign(n, 0.0);
  if (n == 0) return out;

  const std::size_t chunks = std::min<std::size_t>(64, n);
  std::vector<std::vector<double>> bc_part(chunks), load_part(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * n / chunks, end = (c + 1) * n / chunks;
    auto& bc = bc_part[c];
    auto& ld = load_part[c];
    bc.assign(n, 0.0);
    ld.assign(n, 0.0);
    std::vector<int> dist(n, -1);
    std::vector<double> sigma(n, 0.0), delta(n, 0.0), flow(n, 0.0);
    std::vector<NodeId> order;
    order.reserve(n);
    for (std::size_t si = begin; si < end; ++si) {
      const auto s = static_cast<NodeId>(si);
      order.clear();
      order.push_back(s);
      dist[s] = 0;
      sigma[s] = 1.0;
      for (std::size_t head = 0; head < order.size(); ++head) {
        const NodeId u = order[head];
        for (NodeId v : g.out_neighbors(u)) {
          if (dist[v] < 0) {
            dist[v] = dist[u] + 1;
            order.push_back(v);
          }
          if (dist[v] == dist[u] + 1) sigma[v] += sigma[u];
        }
      }
      // Distance-based measures.
      double dist_sum = 0.0, harm = 0.0;
      for (std::size_t i = 1; i < order.size(); ++i) {
        const double d = dist[order[i]];
        dist_sum += d;
        harm += 1.0 / d;
      }
      const double reached = static_cast<double>(order.size() - 1);
      out.harmonic[s] = harm;
      if (n > 1) {
        out.local_reaching[s] = reached / static_cast<double>(n - 1);
        if (reached > 0) out.closeness[s] = (reached / dist_sum) * (reached / static_cast<double>(n - 1));
      }
      // Dependency accumulation (Brandes) and equal-split flow (load).
      for (NodeId v : order) {
        delta[v] = 0.0;
        flow[v] = 1.0;
      }
      for (std::size_t i = order.size(); i-- > 1;) {
        const NodeId w = order[i];
        std::size_t preds = 0;
        for (NodeId v : g.in_neighbors(w))
          if (dist[v] == dist[w] - 1) ++preds;
        const double coeff = (1.0 + delta[w]) / sigma[w];
        const double share = flow[w] / static_cast<double>(preds);
        for (NodeId v : g.in_neighbors(w)) {
          if (dist[v] != dist[w] - 1) continue;
          delta[v] += sigma[v] * coeff;
          if (v != s) flow[v] += share;
        }
        bc[w] += delta[w];
        ld[w] += flow[w] - 1.0;
      }
      for (NodeId v : order) {
        dist[v] = -1;
        sigma[v] = 0.0;
      }
    }
  });

  out.normalized = n > 2;
  const double scale =
      out.normalized ? 1.0 / (static_cast<double>(n - 1) * static_cast<double>(n - 2)) : 1.0;
  for (std::size_t c = 0; c < chunks; ++c)
    for (std::size_t v = 0; v < n; ++v) {
      out.betweenness[v] += bc_part[c][v];
      out.load[v] += load_part[c][v];
    }
  for (std::size_t v = 0; v < n; ++v) {
    out.betweenness[v] = round_1e10(out.betweenness[v] * scale);
    out.load[v] = round_1e10(out.load[v] * scale);
  }
  return out;
}

/// VoteRank: every node votes for its out-neighbours with its current voting
/// ability (initially 1), the top-scored unselected node is elected (ties to
/// the lower id), and the nodes that voted for it lose 1/<k> of their
/// ability. Elected rank r (0-based) maps to the score (n - r) / n; nodes
/// never elected score 0.
inline std::vector<double> vote_rank(const Graph& g) {
  const std::size_t n = g.node_count();
  std::vector<double> score(n, 0.0);
  if (n == 0 || g.arc_count() == 0) return score;
  const double weakening = static_cast<double>(n) / static_cast<double>(g.arc_count());
  std::vector<double> ability(n, 1.0), votes(n, 0.0);
  std::vector<char> elected(n, 0);
  auto tally = [&](NodeId v) {
    double s = 0.0;
    for (NodeId u : g.in_neighbors(v)) s += ability[u];
    return s;
  };
  // Ordered by (-votes, id).
  std::set<std::pair<double, NodeId>> queue;
  for (NodeId v = 0; v < n; ++v) {
    votes[v] = tally(v);
    queue.emplace(-votes[v], v);
  }
  std::vector<NodeId> touched;
  std::vector<char> mark(n, 0);
  for (std::size_t rank = 0; !queue.empty(); ++rank) {
    const auto [neg, v] = *queue.begin();
    if (-neg <= 0.0) break;
    queue.erase(queue.begin());
    elected[v] = 1;
    score[v] = static_cast<double>(n - rank) / static_cast<double>(n);

    touched.clear();
    auto touch_out = [&](NodeId u) {
      for (NodeId w : g.out_neighbors(u))
        if (!elected[w] && !mark[w]) {
          mark[w] = 1;
          touched.push_back(w);
        }
    };
    ability[v] = 0.0;
    touch_out(v);
    for (NodeId u : g.in_neighbors(v)) {
      ability[u] = std::max(0.0, ability[u] - weakening);
      touch_out(u);
    }
    for (NodeId w : touched) {
      mark[w] = 0;
      queue.erase({-votes[w], w});
      votes[w] = tally(w);
      queue.emplace(-votes[w], w);
    }
  }
  return score;
}

/// Batagelj–Zaversnik bucket peeling on the undirected projection.
inline std::vector<double> core_number(const Graph& g) {
  const Graph und = g.undirected_projection();
  const std::size_t n = und.node_count();
  std::vector<double> result(n, 0.0);
  if (n == 0) return result;
  std::vector<std::size_t> deg(n), pos(n), vert(n);
  std::size_t max_deg = 0;
  for (NodeId v = 0; v < n; ++v) {
    deg[v] = und.out_degree(v);
    max_deg = std::max(max_deg, deg[v]);
  }
  std::vector<std::size_t> bin(max_deg + 1, 0);
  for (auto d : deg) ++bin[d];
  std::size_t start = 0;
  for (auto& b : bin) {
    const auto count = b;
    b = start;
    start += count;
  }
  for (NodeId v = 0; v < n; ++v) {
    pos[v] = bin[deg[v]]++;
    vert[pos[v]] = v;
  }
  for (std::size_t d = max_deg; d >= 1; --d) bin[d] = bin[d - 1];
  bin[0] = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<NodeId>(vert[i]);
    for (NodeId u : und.out_neighbors(v)) {
      if (deg[u] > deg[v]) {
        const std::size_t du = deg[u], pu = pos[u];
        const std::size_t pw = bin[du];
        const std::size_t w = vert[pw];
        if (u != w) {
          pos[u] = pw;
          vert[pu] = w;
          pos[w] = pu;
          vert[pw] = u;
        }
        ++bin[du];
        --deg[u];
      }
    }
  }
  for (NodeId v = 0; v < n; ++v) result[v] = static_cast<double>(deg[v]);
  return result;
}

/// Power iteration with the (A + I) shift on the undirected projection,
/// L2-normalized; converged when the L1 change is below n * tolerance.
inline std::vector<double> eigenvector(const Graph& g, double tolerance, std::size_t max_iter) {
  const Graph und = g.undirected_projection();
  const std::size_t n = und.node_count();
  std::vector<double> x(n, 1.0 / static_cast<double>(n)), next(n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    for (NodeId v = 0; v < n; ++v) {
      double s = x[v];
      for (NodeId u : und.out_neighbors(v)) s += x[u];
      next[v] = s;
    }
    double norm = 0.0;
    for (double v : next) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw ConvergenceError("eigenvector: zero vector during power iteration");
    double change = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      next[v] /= norm;
      change += std::abs(next[v] - x[v]);
    }
    x.swap(next);
    if (change < static_cast<double>(n) * tolerance) return x;
  }
  throw ConvergenceError("eigenvector centrality did not converge within " +
                         std::to_string(max_iter) + " iterations");
}

/// PageRank over in-arcs with uniform teleport and uniform redistribution of
/// dangling mass.
inline std::vector<double> pagerank(const Graph& g, double damping, double tolerance,
                                    std::size_t max_iter) {
  const std::size_t n = g.node_count();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> x(n, inv_n), next(n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    double dangling = 0.0;
    for (NodeId v = 0; v < n; ++v)
      if (g.out_degree(v) == 0) dangling += x[v];
    const double base = (1.0 - damping) * inv_n + damping * dangling * inv_n;
    double change = 0.0;
    for (NodeId v = 0; v < n; ++v) {
      double s = 0.0;
      for (NodeId u : g.in_neighbors(v)) s += x[u] / static_cast<double>(g.out_degree(u));
      next[v] = base + damping * s;
      change += std::abs(next[v] - x[v]);
    }
    x.swap(next);
    if (change < static_cast<double>(n) * tolerance) return x;
  }
  throw ConvergenceError("pagerank did not converge within " + std::to_string(max_iter) +
                         " iterations");
}

inline std::vector<double> avg_neighbor_degree(const Graph& g) {
  std::vector<double> out(g.node_count(), 0.0);
  for (NodeId v = 0; v < g.node_count(); ++v) {
    const auto nb = g.out_neighbors(v);
    if (nb.empty()) continue;
    double s = 0.0;
    for (NodeId u : nb) s += static_cast<double>(g.in_degree(u) + g.out_degree(u));
    out[v] = s / static_cast<double>(nb.size());
  }
  return out;
}

inline NodeScoreMap from_sweep(CentralityId id, const PathSweep& sweep) {
  NodeScoreMap m{id, {}, {}};
  switch (id) {
    case CentralityId::closeness: m.scores = sweep.closeness; break;
    case CentralityId::harmonic: m.scores = sweep.harmonic; break;
    case CentralityId::local_reaching: m.scores = sweep.local_reaching; break;
    case CentralityId::betweenness: m.scores = sweep.betweenness; break;
    case CentralityId::load: m.scores = sweep.load; break;
    default: throw InvalidArgument("not a path-based measure");
  }
  if ((id == CentralityId::betweenness || id == CentralityId::load) && !sweep.normalized)
    m.warnings.push_back(std::string(to_string(id)) +
                         ": fewer than 3 nodes, returning unnormalized values");
  return m;
}

inline bool is_path_based(CentralityId id) {
  return id == CentralityId::closeness || id == CentralityId::harmonic ||
         id == CentralityId::local_reaching || id == CentralityId::betweenness ||
         id == CentralityId::load;
}

inline NodeScoreMap compute_simple(const Graph& g, CentralityId id, const CentralityParams& p) {
  const std::size_t n = g.node_count();
  NodeScoreMap m{id, std::vector<double>(n, 0.0), {}};
  switch (id) {
    case CentralityId::degree:
      for (NodeId v = 0; v < n; ++v) m.scores[v] = static_cast<double>(g.in_degree(v) + g.out_degree(v));
      break;
    case CentralityId::in_degree:
      for (NodeId v = 0; v < n; ++v) m.scores[v] = static_cast<double>(g.in_degree(v));
      break;
    case CentralityId::out_degree:
      for (NodeId v = 0; v < n; ++v) m.scores[v] = static_cast<double>(g.out_degree(v));
      break;
    case CentralityId::avg_neighbor_degree: m.scores = avg_neighbor_degree(g); break;
    case CentralityId::vote_rank: m.scores = vote_rank(g); break;
    case CentralityId::clustering_coefficient: m.scores = local_clustering(g); break;
    case CentralityId::core_number: m.scores = core_number(g); break;
    case CentralityId::eigenvector:
      m.scores = eigenvector(g, p.eigenvector_tolerance, p.eigenvector_max_iterations);
      break;
    case CentralityId::pagerank:
      m.scores = pagerank(g, p.pagerank_damping, p.pagerank_tolerance, p.pagerank_max_iterations);
      break;
    default: throw InvalidArgument("path-based measure routed to compute_simple");
  }
  return m;
}

template <typename Fn>
auto annotate(CentralityId id, Fn&& fn) {
  try {
    return fn();
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(std::string(to_string(id)) + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(std::string(to_string(id)) + ": " + e.what());
  } catch (const Error& e) {
    throw Error(std::string(to_string(id)) + ": " + e.what());
  }
}

}  // namespace centrality_detail

/// One centrality measure for every node. Degree counts are raw; closeness
/// (Wasserman–Faust scaled), harmonic and local reaching follow outgoing
/// paths; betweenness and load are normalized by (n-1)(n-2); clustering,
/// core number and eigenvector use the undirected projection.
inline NodeScoreMap compute_centrality(const Graph& g, CentralityId measure,
                                       const CentralityParams& params = {}) {
  if (g.node_count() == 0) throw InvalidArgument("centrality of an empty graph");
  return centrality_detail::annotate(measure, [&] {
    if (centrality_detail::is_path_based(measure))
      return centrality_detail::from_sweep(measure, centrality_detail::path_sweep(g));
    return centrality_detail::compute_simple(g, measure, params);
  });
}

/// All 14 measures ordered by CentralityId. The five path-based measures
/// share one sweep; the rest run concurrently.
inline std::vector<NodeScoreMap> compute_all_centralities(const Graph& g,
                                                          const CentralityParams& params = {}) {
  if (g.node_count() == 0) throw InvalidArgument("centrality of an empty graph");
  std::vector<NodeScoreMap> maps(kCentralityCount);
  std::vector<CentralityId> simple;
  for (auto id : kAllCentralities)
    if (!centrality_detail::is_path_based(id)) simple.push_back(id);
  // Slot 0 runs the sweep; slots 1.. run the simple measures.
  centrality_detail::PathSweep sweep;
  parallel_for(simple.size() + 1, [&](std::size_t i) {
    if (i == 0) {
      sweep = centrality_detail::annotate(CentralityId::betweenness,
                                          [&] { return centrality_detail::path_sweep(g); });
      return;
    }
    const auto id = simple[i - 1];
    maps[static_cast<std::size_t>(id)] =
        centrality_detail::annotate(id, [&] { return centrality_detail::compute_simple(g, id, params); });
  });
  for (auto id : kAllCentralities)
    if (centrality_detail::is_path_based(id))
      maps[static_cast<std::size_t>(id)] = centrality_detail::from_sweep(id, sweep);
  return maps;
}

// ---------------------------------------------------------------------------
// Feature cache
// ---------------------------------------------------------------------------

inline std::string format_centrality_csv(const std::vector<NodeScoreMap>& maps) {
  if (maps.size() != kCentralityCount) throw InvalidArgument("expected 14 centrality maps");
  std::string out = "node";
  for (auto name : kCentralityNames) out += "," + std::string(name);
  out += '\n';
  const std::size_t n = maps.front().scores.size();
  for (std::size_t v = 0; v < n; ++v) {
    out += std::to_string(v);
    for (const auto& m : maps) out += "," + io::format_double(m.scores[v]);
    out += '\n';
  }
  return out;
}

inline io::json centrality_sidecar(const Graph& g, const CentralityParams& p) {
  return {
      {"graph_checksum", io::hex64(g.checksum())},
      {"measures", std::vector<std::string>(kCentralityNames.begin(), kCentralityNames.end())},
      {"parameters",
       {{"pagerank", {{"damping", p.pagerank_damping}, {"tolerance", p.pagerank_tolerance}}},
        {"eigenvector",
         {{"tolerance", p.eigenvector_tolerance},
          {"max_iterations", p.eigenvector_max_iterations},
          {"graph", "undirected projection, (A+I) power iteration"}}},
        {"betweenness", {{"normalization", "1/((n-1)(n-2))"}, {"rounding", 1e-10}}},
        {"load", {{"normalization", "1/((n-1)(n-2))"}, {"flow", "equal split among predecessors"}}},
        {"closeness", {{"direction", "outgoing"}, {"scaling", "wasserman_faust"}}},
        {"harmonic", {{"direction", "outgoing"}}},
        {"avg_neighbor_degree", {{"neighbors", "out"}, {"degree", "in+out"}}},
        {"vote_rank", {{"score", "(n - rank) / n, 0-based rank"}, {"weakening", "1/<k_out>"}}},
        {"clustering_coefficient", {{"graph", "undirected projection"}}},
        {"core_number", {{"graph", "undirected projection"}}}}},
  };
}

inline void save_centralities(const std::vector<NodeScoreMap>& maps, const Graph& g,
                              const std::filesystem::path& csv_path,
                              const CentralityParams& params = {}) {
  io::write_file(csv_path, format_centrality_csv(maps));
  auto json_path = csv_path;
  json_path.replace_extension(".json");
  io::write_json(json_path, centrality_sidecar(g, params));
}

inline std::vector<NodeScoreMap> load_centralities(const std::filesystem::path& csv_path) {
  const auto table = io::read_csv(csv_path);
  std::vector<NodeScoreMap> maps;
  for (auto id : kAllCentralities) {
    const auto col = table.column(to_string(id));
    NodeScoreMap m{id, {}, {}};
    m.scores.reserve(table.rows.size());
    std::size_t line = 1;
    for (const auto& row : table.rows) m.scores.push_back(io::parse_double(row[col], ++line));
    maps.push_back(std::move(m));
  }
  return maps;
}

}  // namespace keynode
