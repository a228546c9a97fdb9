#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "keynode/common.hpp"
#include "keynode/io.hpp"

namespace keynode {

using Arc = std::pair<NodeId, NodeId>;

/// Immutable simple directed graph in CSR form, with both successor and
/// predecessor lists sorted by id. Undirected inputs are stored as pairs of
/// opposite arcs and keep directed() == false for reporting purposes.
class Graph {
 public:
  Graph() = default;

  /// Builds from an arc list. Self loops and duplicates are dropped; when
  /// `directed` is false every arc is mirrored.
  static Graph from_arcs(std::size_t n, std::vector<Arc> arcs, bool directed,
                         std::vector<std::string> names = {}) {
    if (!names.empty() && names.size() != n)
      throw InvalidArgument("node name count does not match node count");
    Graph g;
    g.n_ = n;
    g.directed_ = directed;
    g.names_ = std::move(names);
    for (const auto& [u, v] : arcs)
      if (u >= n || v >= n) throw InvalidArgument("arc endpoint out of range");
    if (!directed) {
      const std::size_t original = arcs.size();
      arcs.reserve(2 * original);
      for (std::size_t i = 0; i < original; ++i) arcs.emplace_back(arcs[i].second, arcs[i].first);
    }
    std::erase_if(arcs, [](const Arc& a) { return a.first == a.second; });
    std::sort(arcs.begin(), arcs.end());
    arcs.erase(std::unique(arcs.begin(), arcs.end()), arcs.end());
    g.build_csr(arcs);
    return g;
  }

  std::size_t node_count() const noexcept { return n_; }
  std::size_t arc_count() const noexcept { return out_targets_.size(); }
  /// Edges as reported to users: arcs for directed graphs, arc pairs otherwise.
  std::size_t edge_count() const noexcept { return directed_ ? arc_count() : arc_count() / 2; }
  bool directed() const noexcept { return directed_; }

  std::span<const NodeId> out_neighbors(NodeId v) const {
    return {out_targets_.data() + out_offsets_[v], out_offsets_[v + 1] - out_offsets_[v]};
  }
  std::span<const NodeId> in_neighbors(NodeId v) const {
    return {in_sources_.data() + in_offsets_[v], in_offsets_[v + 1] - in_offsets_[v]};
  }
  std::size_t out_degree(NodeId v) const { return out_offsets_[v + 1] - out_offsets_[v]; }
  std::size_t in_degree(NodeId v) const { return in_offsets_[v + 1] - in_offsets_[v]; }

  bool has_arc(NodeId u, NodeId v) const {
    auto out = out_neighbors(u);
    return std::binary_search(out.begin(), out.end(), v);
  }

  const std::vector<std::string>& node_names() const noexcept { return names_; }
  std::string node_name(NodeId v) const {
    return names_.empty() ? std::to_string(v) : names_[v];
  }

  std::vector<Arc> arcs() const {
    std::vector<Arc> out;
    out.reserve(arc_count());
    for (NodeId u = 0; u < n_; ++u)
      for (NodeId v : out_neighbors(u)) out.emplace_back(u, v);
    return out;
  }

  /// Graph with every arc reversed.
  Graph transposed() const {
    auto list = arcs();
    for (auto& a : list) std::swap(a.first, a.second);
    return from_arcs(n_, std::move(list), directed_, names_);
  }

  /// Symmetric closure (u-v whenever u->v or v->u), flagged undirected.
  Graph undirected_projection() const {
    if (!directed_) return *this;
    return from_arcs(n_, arcs(), false, names_);
  }

  /// Content hash over node count, direction flag and the sorted arc list.
  std::uint64_t checksum() const {
    std::uint64_t h = io::fnv1a("keynode-graph-v1");
    auto feed = [&h](std::uint64_t w) {
      h = io::fnv1a(std::string_view(reinterpret_cast<const char*>(&w), sizeof w), h);
    };
    feed(n_);
    feed(directed_ ? 1 : 0);
    for (NodeId u = 0; u < n_; ++u)
      for (NodeId v : out_neighbors(u)) feed((static_cast<std::uint64_t>(u) << 32) | v);
    return h;
  }

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.n_ == b.n_ && a.directed_ == b.directed_ && a.out_offsets_ == b.out_offsets_ &&
           a.out_targets_ == b.out_targets_;
  }

 private:
  void build_csr(const std::vector<Arc>& sorted_arcs) {
    out_offsets_.assign(n_ + 1, 0);
    in_offsets_.assign(n_ + 1, 0);
    for (const auto& [u, v] : sorted_arcs) {
      ++out_offsets_[u + 1];
      ++in_offsets_[v + 1];
    }
    for (std::size_t i = 0; i < n_; ++i) {
      out_offsets_[i + 1] += out_offsets_[i];
      in_offsets_[i + 1] += in_offsets_[i];
    }
    out_targets_.resize(sorted_arcs.size());
    in_sources_.resize(sorted_arcs.size());
    std::vector<std::size_t> in_fill(in_offsets_.begin(), in_offsets_.end() - 1);
    for (std::size_t i = 0; i < sorted_arcs.size(); ++i) {
      const auto [u, v] = sorted_arcs[i];
      out_targets_[i] = v;
      // Arcs are sorted by (u, v), so predecessor lists come out sorted too.
      in_sources_[in_fill[v]++] = u;
    }
  }

  std::size_t n_ = 0;
  bool directed_ = true;
  std::vector<std::size_t> out_offsets_{0};
  std::vector<NodeId> out_targets_;
  std::vector<std::size_t> in_offsets_{0};
  std::vector<NodeId> in_sources_;
  std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

struct EdgeListOptions {
  bool directed = false;
  /// Skip the first non-comment line (e.g. "id_1,id_2").
  bool header = false;
};

/// Parses edge-list text: one edge per line, two tokens separated by
/// whitespace and/or commas, '#' comments. Extra tokens are ignored. Node
/// ids are assigned in order of first appearance.
inline Graph parse_edge_list(std::string_view text, EdgeListOptions options = {}) {
  std::unordered_map<std::string, NodeId> ids;
  std::vector<std::string> names;
  std::vector<Arc> arcs;
  auto intern = [&](std::string token) {
    auto [it, inserted] = ids.try_emplace(token, static_cast<NodeId>(names.size()));
    if (inserted) names.push_back(std::move(token));
    return it->second;
  };

  std::size_t line_no = 0;
  bool header_pending = options.header;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;

    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ',' || std::isspace(static_cast<unsigned char>(line[i]))))
        ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ',' && !std::isspace(static_cast<unsigned char>(line[j])))
        ++j;
      if (j > i) tokens.emplace_back(line.substr(i, j - i));
      i = j;
    }
    if (tokens.empty() || tokens.front().front() == '#') continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    if (tokens.size() < 2) throw ParseError("expected two node tokens", line_no);
    const NodeId u = intern(std::move(tokens[0]));
    const NodeId v = intern(std::move(tokens[1]));
    arcs.emplace_back(u, v);
  }
  const std::size_t n = names.size();
  return Graph::from_arcs(n, std::move(arcs), options.directed, std::move(names));
}

inline Graph load_edge_list(const std::filesystem::path& path, EdgeListOptions options = {}) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const IoError&) {
    throw IoError("cannot read edge list " + path.string());
  }
  return parse_edge_list(text, options);
}

inline Graph load_edge_list(const std::filesystem::path& path, bool directed) {
  return load_edge_list(path, EdgeListOptions{directed, false});
}

/// Writes nodes in id order so that reloading reproduces the same id
/// mapping. Nodes without outgoing edges are emitted once as a self loop,
/// which the loader registers and then discards.
inline std::string format_edge_list(const Graph& g) {
  std::string out = "# keynode edge list; nodes=" + std::to_string(g.node_count()) +
                    (g.directed() ? " directed\n" : " undirected\n");
  for (NodeId u = 0; u < g.node_count(); ++u) out += g.node_name(u) + " " + g.node_name(u) + "\n";
  for (NodeId u = 0; u < g.node_count(); ++u)
    for (NodeId v : g.out_neighbors(u)) {
      if (!g.directed() && v < u) continue;
      out += g.node_name(u) + " " + g.node_name(v) + "\n";
    }
  return out;
}

inline void save_edge_list(const Graph& g, const std::filesystem::path& path) {
  io::write_file(path, format_edge_list(g));
}

// Binary cache: "KNGRAPH\0", u32 version, u32 flags, u64 n, u64 arcs,
// arcs as u32 pairs, then length-prefixed names (count 0 when unnamed).
inline constexpr std::uint32_t kGraphCacheVersion = 1;

inline void save_graph_binary(const Graph& g, const std::filesystem::path& path) {
  std::string buf;
  auto put = [&buf](const auto& value) {
    buf.append(reinterpret_cast<const char*>(&value), sizeof value);
  };
  buf.append("KNGRAPH", 8);
  put(kGraphCacheVersion);
  put(static_cast<std::uint32_t>(g.directed() ? 1 : 0));
  put(static_cast<std::uint64_t>(g.node_count()));
  const auto arcs = g.arcs();
  put(static_cast<std::uint64_t>(arcs.size()));
  for (const auto& [u, v] : arcs) {
    put(u);
    put(v);
  }
  put(static_cast<std::uint64_t>(g.node_names().size()));
  for (const auto& name : g.node_names()) {
    put(static_cast<std::uint32_t>(name.size()));
    buf += name;
  }
  io::write_file(path, buf);
}

inline Graph load_graph_binary(const std::filesystem::path& path) {
  const std::string buf = io::read_file(path);
  std::size_t pos = 0;
  auto get = [&](auto& value) {
    if (pos + sizeof value > buf.size()) throw IoError("truncated graph cache " + path.string());
    std::memcpy(&value, buf.data() + pos, sizeof value);
    pos += sizeof value;
  };
  if (buf.size() < 8 || std::memcmp(buf.data(), "KNGRAPH", 8) != 0)
    throw IoError("not a graph cache file: " + path.string());
  pos = 8;
  std::uint32_t version = 0, flags = 0;
  std::uint64_t n = 0, m = 0, name_count = 0;
  get(version);
  if (version != kGraphCacheVersion)
    throw IoError("unsupported graph cache version " + std::to_string(version));
  get(flags);
  get(n);
  get(m);
  std::vector<Arc> arcs(m);
  for (auto& [u, v] : arcs) {
    get(u);
    get(v);
  }
  get(name_count);
  std::vector<std::string> names(name_count);
  for (auto& name : names) {
    std::uint32_t len = 0;
    get(len);
    if (pos + len > buf.size()) throw IoError("truncated graph cache " + path.string());
    name.assign(buf.data() + pos, len);
    pos += len;
  }
  // Arcs are stored already mirrored; rebuild as directed, then restore the flag.
  Graph g = Graph::from_arcs(n, std::move(arcs), true, std::move(names));
  if ((flags & 1u) == 0) {
    auto restored = g.arcs();
    return Graph::from_arcs(n, std::move(restored), false, g.node_names());
  }
  return g;
}

// ---------------------------------------------------------------------------
// Traversal
// ---------------------------------------------------------------------------

/// Nodes reachable from `source` along directed paths, including source, sorted.
inline std::vector<NodeId> reachable_set(const Graph& g, NodeId source) {
  if (source >= g.node_count()) throw InvalidArgument("source node out of range");
  std::vector<char> seen(g.node_count(), 0);
  std::vector<NodeId> stack{source};
  std::vector<NodeId> out;
  seen[source] = 1;
  while (!stack.empty()) {
    const NodeId u = stack.back();
    stack.pop_back();
    out.push_back(u);
    for (NodeId v : g.out_neighbors(u))
      if (!seen[v]) {
        seen[v] = 1;
        stack.push_back(v);
      }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Unweighted BFS distances from source over out-arcs; -1 when unreachable.
inline std::vector<int> bfs_distances(const Graph& g, NodeId source) {
  std::vector<int> dist(g.node_count(), -1);
  std::vector<NodeId> queue{source};
  dist[source] = 0;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const NodeId u = queue[head];
    for (NodeId v : g.out_neighbors(u))
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
  }
  return dist;
}

/// Weakly connected component id per node; components numbered by smallest member.
inline std::vector<std::size_t> weak_components(const Graph& g, std::size_t* count = nullptr) {
  constexpr auto kUnset = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> comp(g.node_count(), kUnset);
  std::size_t next = 0;
  std::vector<NodeId> stack;
  for (NodeId s = 0; s < g.node_count(); ++s) {
    if (comp[s] != kUnset) continue;
    comp[s] = next;
    stack.assign(1, s);
    while (!stack.empty()) {
      const NodeId u = stack.back();
      stack.pop_back();
      auto visit = [&](NodeId v) {
        if (comp[v] == kUnset) {
          comp[v] = next;
          stack.push_back(v);
        }
      };
      for (NodeId v : g.out_neighbors(u)) visit(v);
      for (NodeId v : g.in_neighbors(u)) visit(v);
    }
    ++next;
  }
  if (count) *count = next;
  return comp;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct GraphStats {
  std::size_t nodes = 0;
  std::size_t edges = 0;
  double avg_degree = 0.0;
  double clustering_coefficient = 0.0;
  std::optional<std::size_t> diameter;
  double transitivity = 0.0;
  std::size_t components = 0;
};

/// Triangle count through each node of an undirected (symmetric) graph.
inline std::vector<std::size_t> triangles_per_node(const Graph& und) {
  std::vector<std::size_t> tri(und.node_count(), 0);
  parallel_for(und.node_count(), [&](std::size_t i) {
    const auto v = static_cast<NodeId>(i);
    const auto nv = und.out_neighbors(v);
    std::size_t count = 0;
    for (std::size_t a = 0; a < nv.size(); ++a) {
      const auto na = und.out_neighbors(nv[a]);
      // |N(v) ∩ N(nv[a])| restricted to ids after nv[a] counts each triangle once per v.
      auto it_v = nv.begin() + static_cast<std::ptrdiff_t>(a) + 1;
      auto it_a = std::upper_bound(na.begin(), na.end(), nv[a]);
      while (it_v != nv.end() && it_a != na.end()) {
        if (*it_v < *it_a) ++it_v;
        else if (*it_a < *it_v) ++it_a;
        else { ++count; ++it_v; ++it_a; }
      }
    }
    tri[i] = count;
  });
  return tri;
}

/// Local clustering coefficient on the undirected projection (0 for degree < 2).
inline std::vector<double> local_clustering(const Graph& g) {
  const Graph und = g.undirected_projection();
  const auto tri = triangles_per_node(und);
  std::vector<double> cc(und.node_count(), 0.0);
  for (NodeId v = 0; v < und.node_count(); ++v) {
    const double d = static_cast<double>(und.out_degree(v));
    if (d >= 2) cc[v] = 2.0 * static_cast<double>(tri[v]) / (d * (d - 1.0));
  }
  return cc;
}

/// Topology summary. Clustering, transitivity and diameter use the
/// undirected projection. The diameter is exact (BFS from every node of the
/// largest weakly connected component); it is left empty for disconnected
/// graphs unless `diameter_of_largest_component` is set.
inline GraphStats compute_stats(const Graph& g, bool diameter_of_largest_component = false) {
  if (g.node_count() == 0) throw StatsError("statistics of an empty graph are undefined");
  const Graph und = g.undirected_projection();
  const std::size_t n = und.node_count();
  GraphStats s;
  s.nodes = g.node_count();
  s.edges = g.edge_count();
  s.avg_degree = static_cast<double>(und.arc_count()) / static_cast<double>(n);

  const auto tri = triangles_per_node(und);
  double cc_sum = 0.0;
  double closed = 0.0, triads = 0.0;
  for (NodeId v = 0; v < n; ++v) {
    const double d = static_cast<double>(und.out_degree(v));
    const double pairs = d * (d - 1.0) / 2.0;
    if (d >= 2) cc_sum += static_cast<double>(tri[v]) / pairs;
    closed += static_cast<double>(tri[v]);
    triads += pairs;
  }
  s.clustering_coefficient = cc_sum / static_cast<double>(n);
  s.transitivity = triads > 0 ? closed / triads : 0.0;

  std::size_t count = 0;
  const auto comp = weak_components(und, &count);
  s.components = count;
  if (count == 1 || diameter_of_largest_component) {
    std::vector<std::size_t> sizes(count, 0);
    for (auto c : comp) ++sizes[c];
    const auto largest = static_cast<std::size_t>(
        std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    std::vector<NodeId> members;
    for (NodeId v = 0; v < n; ++v)
      if (comp[v] == largest) members.push_back(v);
    std::vector<int> ecc(members.size(), 0);
    parallel_for(members.size(), [&](std::size_t i) {
      const auto dist = bfs_distances(und, members[i]);
      ecc[i] = *std::max_element(dist.begin(), dist.end());
    });
    s.diameter = static_cast<std::size_t>(*std::max_element(ecc.begin(), ecc.end()));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

enum class SyntheticModel { erdos_renyi, barabasi_albert };

inline SyntheticModel parse_synthetic_model(std::string_view name) {
  if (name == "erdos_renyi" || name == "er") return SyntheticModel::erdos_renyi;
  if (name == "barabasi_albert" || name == "ba") return SyntheticModel::barabasi_albert;
  throw InvalidArgument("unknown synthetic model '" + std::string(name) + "'");
}

struct SyntheticOptions {
  /// Directed ER samples each ordered pair; directed BA points arcs from the
  /// new node to its chosen targets.
  bool directed = false;
  /// Directed only: probability of adding the reverse of each generated arc.
  double reciprocity = 0.0;
};

/// Erdős–Rényi G(n, p) or Barabási–Albert with m attachments per new node
/// (m isolated seed nodes, so the edge count is exactly (n - m) * m).
/// Deterministic for a fixed seed.
inline Graph generate_synthetic(SyntheticModel model, std::size_t n, double param,
                                std::uint64_t seed, SyntheticOptions options = {}) {
  if (n < 1) throw InvalidArgument("synthetic graph needs n >= 1");
  if (options.reciprocity < 0.0 || options.reciprocity > 1.0)
    throw InvalidArgument("reciprocity must lie in [0, 1]");
  Xoshiro256 rng(stable_hash({seed, static_cast<std::uint64_t>(model), n}));
  std::vector<Arc> arcs;

  if (model == SyntheticModel::erdos_renyi) {
    if (!(param >= 0.0 && param <= 1.0)) throw InvalidArgument("erdos_renyi needs p in [0, 1]");
    for (NodeId u = 0; u < n; ++u)
      for (NodeId v = options.directed ? 0 : u + 1; v < n; ++v)
        if (u != v && rng.bernoulli(param)) arcs.emplace_back(u, v);
  } else {
    const double rounded = std::round(param);
    if (!(param >= 1.0) || rounded != param || rounded >= static_cast<double>(n))
      throw InvalidArgument("barabasi_albert needs an integer m with 1 <= m < n");
    const auto m = static_cast<std::size_t>(rounded);
    std::vector<NodeId> targets(m);
    for (std::size_t i = 0; i < m; ++i) targets[i] = static_cast<NodeId>(i);
    std::vector<NodeId> repeated;
    for (auto source = static_cast<NodeId>(m); source < n; ++source) {
      for (NodeId t : targets) arcs.emplace_back(source, t);
      repeated.insert(repeated.end(), targets.begin(), targets.end());
      repeated.insert(repeated.end(), m, source);
      // m distinct targets, preferential by multiplicity in `repeated`.
      targets.clear();
      while (targets.size() < m) {
        const NodeId pick = repeated[rng.below(repeated.size())];
        if (std::find(targets.begin(), targets.end(), pick) == targets.end()) targets.push_back(pick);
      }
      std::sort(targets.begin(), targets.end());
    }
  }

  if (options.directed && options.reciprocity > 0.0) {
    const std::size_t original = arcs.size();
    for (std::size_t i = 0; i < original; ++i)
      if (rng.bernoulli(options.reciprocity)) arcs.emplace_back(arcs[i].second, arcs[i].first);
  }
  return Graph::from_arcs(n, std::move(arcs), options.directed);
}

}  // namespace keynode
