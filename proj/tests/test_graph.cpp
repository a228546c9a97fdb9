#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <unistd.h>

#include "keynode/graph.hpp"

using namespace keynode;
namespace fs = std::filesystem;

namespace {

Graph random_digraph(std::size_t n, double p, std::uint64_t seed) {
  return generate_synthetic(SyntheticModel::erdos_renyi, n, p, seed, {.directed = true});
}

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("keynode_test_graph_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Parse, WhitespaceCommaAndComments) {
  const Graph g = parse_edge_list("# comment\na b\nb,c\n\n  c\t a extra\n", {.directed = true});
  EXPECT_EQ(g.node_count(), 3u);
  EXPECT_EQ(g.arc_count(), 3u);
  EXPECT_EQ(g.node_name(0), "a");
  EXPECT_EQ(g.node_name(2), "c");
  EXPECT_TRUE(g.has_arc(0, 1));
  EXPECT_TRUE(g.has_arc(2, 0));
  EXPECT_FALSE(g.has_arc(1, 0));
}

TEST(Parse, DropsDuplicatesAndSelfLoops) {
  const Graph g = parse_edge_list("1 2\n1 2\n2 1\n3 3\n", {.directed = false});
  EXPECT_EQ(g.node_count(), 3u);  // the self-loop node is still registered
  EXPECT_EQ(g.edge_count(), 1u);
  EXPECT_EQ(g.arc_count(), 2u);
  EXPECT_EQ(g.out_degree(2), 0u);
}

TEST(Parse, HeaderSkippedAndMalformedLineRejected) {
  const Graph g = parse_edge_list("id_1,id_2\n0,1\n", {.directed = true, .header = true});
  EXPECT_EQ(g.node_count(), 2u);
  EXPECT_THROW(parse_edge_list("a b\nlonely\n"), ParseError);
}

TEST(Parse, MissingFileIsIoError) {
  EXPECT_THROW(load_edge_list("/nonexistent/keynode/edges.txt"), IoError);
}

TEST(Stats, Triangle) {
  const auto s = compute_stats(parse_edge_list("a b\nb c\nc a\n"));
  EXPECT_EQ(s.nodes, 3u);
  EXPECT_EQ(s.edges, 3u);
  EXPECT_DOUBLE_EQ(s.avg_degree, 2.0);
  EXPECT_DOUBLE_EQ(s.clustering_coefficient, 1.0);
  EXPECT_DOUBLE_EQ(s.transitivity, 1.0);
  ASSERT_TRUE(s.diameter.has_value());
  EXPECT_EQ(*s.diameter, 1u);
}

TEST(Stats, FourPath) {
  const auto s = compute_stats(parse_edge_list("a b\nb c\nc d\n"));
  EXPECT_EQ(s.edges, 3u);
  EXPECT_DOUBLE_EQ(s.avg_degree, 1.5);
  EXPECT_DOUBLE_EQ(s.clustering_coefficient, 0.0);
  EXPECT_DOUBLE_EQ(s.transitivity, 0.0);
  EXPECT_EQ(s.diameter.value(), 3u);
}

TEST(Stats, DisconnectedDiameterOnlyOnRequest) {
  // Triangle plus a separate 5-path: largest component is the path (diameter 4).
  const Graph g = parse_edge_list("a b\nb c\nc a\nx1 x2\nx2 x3\nx3 x4\nx4 x5\n");
  EXPECT_FALSE(compute_stats(g).diameter.has_value());
  const auto s = compute_stats(g, true);
  EXPECT_EQ(s.components, 2u);
  EXPECT_EQ(s.diameter.value(), 4u);
}

TEST(Stats, EmptyGraphThrows) {
  EXPECT_THROW(compute_stats(Graph::from_arcs(0, {}, false)), StatsError);
}

TEST(Stats, ClusteringMatchesPairEnumeration) {
  // Oracle: count connected neighbour pairs directly from the adjacency matrix.
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Graph g = generate_synthetic(SyntheticModel::erdos_renyi, 30, 0.2, seed);
    const std::size_t n = g.node_count();
    double cc = 0.0, closed = 0.0, triads = 0.0;
    for (NodeId v = 0; v < n; ++v) {
      const auto nb = g.out_neighbors(v);
      double links = 0.0;
      for (std::size_t a = 0; a < nb.size(); ++a)
        for (std::size_t b = a + 1; b < nb.size(); ++b) links += g.has_arc(nb[a], nb[b]) ? 1.0 : 0.0;
      const double d = static_cast<double>(nb.size());
      if (d >= 2) cc += links / (d * (d - 1) / 2);
      closed += links;
      triads += d * (d - 1) / 2;
    }
    const auto s = compute_stats(g, true);
    EXPECT_NEAR(s.clustering_coefficient, cc / static_cast<double>(n), 1e-12);
    EXPECT_NEAR(s.transitivity, closed / triads, 1e-12);
  }
}

TEST(Synthetic, ErdosRenyiExtremes) {
  EXPECT_EQ(generate_synthetic(SyntheticModel::erdos_renyi, 10, 0.0, 1).edge_count(), 0u);
  EXPECT_EQ(generate_synthetic(SyntheticModel::erdos_renyi, 10, 1.0, 1).edge_count(), 45u);
}

TEST(Synthetic, BarabasiAlbertEdgeCount) {
  const Graph g = generate_synthetic(SyntheticModel::barabasi_albert, 100, 2, 7);
  EXPECT_EQ(g.edge_count(), 196u);
  EXPECT_EQ(g.edge_count(), (100u - 2u) * 2u);
}

TEST(Synthetic, DeterministicAndSimple) {
  const Graph a = generate_synthetic(SyntheticModel::barabasi_albert, 200, 3, 11, {.directed = true, .reciprocity = 0.4});
  const Graph b = generate_synthetic(SyntheticModel::barabasi_albert, 200, 3, 11, {.directed = true, .reciprocity = 0.4});
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.checksum(), b.checksum());
  for (NodeId v = 0; v < a.node_count(); ++v) EXPECT_FALSE(a.has_arc(v, v));
  const Graph c = generate_synthetic(SyntheticModel::barabasi_albert, 200, 3, 12, {.directed = true, .reciprocity = 0.4});
  EXPECT_NE(a.checksum(), c.checksum());
}

TEST(Synthetic, InvalidParams) {
  EXPECT_THROW(generate_synthetic(SyntheticModel::erdos_renyi, 10, 1.5, 1), InvalidArgument);
  EXPECT_THROW(generate_synthetic(SyntheticModel::barabasi_albert, 10, 0, 1), InvalidArgument);
  EXPECT_THROW(generate_synthetic(SyntheticModel::barabasi_albert, 10, 2.5, 1), InvalidArgument);
  EXPECT_THROW(generate_synthetic(SyntheticModel::barabasi_albert, 10, 10, 1), InvalidArgument);
}

TEST(Degrees, SumsEqualArcCount) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Graph g = random_digraph(40, 0.1, seed);
    std::size_t in = 0, out = 0;
    for (NodeId v = 0; v < g.node_count(); ++v) {
      in += g.in_degree(v);
      out += g.out_degree(v);
    }
    EXPECT_EQ(in, g.arc_count());
    EXPECT_EQ(out, g.arc_count());
  }
}

TEST(Reachable, PathAndIsolated) {
  const Graph g = parse_edge_list("a b\nb c\n", {.directed = true});
  EXPECT_EQ(reachable_set(g, 0), (std::vector<NodeId>{0, 1, 2}));
  EXPECT_EQ(reachable_set(g, 2), (std::vector<NodeId>{2}));
  const Graph iso = Graph::from_arcs(3, {{0, 1}}, true);
  EXPECT_EQ(reachable_set(iso, 2), (std::vector<NodeId>{2}));
  EXPECT_THROW(reachable_set(iso, 3), InvalidArgument);
}

TEST(Reachable, MatchesBooleanClosure) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const Graph g = random_digraph(8, 0.2, seed);
    const std::size_t n = 8;
    // Reflexive-transitive closure by repeated boolean squaring.
    std::vector<std::vector<char>> r(n, std::vector<char>(n, 0));
    for (NodeId u = 0; u < n; ++u) {
      r[u][u] = 1;
      for (NodeId v : g.out_neighbors(u)) r[u][v] = 1;
    }
    for (int step = 0; step < 4; ++step) {
      auto next = r;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
          if (r[i][k])
            for (std::size_t j = 0; j < n; ++j)
              if (r[k][j]) next[i][j] = 1;
      r = next;
    }
    for (NodeId s = 0; s < n; ++s) {
      std::vector<NodeId> expected;
      for (NodeId v = 0; v < n; ++v)
        if (r[s][v]) expected.push_back(v);
      EXPECT_EQ(reachable_set(g, s), expected) << "seed " << seed << " source " << s;
    }
  }
}

TEST(Transforms, TransposeAndProjection) {
  const Graph g = parse_edge_list("a b\nb c\n", {.directed = true});
  const Graph t = g.transposed();
  EXPECT_TRUE(t.has_arc(1, 0));
  EXPECT_FALSE(t.has_arc(0, 1));
  const Graph u = g.undirected_projection();
  EXPECT_FALSE(u.directed());
  EXPECT_EQ(u.edge_count(), 2u);
  EXPECT_TRUE(u.has_arc(2, 1));
}

TEST(RoundTrip, EdgeListPreservesIdsAndIsolatedNodes) {
  const Graph g = parse_edge_list("x y\ny z\nw w\n", {.directed = true});
  ASSERT_EQ(g.node_count(), 4u);
  const auto path = temp_path("roundtrip.txt");
  save_edge_list(g, path);
  const Graph back = load_edge_list(path, true);
  EXPECT_EQ(back, g);
  EXPECT_EQ(back.node_names(), g.node_names());
}

TEST(RoundTrip, UndirectedEdgeList) {
  const Graph g = generate_synthetic(SyntheticModel::barabasi_albert, 50, 2, 3);
  const auto path = temp_path("und.txt");
  save_edge_list(g, path);
  const Graph back = load_edge_list(path, false);
  EXPECT_EQ(back.node_count(), g.node_count());
  EXPECT_EQ(back.edge_count(), g.edge_count());
  // Names are the original ids, so arcs map back one to one.
  for (const auto& [u, v] : back.arcs())
    EXPECT_TRUE(g.has_arc(static_cast<NodeId>(std::stoul(back.node_name(u))),
                          static_cast<NodeId>(std::stoul(back.node_name(v)))));
}

TEST(RoundTrip, Binary) {
  const Graph g = parse_edge_list("a b\nb c\nc a\nd e\n");
  const auto path = temp_path("g.bin");
  save_graph_binary(g, path);
  const Graph back = load_graph_binary(path);
  EXPECT_EQ(back, g);
  EXPECT_FALSE(back.directed());
  EXPECT_EQ(back.node_names(), g.node_names());
  EXPECT_EQ(back.checksum(), g.checksum());
}

TEST(RoundTrip, BinaryRejectsGarbage) {
  const auto path = temp_path("junk.bin");
  io::write_file(path, "not a graph");
  EXPECT_THROW(load_graph_binary(path), IoError);
}

TEST(Components, Count) {
  std::size_t count = 0;
  const auto comp = weak_components(Graph::from_arcs(5, {{0, 1}, {3, 2}}, true), &count);
  EXPECT_EQ(count, 3u);
  EXPECT_EQ(comp[0], comp[1]);
  EXPECT_EQ(comp[2], comp[3]);
  EXPECT_NE(comp[4], comp[0]);
}
