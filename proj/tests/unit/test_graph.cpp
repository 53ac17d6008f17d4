#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "leafgraph/graph.hpp"
#include "leafgraph/linalg.hpp"

using namespace leafgraph;

namespace {

Tensor random_features(std::size_t n, std::size_t d, Rng& rng) {
  Tensor t({n, d});
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

std::set<std::pair<std::uint32_t, std::uint32_t>> edge_set(const SimilarityGraph& g) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> e;
  for (std::uint32_t v = 0; v < g.n; ++v)
    for (auto u : g.neighbors_of(v)) e.emplace(v, u);
  return e;
}

bool is_symmetric(const SimilarityGraph& g) {
  auto e = edge_set(g);
  for (auto [a, b] : e)
    if (!e.count({b, a})) return false;
  return true;
}

SimilarityGraph star(std::uint32_t leaves) {
  std::vector<std::vector<std::uint32_t>> adj(leaves + 1);
  for (std::uint32_t i = 1; i <= leaves; ++i) {
    adj[0].push_back(i);
    adj[i].push_back(0);
  }
  return SimilarityGraph::from_adjacency_lists(adj, 0.5f);
}

}  // namespace

TEST(Cosine, Examples) {
  std::vector<double> v{0.3, -1.2, 4.0};
  EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-15);
  EXPECT_EQ(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
  EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 2, 2}, std::vector<double>{2, 1, 2}), 8.0 / 9.0, 1e-15);
  EXPECT_THROW(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{0, 1}), DegenerateInputError);
}

TEST(BuildAdjacency, IdenticalVectorsGiveTriangle) {
  auto g = build_adjacency(Tensor::matrix({{1, 2}, {1, 2}, {1, 2}}), {0.5, 0, 1});
  EXPECT_EQ(g.offsets, (std::vector<std::uint32_t>{0, 2, 4, 6}));
  EXPECT_EQ(g.neighbors, (std::vector<std::uint32_t>{1, 2, 0, 2, 0, 1}));
}

TEST(BuildAdjacency, ThresholdAndFallback) {
  const double r = 1.0 / std::sqrt(2.0);
  Tensor f = Tensor::matrix({{1, 0}, {0, 1}, {r, r}});
  auto none = build_adjacency(f, {0.8, 0, 1});
  EXPECT_TRUE(none.neighbors.empty());
  auto g = build_adjacency(f, {0.8, 1, 1});
  std::set<std::pair<std::uint32_t, std::uint32_t>> want{{0, 2}, {2, 0}, {1, 2}, {2, 1}};
  EXPECT_EQ(edge_set(g), want);
}

TEST(BuildAdjacency, MinusOneThresholdIsComplete) {
  Rng rng(1);
  auto g = build_adjacency(random_features(6, 3, rng), {-1.0, 0, 1});
  for (std::uint32_t v = 0; v < 6; ++v) EXPECT_EQ(g.degree(v), 5u);
}

TEST(BuildAdjacency, ZeroRowsOnlyJoinThroughFallback) {
  Tensor f = Tensor::matrix({{0, 0}, {1, 0}, {1, 0.1}});
  auto g = build_adjacency(f, {-1.0, 0, 1});
  EXPECT_EQ(g.degree(0), 0u);
  auto h = build_adjacency(f, {-1.0, 1, 1});
  EXPECT_EQ(h.degree(0), 1u);
  EXPECT_TRUE(is_symmetric(h));
}

TEST(BuildAdjacency, Guards) {
  EXPECT_THROW(build_adjacency(Tensor({0, 2})), ConfigError);
  EXPECT_THROW(build_adjacency(Tensor::matrix({{1, 0}}), {1.0, 0, 1}), RangeError);
}

TEST(BuildAdjacency, SymmetryAndMonotonicity) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed, "graph-prop");
    auto f = random_features(25, 4, rng);
    auto lo = build_adjacency(f, {0.2, 0, 1}), hi = build_adjacency(f, {0.6, 0, 1});
    EXPECT_TRUE(is_symmetric(lo));
    EXPECT_TRUE(is_symmetric(hi));
    auto el = edge_set(lo);
    for (auto e : edge_set(hi)) EXPECT_TRUE(el.count(e));
    auto fb = build_adjacency(f, {0.6, 3, 1});
    EXPECT_TRUE(is_symmetric(fb));
    for (std::uint32_t v = 0; v < fb.n; ++v) EXPECT_GE(fb.degree(v), 3u);
    for (std::uint32_t v = 0; v < fb.n; ++v)
      for (auto u : fb.neighbors_of(v)) EXPECT_NE(u, v);
  }
}

TEST(BuildAdjacency, ThreadCountDoesNotMatter) {
  Rng rng(3);
  SimilarityIndex idx(random_features(57, 8, rng));
  const auto one = idx.matrix(1);
  for (unsigned t : {2u, 3u, 8u}) EXPECT_EQ(idx.matrix(t), one);
  EXPECT_EQ(build_adjacency(idx, {0.3, 2, 1}), build_adjacency(idx, {0.3, 2, 7}));
}

TEST(NormalizeAdjacency, TwoNodes) {
  auto g = SimilarityGraph::from_adjacency_lists({{1}, {0}}, 0.5f);
  EXPECT_EQ(normalize_adjacency(g), Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}}));
}

TEST(NormalizeAdjacency, IsolatedNodeAndRegularRows) {
  auto g = SimilarityGraph::from_adjacency_lists({{1}, {0}, {}}, 0.5f);
  auto a = normalize_adjacency(g);
  EXPECT_EQ(a(2, 2), 1.0);
  EXPECT_EQ(a(2, 0), 0.0);
  // 5-cycle: every node has degree 2
  std::vector<std::vector<std::uint32_t>> cyc(5);
  for (std::uint32_t i = 0; i < 5; ++i) cyc[i] = {(i + 1) % 5, (i + 4) % 5};
  auto c = normalize_adjacency(SimilarityGraph::from_adjacency_lists(cyc, 0.5f));
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += c(i, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(NormalizeAdjacency, SymmetricWithBoundedSpectrum) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed, "norm-prop");
    auto g = build_adjacency(random_features(15, 3, rng), {0.4, 2, 1});
    auto a = normalize_adjacency(g);
    EXPECT_LT(max_abs_diff(a, transpose(a)), 1e-12);
    EXPECT_LE(top_singular_vector(a).sigma, 1.0 + 1e-9);
  }
}

TEST(NormalizeAdjacency, CapIsEnforced) {
  auto g = SimilarityGraph::from_adjacency_lists(std::vector<std::vector<std::uint32_t>>(5), 0.0f);
  try {
    normalize_adjacency(g, 4);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("GraphSAGE"), std::string::npos);
  }
}

TEST(SampleNeighbors, LargeFanOutTakesWholeNeighborhood) {
  Rng frng(2);
  auto g = build_adjacency(random_features(12, 3, frng), {0.3, 1, 1});
  Rng rng(5);
  std::vector<std::uint32_t> targets{0, 3, 7};
  std::vector<std::size_t> fans{100, 100};
  auto s = sample_neighbors(g, targets, fans, rng);
  ASSERT_EQ(s.hops.size(), 2u);
  for (const auto& hop : s.hops) {
    for (std::size_t i = 0; i < hop.nodes.size(); ++i) {
      std::set<std::uint32_t> got(hop.neighbors[i].begin(), hop.neighbors[i].end());
      auto full = g.neighbors_of(hop.nodes[i]);
      EXPECT_EQ(got, std::set<std::uint32_t>(full.begin(), full.end()));
    }
  }
  // every frontier is a prefix of the next
  EXPECT_TRUE(std::equal(s.hops[0].nodes.begin(), s.hops[0].nodes.end(), s.hops[1].nodes.begin()));
  EXPECT_TRUE(std::equal(s.hops[1].nodes.begin(), s.hops[1].nodes.end(), s.input_nodes.begin()));
}

TEST(SampleNeighbors, IsolatedTargetIsFine) {
  auto g = SimilarityGraph::from_adjacency_lists({{}, {2}, {1}}, 0.5f);
  Rng rng(0);
  std::vector<std::uint32_t> t{0};
  std::vector<std::size_t> f{3};
  auto s = sample_neighbors(g, t, f, rng);
  EXPECT_TRUE(s.hops[0].neighbors[0].empty());
  EXPECT_EQ(s.input_nodes, t);
}

TEST(SampleNeighbors, Guards) {
  auto g = star(3);
  Rng rng(0);
  std::vector<std::uint32_t> bad{9}, ok{0};
  std::vector<std::size_t> f{1}, zero{0}, empty;
  EXPECT_THROW(sample_neighbors(g, bad, f, rng), RangeError);
  EXPECT_THROW(sample_neighbors(g, ok, zero, rng), ConfigError);
  EXPECT_THROW(sample_neighbors(g, ok, empty, rng), ConfigError);
}

TEST(SampleNeighbors, StarCentreIsUniformOverPairs) {
  auto g = star(5);
  std::vector<std::uint32_t> t{0};
  std::vector<std::size_t> f{2};
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> counts;
  const int trials = 10000;
  for (int seed = 0; seed < trials; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed), "star");
    auto s = sample_neighbors(g, t, f, rng);
    auto nb = s.hops[0].neighbors[0];
    ASSERT_EQ(nb.size(), 2u);
    ASSERT_NE(nb[0], nb[1]);
    ++counts[{std::min(nb[0], nb[1]), std::max(nb[0], nb[1])}];
  }
  ASSERT_EQ(counts.size(), 10u);
  double chi2 = 0;
  for (auto& [pair, c] : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
  // 99th percentile of chi-square with 9 degrees of freedom
  EXPECT_LT(chi2, 21.666);
}

TEST(SampleNeighbors, Deterministic) {
  Rng frng(8);
  auto g = build_adjacency(random_features(30, 3, frng), {0.2, 2, 1});
  std::vector<std::uint32_t> t{1, 2, 3};
  std::vector<std::size_t> f{3, 2};
  Rng a(4), b(4);
  auto sa = sample_neighbors(g, t, f, a), sb = sample_neighbors(g, t, f, b);
  EXPECT_EQ(sa.input_nodes, sb.input_nodes);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(sa.hops[k].neighbors, sb.hops[k].neighbors);
}

TEST(Attach, MatchesBuildRule) {
  Tensor f = Tensor::matrix({{1, 0}, {0, 1}, {1, 1}});
  SimilarityIndex idx(f);
  auto a = attach(idx, std::vector<double>{1, 0.1}, 0.9, 0);
  EXPECT_EQ(a.nodes, (std::vector<std::uint32_t>{0}));
  auto b = attach(idx, std::vector<double>{0, 0}, 0.9, 2);
  EXPECT_EQ(b.nodes, (std::vector<std::uint32_t>{0, 1}));
  EXPECT_THROW(attach(idx, std::vector<double>{1, 2, 3}, 0.5, 1), ShapeError);
}

TEST(GraphCache, RoundTripAndCorruption) {
  Rng rng(6);
  auto g = build_adjacency(random_features(20, 3, rng), {0.4, 2, 1});
  const auto bytes = encode_graph(g);
  EXPECT_EQ(decode_graph(bytes), g);
  EXPECT_EQ(encode_graph(decode_graph(bytes)), bytes);
  auto magic = bytes;
  magic[1] = 'X';
  EXPECT_THROW(decode_graph(magic), FormatError);
  auto ver = bytes;
  ver[4] = 2;
  EXPECT_THROW(decode_graph(ver), UnsupportedVersionError);
  auto trunc = bytes;
  trunc.resize(bytes.size() - 3);
  EXPECT_THROW(decode_graph(trunc), FormatError);
  auto range = bytes;
  range[range.size() - 4] = 0xFF;
  EXPECT_THROW(decode_graph(range), FormatError);
}
