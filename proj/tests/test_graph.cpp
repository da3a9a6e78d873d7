#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "gvssm/errors.hpp"
#include "gvssm/graph.hpp"
#include "gvssm/random.hpp"

using namespace gvssm;

namespace {

// Chebyshev distance 1 over all pairs.
std::set<std::pair<std::size_t, std::size_t>> brute_force_edges(std::size_t side) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  const std::size_t n = side * side;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) {
      const long dr = static_cast<long>(a / side) - static_cast<long>(b / side);
      const long dc = static_cast<long>(a % side) - static_cast<long>(b % side);
      if (std::max(std::abs(dr), std::abs(dc)) == 1) out.emplace(a, b);
    }
  return out;
}

std::set<std::pair<std::size_t, std::size_t>> edge_set(const SparseAdjacency& a) {
  const auto list = a.edge_list();
  return {list.begin(), list.end()};
}

ExposureGraph grid_graph(std::size_t side) {
  ExposureGraph g;
  g.tile.side = side;
  g.topology = GridTopology::build(side);
  g.features = Matrix(side * side, 1);
  g.valid.assign(side * side, 1);
  return g;
}

}  // namespace

TEST(GridAdjacency, SideTwoIsComplete) {
  const SparseAdjacency a = build_grid_adjacency(2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.degree(i), 3u);
  EXPECT_EQ(a.edge_count(), 6u);
}

TEST(GridAdjacency, SideThreeDegrees) {
  const SparseAdjacency a = build_grid_adjacency(3);
  EXPECT_EQ(a.degree(4), 8u);
  for (std::size_t c : {0u, 2u, 6u, 8u}) EXPECT_EQ(a.degree(c), 3u);
  for (std::size_t e : {1u, 3u, 5u, 7u}) EXPECT_EQ(a.degree(e), 5u);
}

TEST(GridAdjacency, MatchesBruteForceForAllSmallSides) {
  for (std::size_t side = 2; side <= 10; ++side) {
    const SparseAdjacency a = build_grid_adjacency(side);
    EXPECT_EQ(edge_set(a), brute_force_edges(side)) << "side " << side;
    EXPECT_TRUE(a.symmetric());
    EXPECT_FALSE(a.has_self_loops());
  }
}

TEST(GridAdjacency, RejectsDegenerateSide) {
  EXPECT_THROW(build_grid_adjacency(1), ConfigError);
}

TEST(NormalizeAdjacency, IsolatedNodeIsOne) {
  const SparseAdjacency a = SparseAdjacency::from_edges(1, {});
  const Matrix d = normalize_adjacency(a).to_dense();
  EXPECT_EQ(d, (Matrix{{1.0}}));
}

TEST(NormalizeAdjacency, TwoNodePathIsHalves) {
  const std::pair<std::size_t, std::size_t> e[] = {{0, 1}};
  const Matrix d = normalize_adjacency(SparseAdjacency::from_edges(2, e)).to_dense();
  for (double v : d.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(NormalizeAdjacency, MatchesDenseFormula) {
  for (std::size_t side = 2; side <= 6; ++side) {
    const SparseAdjacency a = build_grid_adjacency(side);
    const Matrix got = normalize_adjacency(a).to_dense();
    const std::size_t n = side * side;
    Matrix at = a.to_dense();
    for (std::size_t i = 0; i < n; ++i) at(i, i) += 1.0;
    std::vector<double> deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) deg[i] += at(i, j);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_NEAR(got(i, j), at(i, j) / std::sqrt(deg[i] * deg[j]), 1e-15);
        EXPECT_DOUBLE_EQ(got(i, j), got(j, i));
      }
  }
}

TEST(NormalizeAdjacency, RejectsSelfLoopsAndAsymmetry) {
  SparseAdjacency a = build_grid_adjacency(2);
  EXPECT_THROW(normalize_adjacency(normalize_adjacency(a)), ConfigError);
  a.values[0] = 2.0;
  EXPECT_THROW(normalize_adjacency(a), ConfigError);
}

TEST(Spmm, MatchesDenseProduct) {
  Rng rng(2);
  const SparseAdjacency a = normalize_adjacency(build_grid_adjacency(4));
  Matrix x(16, 3);
  for (double& v : x.data()) v = rng.next_gaussian();
  const Matrix got = spmm(a, x);
  const Matrix want = matmul(a.to_dense(), x);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-14);
}

TEST(Prune, AllPresentKeepsEverything) {
  const ExposureGraph g = grid_graph(4);
  const std::vector<double> p(16, 1.0);
  const VulnerabilityGraph v = prune_to_vulnerability_graph(g, p);
  EXPECT_EQ(v.nodes(), 16u);
  EXPECT_EQ(edge_set(v.adjacency), edge_set(g.topology->adjacency));
}

TEST(Prune, NothingPresentIsEmpty) {
  const ExposureGraph g = grid_graph(4);
  EXPECT_TRUE(prune_to_vulnerability_graph(g, std::vector<double>(16, 0.0)).empty());
}

TEST(Prune, CheckerboardMatchesBruteForceInducedSubgraph) {
  const ExposureGraph g = grid_graph(4);
  std::vector<double> p(16);
  for (std::size_t i = 0; i < 16; ++i) p[i] = ((i / 4 + i % 4) % 2 == 0) ? 0.9 : 0.1;
  const VulnerabilityGraph v = prune_to_vulnerability_graph(g, p, 0.5);
  ASSERT_EQ(v.nodes(), 8u);
  // Kept cells touch only diagonally.
  for (std::size_t a = 0; a < v.nodes(); ++a)
    for (std::size_t b = 0; b < v.nodes(); ++b) {
      const std::size_t ia = v.node_map[a], ib = v.node_map[b];
      const long dr = static_cast<long>(ia / 4) - static_cast<long>(ib / 4);
      const long dc = static_cast<long>(ia % 4) - static_cast<long>(ib % 4);
      const bool want = a != b && std::max(std::abs(dr), std::abs(dc)) == 1;
      EXPECT_EQ(v.adjacency.has_edge(a, b), want);
    }
}

TEST(Prune, RandomMapsMatchBruteForce) {
  Rng rng(123);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t side = 2 + rng.next_below(9);
    ExposureGraph g = grid_graph(side);
    const std::size_t n = side * side;
    std::vector<double> p(n);
    for (double& v : p) v = rng.next_unit();
    for (std::size_t i = 0; i < n; ++i) g.valid[i] = rng.next_unit() < 0.9 ? 1 : 0;
    const VulnerabilityGraph v = prune_to_vulnerability_graph(g, p, 0.5);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < n; ++i)
      if (g.valid[i] && p[i] >= 0.5) keep.push_back(i);
    ASSERT_EQ(v.node_map, keep);
    const auto full = brute_force_edges(side);
    std::set<std::pair<std::size_t, std::size_t>> want;
    for (std::size_t a = 0; a < keep.size(); ++a)
      for (std::size_t b = a + 1; b < keep.size(); ++b)
        if (full.count({keep[a], keep[b]})) want.emplace(a, b);
    EXPECT_EQ(edge_set(v.adjacency), want);
    if (!v.empty()) EXPECT_TRUE(v.normalized.has_self_loops());
  }
}

TEST(InducedSubgraph, PreservesLocalOrder) {
  const SparseAdjacency a = build_grid_adjacency(3);
  const std::size_t nodes[] = {4, 0, 8};
  const SparseAdjacency s = induced_subgraph(a, nodes);
  EXPECT_TRUE(s.has_edge(0, 1));
  EXPECT_TRUE(s.has_edge(0, 2));
  EXPECT_FALSE(s.has_edge(1, 2));
}

TEST(Tiles, CoverRasterWithOverhang) {
  const auto tiles = make_tiles(10, 7, 4, 3);
  ASSERT_EQ(tiles.size(), 6u);
  EXPECT_EQ(tiles[5].row0, 4u);
  EXPECT_EQ(tiles[5].col0, 8u);
  for (std::size_t i = 0; i < tiles.size(); ++i) EXPECT_EQ(tiles[i].id, static_cast<int>(i));
}

TEST(Split, CapacitiesByLargestRemainder) {
  EXPECT_EQ(split_capacities(16, SplitFractions{0.6, 0.2, 0.2}), (std::vector<std::size_t>{10, 3, 3}));
  EXPECT_EQ(split_capacities(3, SplitFractions{0.9, 0.05, 0.05}), (std::vector<std::size_t>{1, 1, 1}));
  EXPECT_THROW(split_capacities(2, SplitFractions{}), ConfigError);
}

TEST(Split, ThreeIdenticalTilesOneEach) {
  const auto tiles = make_tiles(6, 2, 2, 1);
  const std::vector<std::vector<double>> hist(3, {1.0, 1.0});
  Rng rng(1);
  const SplitAssignment a = split_tiles_balanced(tiles, hist, SplitFractions{1.0 / 3, 1.0 / 3, 1.0 / 3}, rng);
  for (Split s : {Split::train, Split::validation, Split::test}) EXPECT_EQ(a.tiles_in(s).size(), 1u);
  EXPECT_NEAR(a.max_relative_deviation, 0.0, 1e-12);
}

TEST(Split, RefinedAssignmentIsSwapOptimal) {
  // One-hot class histograms over <= 8 tiles, so the exhaustive optimum is cheap.
  Rng data_rng(5);
  int optimal = 0;
  const int reps = 20;
  for (int rep = 0; rep < reps; ++rep) {
    const std::size_t n = 5 + data_rng.next_below(4);
    const auto tiles = make_tiles(2 * n, 2, 2, 1);
    std::vector<std::vector<double>> hist(n, std::vector<double>(3, 0.0));
    for (auto& h : hist) h[data_rng.next_below(3)] = 1.0 + data_rng.next_below(3);
    const SplitFractions f{0.5, 0.25, 0.25};
    const auto caps = split_capacities(n, f);
    double best = 1e300;
    std::vector<std::uint8_t> assign(n, 0);
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= 3;
    for (std::size_t code = 0; code < total; ++code) {
      std::size_t c = code;
      std::vector<std::size_t> count(3, 0);
      for (std::size_t i = 0; i < n; ++i, c /= 3) ++count[assign[i] = static_cast<std::uint8_t>(c % 3)];
      if (count != caps) continue;
      best = std::min(best, split_deviation(hist, assign));
    }
    Rng rng(rep);
    const SplitAssignment a = split_tiles_balanced(tiles, hist, f, rng);
    std::vector<std::uint8_t> got(n);
    std::vector<std::size_t> count(3, 0);
    for (std::size_t i = 0; i < n; ++i) ++count[got[i] = static_cast<std::uint8_t>(a.by_tile.at(tiles[i].id))];
    EXPECT_EQ(count, caps);
    EXPECT_DOUBLE_EQ(a.max_relative_deviation, split_deviation(hist, got));
    EXPECT_GE(a.max_relative_deviation, best - 1e-12);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if (got[i] == got[j]) continue;
        std::vector<std::uint8_t> s = got;
        std::swap(s[i], s[j]);
        EXPECT_GE(split_deviation(hist, s), a.max_relative_deviation - 1e-12) << "rep " << rep;
      }
    if (a.max_relative_deviation <= best + 1e-12) ++optimal;
  }
  RecordProperty("reps_at_exhaustive_optimum", optimal);
}

TEST(Split, SeedReproducible) {
  const auto tiles = make_tiles(8, 8, 2, 1);
  Rng hist_rng(9);
  std::vector<std::vector<double>> hist(tiles.size(), std::vector<double>(4));
  for (auto& h : hist)
    for (double& v : h) v = hist_rng.next_unit();
  Rng a(3), b(3);
  EXPECT_EQ(split_tiles_balanced(tiles, hist, SplitFractions{}, a).by_tile,
            split_tiles_balanced(tiles, hist, SplitFractions{}, b).by_tile);
}

TEST(Split, NamesRoundTrip) {
  for (Split s : {Split::train, Split::validation, Split::test}) EXPECT_EQ(split_from_string(to_string(s)), s);
  EXPECT_THROW(split_from_string("holdout"), ConfigError);
}
