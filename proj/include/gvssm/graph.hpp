#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gvssm/matrix.hpp"
#include "gvssm/random.hpp"

namespace gvssm {

/// Compressed sparse row adjacency. Binary graphs store weight 1.
struct SparseAdjacency {
  std::size_t nodes = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> cols;
  std::vector<double> values;

  std::size_t degree(std::size_t i) const { return row_ptr[i + 1] - row_ptr[i]; }
  std::span<const std::size_t> neighbors(std::size_t i) const {
    return {cols.data() + row_ptr[i], degree(i)};
  }
  double weight(std::size_t i, std::size_t j) const;
  bool has_edge(std::size_t i, std::size_t j) const { return weight(i, j) != 0.0; }
  bool symmetric() const;
  bool has_self_loops() const;
  /// Undirected edge count (self-loops excluded).
  std::size_t edge_count() const;
  std::vector<std::pair<std::size_t, std::size_t>> edge_list() const;
  Matrix to_dense() const;

  /// Builds a binary symmetric adjacency from undirected pairs.
  static SparseAdjacency from_edges(std::size_t nodes,
                                    std::span<const std::pair<std::size_t, std::size_t>> edges);
};

/// a * x for sparse a.
Matrix spmm(const SparseAdjacency& a, const Matrix& x);

/// 8-neighbour grid over side x side pixels, row-major node order, no self-loops.
/// Throws ConfigError when side < 2.
SparseAdjacency build_grid_adjacency(std::size_t side);

/// D^-1/2 (A + I) D^-1/2 with D the degree of A + I. Throws ConfigError if `a`
/// is asymmetric or already carries self-loops.
SparseAdjacency normalize_adjacency(const SparseAdjacency& a);

/// Subgraph induced by `nodes` (local index i maps to nodes[i]).
SparseAdjacency induced_subgraph(const SparseAdjacency& a, std::span<const std::size_t> nodes);

struct TileGrid {
  int id = 0;
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t side = 0;
  std::size_t timesteps = 0;
};

/// Disjoint square tiles covering a width x height raster. Tiles that overhang the
/// raster edge are kept; their outside pixels are reported as no-data by the
/// graph builders.
std::vector<TileGrid> make_tiles(std::size_t width, std::size_t height, std::size_t side,
                                 std::size_t timesteps);

struct GridTopology {
  std::size_t side = 0;
  SparseAdjacency adjacency;
  SparseAdjacency normalized;

  static std::shared_ptr<const GridTopology> build(std::size_t side);
};

/// Exposure graph of one tile at one timestep. The topology is shared across
/// timesteps since the pixel grid does not change.
struct ExposureGraph {
  TileGrid tile;
  int timestep = 0;
  std::shared_ptr<const GridTopology> topology;
  Matrix features;                // nodes x bands
  std::vector<std::uint8_t> valid;  // 0 for no-data pixels

  std::size_t nodes() const noexcept { return features.rows(); }
  const SparseAdjacency& normalized() const { return topology->normalized; }
};

struct VulnerabilityGraph {
  TileGrid tile;
  int timestep = 0;
  std::vector<std::size_t> node_map;  // local node -> exposure node index
  SparseAdjacency adjacency;
  SparseAdjacency normalized;
  Matrix features;

  std::size_t nodes() const noexcept { return node_map.size(); }
  bool empty() const noexcept { return node_map.empty(); }
};

inline constexpr double kDefaultPresenceThreshold = 0.5;

/// Keeps valid nodes whose presence statistic is >= threshold and induces the
/// adjacency on them. An empty result is a legitimate (skippable) graph.
VulnerabilityGraph prune_to_vulnerability_graph(const ExposureGraph& g,
                                                std::span<const double> presence_prob,
                                                double threshold = kDefaultPresenceThreshold);

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
  void validate() const;
};

struct SplitAssignment {
  std::map<int, Split> by_tile;
  /// max over split and class of |split share - global share| / global share
  double max_relative_deviation = 0.0;
  double tolerance = 0.1;
  bool within_tolerance() const { return max_relative_deviation <= tolerance; }
  std::vector<int> tiles_in(Split s) const;
  std::string report() const;
};

/// Tile counts per split by largest remainder, each split at least one tile.
std::vector<std::size_t> split_capacities(std::size_t tiles, const SplitFractions& fractions);

/// Max relative class-share deviation across splits for an assignment given as
/// split index per tile (same order as `histograms`).
double split_deviation(const std::vector<std::vector<double>>& histograms,
                       std::span<const std::uint8_t> split_of_tile);

/// Greedy balanced split: tiles are visited heaviest first (seeded shuffle breaks
/// ties) and each goes to the split with remaining capacity that minimizes the
/// squared class-share deviation. Pairwise swaps across splits then refine the
/// result until no swap lowers the max relative deviation (ties broken by the
/// squared deviation). Throws ConfigError for fewer tiles than splits.
SplitAssignment split_tiles_balanced(const std::vector<TileGrid>& tiles,
                                     const std::vector<std::vector<double>>& class_histograms,
                                     const SplitFractions& fractions, Rng& rng,
                                     double tolerance = 0.1);

}  // namespace gvssm
