#include "gvssm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gvssm/errors.hpp"

namespace gvssm {

double SparseAdjacency::weight(std::size_t i, std::size_t j) const {
  auto nb = neighbors(i);
  auto it = std::lower_bound(nb.begin(), nb.end(), j);
  if (it == nb.end() || *it != j) return 0.0;
  return values[row_ptr[i] + static_cast<std::size_t>(it - nb.begin())];
}

bool SparseAdjacency::symmetric() const {
  for (std::size_t i = 0; i < nodes; ++i) {
    for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) {
      if (weight(cols[e], i) != values[e]) return false;
    }
  }
  return true;
}

bool SparseAdjacency::has_self_loops() const {
  for (std::size_t i = 0; i < nodes; ++i)
    if (has_edge(i, i)) return true;
  return false;
}

std::size_t SparseAdjacency::edge_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t j : neighbors(i))
      if (j > i) ++n;
  return n;
}

std::vector<std::pair<std::size_t, std::size_t>> SparseAdjacency::edge_list() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t j : neighbors(i))
      if (j > i) out.emplace_back(i, j);
  return out;
}

Matrix SparseAdjacency::to_dense() const {
  Matrix m(nodes, nodes);
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) m(i, cols[e]) = values[e];
  return m;
}

SparseAdjacency SparseAdjacency::from_edges(
    std::size_t nodes, std::span<const std::pair<std::size_t, std::size_t>> edges) {
  std::vector<std::vector<std::size_t>> nb(nodes);
  for (auto [a, b] : edges) {
    if (a >= nodes || b >= nodes) throw ConfigError("from_edges: node index out of range");
    nb[a].push_back(b);
    if (a != b) nb[b].push_back(a);
  }
  SparseAdjacency adj;
  adj.nodes = nodes;
  adj.row_ptr.assign(1, 0);
  for (auto& row : nb) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    adj.cols.insert(adj.cols.end(), row.begin(), row.end());
    adj.row_ptr.push_back(adj.cols.size());
  }
  adj.values.assign(adj.cols.size(), 1.0);
  return adj;
}

Matrix spmm(const SparseAdjacency& a, const Matrix& x) {
  if (x.rows() != a.nodes) {
    throw ShapeError("spmm: adjacency over " + std::to_string(a.nodes) + " nodes vs features " +
                     x.shape_string());
  }
  Matrix out(x.rows(), x.cols());
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < a.nodes; ++i) {
    double* orow = out.row(i).data();
    for (std::size_t e = a.row_ptr[i]; e < a.row_ptr[i + 1]; ++e) {
      const double w = a.values[e];
      const double* xrow = x.row(a.cols[e]).data();
      for (std::size_t c = 0; c < d; ++c) orow[c] += w * xrow[c];
    }
  }
  return out;
}

SparseAdjacency build_grid_adjacency(std::size_t side) {
  if (side < 2) throw ConfigError("build_grid_adjacency: side must be >= 2, got " + std::to_string(side));
  SparseAdjacency adj;
  adj.nodes = side * side;
  adj.row_ptr.assign(1, 0);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      // Row-major neighbour scan keeps column indices sorted.
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const long rr = static_cast<long>(r) + dr;
          const long cc = static_cast<long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(side) || cc >= static_cast<long>(side)) continue;
          adj.cols.push_back(static_cast<std::size_t>(rr) * side + static_cast<std::size_t>(cc));
        }
      }
      adj.row_ptr.push_back(adj.cols.size());
    }
  }
  adj.values.assign(adj.cols.size(), 1.0);
  return adj;
}

SparseAdjacency normalize_adjacency(const SparseAdjacency& a) {
  if (a.has_self_loops()) throw ConfigError("normalize_adjacency: input already has self-loops");
  if (!a.symmetric()) throw ConfigError("normalize_adjacency: input is not symmetric");
  std::vector<double> inv_sqrt(a.nodes);
  for (std::size_t i = 0; i < a.nodes; ++i) {
    double deg = 1.0;
    for (std::size_t e = a.row_ptr[i]; e < a.row_ptr[i + 1]; ++e) deg += a.values[e];
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  SparseAdjacency out;
  out.nodes = a.nodes;
  out.row_ptr.assign(1, 0);
  for (std::size_t i = 0; i < a.nodes; ++i) {
    bool self_done = false;
    auto push_self = [&] {
      out.cols.push_back(i);
      out.values.push_back(inv_sqrt[i] * inv_sqrt[i]);
      self_done = true;
    };
    for (std::size_t e = a.row_ptr[i]; e < a.row_ptr[i + 1]; ++e) {
      const std::size_t j = a.cols[e];
      if (!self_done && j > i) push_self();
      out.cols.push_back(j);
      out.values.push_back(a.values[e] * inv_sqrt[i] * inv_sqrt[j]);
    }
    if (!self_done) push_self();
    out.row_ptr.push_back(out.cols.size());
  }
  return out;
}

SparseAdjacency induced_subgraph(const SparseAdjacency& a, std::span<const std::size_t> nodes) {
  std::vector<long> local(a.nodes, -1);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] >= a.nodes) throw ConfigError("induced_subgraph: node index out of range");
    local[nodes[i]] = static_cast<long>(i);
  }
  SparseAdjacency out;
  out.nodes = nodes.size();
  out.row_ptr.assign(1, 0);
  std::vector<std::pair<std::size_t, double>> row;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    row.clear();
    const std::size_t g = nodes[i];
    for (std::size_t e = a.row_ptr[g]; e < a.row_ptr[g + 1]; ++e) {
      const long l = local[a.cols[e]];
      if (l >= 0) row.emplace_back(static_cast<std::size_t>(l), a.values[e]);
    }
    std::sort(row.begin(), row.end());
    for (auto [c, v] : row) {
      out.cols.push_back(c);
      out.values.push_back(v);
    }
    out.row_ptr.push_back(out.cols.size());
  }
  return out;
}

std::vector<TileGrid> make_tiles(std::size_t width, std::size_t height, std::size_t side,
                                 std::size_t timesteps) {
  if (side < 2) throw ConfigError("make_tiles: tile side must be >= 2");
  std::vector<TileGrid> tiles;
  int id = 0;
  for (std::size_t r = 0; r < height; r += side)
    for (std::size_t c = 0; c < width; c += side) tiles.push_back({id++, r, c, side, timesteps});
  return tiles;
}

std::shared_ptr<const GridTopology> GridTopology::build(std::size_t side) {
  auto topo = std::make_shared<GridTopology>();
  topo->side = side;
  topo->adjacency = build_grid_adjacency(side);
  topo->normalized = normalize_adjacency(topo->adjacency);
  return topo;
}

VulnerabilityGraph prune_to_vulnerability_graph(const ExposureGraph& g,
                                                std::span<const double> presence_prob,
                                                double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("prune_to_vulnerability_graph: threshold must lie in (0, 1)");
  }
  if (presence_prob.size() != g.nodes()) {
    throw ShapeError("prune_to_vulnerability_graph: presence length does not match node count");
  }
  VulnerabilityGraph v;
  v.tile = g.tile;
  v.timestep = g.timestep;
  for (std::size_t i = 0; i < g.nodes(); ++i) {
    const bool ok = g.valid.empty() || g.valid[i] != 0;
    if (ok && presence_prob[i] >= threshold) v.node_map.push_back(i);
  }
  v.adjacency = induced_subgraph(g.topology->adjacency, v.node_map);
  v.normalized = normalize_adjacency(v.adjacency);
  v.features = gather_rows(g.features, v.node_map);
  return v;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split name '" + s + "'");
}

void SplitFractions::validate() const {
  if (!(train > 0 && validation > 0 && test > 0)) {
    throw ConfigError("split fractions must all be positive");
  }
  if (std::abs(train + validation + test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
}

std::vector<int> SplitAssignment::tiles_in(Split s) const {
  std::vector<int> out;
  for (auto [id, sp] : by_tile)
    if (sp == s) out.push_back(id);
  return out;
}

std::string SplitAssignment::report() const {
  std::ostringstream os;
  os << "train_tiles " << tiles_in(Split::train).size() << "\n"
     << "validation_tiles " << tiles_in(Split::validation).size() << "\n"
     << "test_tiles " << tiles_in(Split::test).size() << "\n"
     << "max_relative_deviation " << max_relative_deviation << "\n"
     << "tolerance " << tolerance << "\n"
     << "within_tolerance " << (within_tolerance() ? "yes" : "no") << "\n";
  return os.str();
}

std::vector<std::size_t> split_capacities(std::size_t tiles, const SplitFractions& f) {
  if (tiles < 3) throw ConfigError("split_capacities: need at least 3 tiles, got " + std::to_string(tiles));
  const double fr[3] = {f.train, f.validation, f.test};
  std::vector<std::size_t> cap(3, 1);
  std::size_t left = tiles - 3;
  // Largest remainder over the tiles left after the one-per-split minimum.
  std::vector<double> want(3), rem(3);
  std::size_t used = 0;
  for (int s = 0; s < 3; ++s) {
    want[s] = fr[s] * static_cast<double>(tiles) - 1.0;
    const double base = std::max(0.0, std::floor(want[s]));
    cap[s] += static_cast<std::size_t>(base);
    used += static_cast<std::size_t>(base);
    rem[s] = want[s] - base;
  }
  while (used > left) {
    auto s = static_cast<std::size_t>(std::max_element(cap.begin(), cap.end()) - cap.begin());
    --cap[s];
    --used;
  }
  while (used < left) {
    auto s = static_cast<std::size_t>(std::max_element(rem.begin(), rem.end()) - rem.begin());
    ++cap[s];
    rem[s] = -1.0;
    ++used;
  }
  return cap;
}

namespace {

std::vector<double> global_shares(const std::vector<std::vector<double>>& h) {
  const std::size_t k = h.empty() ? 0 : h.front().size();
  std::vector<double> g(k, 0.0);
  for (const auto& row : h)
    for (std::size_t c = 0; c < k; ++c) g[c] += row[c];
  const double total = std::accumulate(g.begin(), g.end(), 0.0);
  if (total > 0)
    for (double& v : g) v /= total;
  return g;
}

}  // namespace

double split_deviation(const std::vector<std::vector<double>>& histograms,
                       std::span<const std::uint8_t> split_of_tile) {
  const auto g = global_shares(histograms);
  const std::size_t k = g.size();
  double worst = 0.0;
  for (std::uint8_t s = 0; s < 3; ++s) {
    std::vector<double> m(k, 0.0);
    double total = 0.0;
    for (std::size_t t = 0; t < histograms.size(); ++t) {
      if (split_of_tile[t] != s) continue;
      for (std::size_t c = 0; c < k; ++c) {
        m[c] += histograms[t][c];
        total += histograms[t][c];
      }
    }
    if (total <= 0) continue;
    for (std::size_t c = 0; c < k; ++c)
      if (g[c] > 0) worst = std::max(worst, std::abs(m[c] / total - g[c]) / g[c]);
  }
  return worst;
}

SplitAssignment split_tiles_balanced(const std::vector<TileGrid>& tiles,
                                     const std::vector<std::vector<double>>& class_histograms,
                                     const SplitFractions& fractions, Rng& rng, double tolerance) {
  fractions.validate();
  if (tiles.size() < 3) {
    throw ConfigError("split_tiles_balanced: need at least 3 tiles for 3 splits, got " +
                      std::to_string(tiles.size()));
  }
  if (class_histograms.size() != tiles.size()) {
    throw ConfigError("split_tiles_balanced: one class histogram per tile required");
  }
  const auto g = global_shares(class_histograms);
  const std::size_t k = g.size();
  const auto cap = split_capacities(tiles.size(), fractions);

  std::vector<std::size_t> order(tiles.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  std::vector<double> mass(tiles.size());
  for (std::size_t t = 0; t < tiles.size(); ++t)
    mass[t] = std::accumulate(class_histograms[t].begin(), class_histograms[t].end(), 0.0);
  std::stable_sort(order.begin(), order.end(),
                   [&mass](std::size_t a, std::size_t b) { return mass[a] > mass[b]; });

  std::vector<std::vector<double>> sums(3, std::vector<double>(k, 0.0));
  std::vector<std::size_t> filled(3, 0);
  std::vector<std::uint8_t> split_of(tiles.size(), 0);

  auto cost = [&](const std::vector<std::vector<double>>& s) {
    double c = 0.0;
    for (const auto& row : s) {
      const double total = std::accumulate(row.begin(), row.end(), 0.0);
      if (total <= 0) continue;
      for (std::size_t j = 0; j < k; ++j) {
        const double d = row[j] / total - g[j];
        c += d * d;
      }
    }
    return c;
  };

  for (std::size_t t : order) {
    int best = -1;
    double best_cost = 0.0;
    for (int s = 0; s < 3; ++s) {
      if (filled[s] >= cap[s]) continue;
      auto trial = sums;
      for (std::size_t j = 0; j < k; ++j) trial[s][j] += class_histograms[t][j];
      // Prefer emptier splits on ties so capacity fills evenly.
      const double c = cost(trial) +
                       1e-12 * static_cast<double>(filled[s]) / static_cast<double>(cap[s]);
      if (best < 0 || c < best_cost) {
        best = s;
        best_cost = c;
      }
    }
    for (std::size_t j = 0; j < k; ++j) sums[best][j] += class_histograms[t][j];
    ++filled[best];
    split_of[t] = static_cast<std::uint8_t>(best);
  }

  // Pairwise swaps between splits keep the capacities and continue while they
  // lower (worst relative deviation, squared share error) lexicographically.
  auto squared = [&] {
    std::vector<std::vector<double>> s(3, std::vector<double>(k, 0.0));
    for (std::size_t t = 0; t < tiles.size(); ++t)
      for (std::size_t j = 0; j < k; ++j) s[split_of[t]][j] += class_histograms[t][j];
    return cost(s);
  };
  constexpr double eps = 1e-12;
  double cur_dev = split_deviation(class_histograms, split_of);
  double cur_sq = squared();
  for (bool improved = true; improved;) {
    improved = false;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      for (std::size_t j = i + 1; j < tiles.size(); ++j) {
        if (split_of[i] == split_of[j]) continue;
        std::swap(split_of[i], split_of[j]);
        const double dev = split_deviation(class_histograms, split_of);
        const double sq = squared();
        if (dev < cur_dev - eps || (dev <= cur_dev + eps && sq < cur_sq - eps)) {
          cur_dev = dev;
          cur_sq = sq;
          improved = true;
        } else {
          std::swap(split_of[i], split_of[j]);
        }
      }
    }
  }

  SplitAssignment out;
  out.tolerance = tolerance;
  for (std::size_t t = 0; t < tiles.size(); ++t) out.by_tile[tiles[t].id] = static_cast<Split>(split_of[t]);
  out.max_relative_deviation = split_deviation(class_histograms, split_of);
  return out;
}

}  // namespace gvssm
