#include "gvssm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "gvssm/checkpoint.hpp"
#include "gvssm/errors.hpp"
#include "gvssm/export.hpp"
#include "gvssm/module_gradcheck.hpp"
#include "gvssm/raster.hpp"

namespace gvssm {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

struct Field {
  std::string key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

template <typename Ref>
Field real(const char* key, Ref ref) {
  return {key, [ref](const PipelineConfig& c) { return format_double(ref(const_cast<PipelineConfig&>(c))); },
          [ref, key](PipelineConfig& c, const std::string& v) { ref(c) = parse_double(key, v); }};
}

template <typename Ref>
Field count(const char* key, Ref ref) {
  return {key, [ref](const PipelineConfig& c) { return std::to_string(ref(const_cast<PipelineConfig&>(c))); },
          [ref, key](PipelineConfig& c, const std::string& v) {
            ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(parse_uint(key, v));
          }};
}

template <typename Ref>
Field integer(const char* key, Ref ref) {
  return {key, [ref](const PipelineConfig& c) { return std::to_string(ref(const_cast<PipelineConfig&>(c))); },
          [ref, key](PipelineConfig& c, const std::string& v) { ref(c) = static_cast<int>(parse_int(key, v)); }};
}

template <typename Ref>
Field boolean(const char* key, Ref ref) {
  return {key, [ref](const PipelineConfig& c) { return std::string(ref(const_cast<PipelineConfig&>(c)) ? "true" : "false"); },
          [ref, key](PipelineConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}

#define GVSSM_REF(expr) [](PipelineConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = [] {
    std::vector<Field> f;
    // Scenario
    f.push_back(count("grid", GVSSM_REF(scenario.grid)));
    f.push_back(count("timesteps", GVSSM_REF(scenario.timesteps)));
    f.push_back(count("classes", GVSSM_REF(scenario.classes)));
    f.push_back(real("growth_rate", GVSSM_REF(scenario.growth_rate)));
    f.push_back(count("shock_timestep", GVSSM_REF(scenario.shock_timestep)));
    f.push_back(count("shock_row0", GVSSM_REF(scenario.shock_row0)));
    f.push_back(count("shock_col0", GVSSM_REF(scenario.shock_col0)));
    f.push_back(count("shock_rows", GVSSM_REF(scenario.shock_rows)));
    f.push_back(count("shock_cols", GVSSM_REF(scenario.shock_cols)));
    f.push_back(real("shock_fraction", GVSSM_REF(scenario.shock_fraction)));
    f.push_back(real("rebuild_rate", GVSSM_REF(scenario.rebuild_rate)));
    f.push_back(real("noise", GVSSM_REF(scenario.noise)));
    f.push_back(count("block_size", GVSSM_REF(scenario.block_size)));
    f.push_back(real("field_wavelength", GVSSM_REF(scenario.field_wavelength)));
    f.push_back(real("prior_sigma_floor", GVSSM_REF(scenario.prior_sigma_floor)));
    f.push_back(real("presence_offset", GVSSM_REF(scenario.presence_offset)));
    f.push_back(real("class_contrast", GVSSM_REF(scenario.class_contrast)));
    f.push_back(real("class_context", GVSSM_REF(scenario.class_context)));
    f.push_back(count("scenario_seed", GVSSM_REF(scenario.seed)));
    // Training
    f.push_back(real("learning_rate", GVSSM_REF(train.adam.learning_rate)));
    f.push_back(real("adam_beta1", GVSSM_REF(train.adam.beta1)));
    f.push_back(real("adam_beta2", GVSSM_REF(train.adam.beta2)));
    f.push_back(real("adam_epsilon", GVSSM_REF(train.adam.epsilon)));
    f.push_back(integer("epochs", GVSSM_REF(train.epochs)));
    f.push_back(count("batch_tiles", GVSSM_REF(train.batch_tiles)));
    f.push_back(count("samples", GVSSM_REF(train.samples)));
    f.push_back(count("seed", GVSSM_REF(train.seed)));
    f.push_back(real("temperature", GVSSM_REF(train.objective.temperature.tau)));
    f.push_back(real("pruning_logit", GVSSM_REF(train.objective.pruning_logit)));
    f.push_back(real("coef_reconstruction", GVSSM_REF(train.objective.reconstruction)));
    f.push_back(real("coef_kl_height", GVSSM_REF(train.objective.kl_height)));
    f.push_back(real("coef_kl_presence", GVSSM_REF(train.objective.kl_presence)));
    f.push_back(real("coef_kl_vulnerability", GVSSM_REF(train.objective.kl_vulnerability)));
    f.push_back(real("coef_cross_entropy", GVSSM_REF(train.objective.cross_entropy)));
    f.push_back(real("presence_threshold", GVSSM_REF(train.presence_threshold)));
    f.push_back(boolean("prune_on_sample", GVSSM_REF(train.prune_on_sample)));
    f.push_back(real("argmax_importance", GVSSM_REF(train.argmax_importance)));
    f.push_back({"hidden",
                 [](const PipelineConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.hidden.size(); ++i) s += (i ? "," : "") + std::to_string(c.hidden[i]);
                   return s;
                 },
                 [](PipelineConfig& c, const std::string& v) {
                   c.hidden.clear();
                   std::stringstream in(v);
                   for (std::string item; std::getline(in, item, ',');) c.hidden.push_back(parse_uint("hidden", item));
                 }});
    // Graphs, split, evaluation
    f.push_back(count("tile_side", GVSSM_REF(tile_side)));
    f.push_back(real("split_train", GVSSM_REF(fractions.train)));
    f.push_back(real("split_validation", GVSSM_REF(fractions.validation)));
    f.push_back(real("split_test", GVSSM_REF(fractions.test)));
    f.push_back(real("split_tolerance", GVSSM_REF(split_tolerance)));
    f.push_back(count("horizon", GVSSM_REF(horizon)));
    f.push_back(integer("baseline", GVSSM_REF(baseline)));
    f.push_back(real("shape_peak_weight", GVSSM_REF(shape_peak_weight)));
    f.push_back(real("shape_base_weight", GVSSM_REF(shape_base_weight)));
    f.push_back(count("gradcheck_instances", GVSSM_REF(gradcheck_instances)));
    return f;
  }();
  return kFields;
}

#undef GVSSM_REF

}  // namespace

std::vector<std::string> PipelineConfig::keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.key);
  return out;
}

void PipelineConfig::apply(const KeyValues& kv) {
  for (const auto& [key, value] : kv.entries()) {
    const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return f.key == key; });
    if (it == fields().end()) throw ConfigError("unknown configuration key '" + key + "'");
    it->set(*this, value);
  }
}

PipelineConfig PipelineConfig::from_key_values(const KeyValues& kv) {
  PipelineConfig c;
  c.apply(kv);
  c.validate();
  return c;
}

KeyValues PipelineConfig::to_key_values() const {
  KeyValues kv;
  for (const Field& f : fields()) kv.set(f.key, f.get(*this));
  return kv;
}

void PipelineConfig::validate() const {
  scenario.validate();
  train.validate();
  fractions.validate();
  if (hidden.empty()) throw ConfigError("hidden must list at least one layer width");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("hidden layer widths must be positive");
  if (tile_side < 2) throw ConfigError("tile_side must be >= 2");
  if (!(split_tolerance > 0.0)) throw ConfigError("split_tolerance must be positive");
  if (!(shape_peak_weight >= 0.0 && shape_base_weight >= 0.0)) throw ConfigError("shape weights must be >= 0");
  if (gradcheck_instances < 1) throw ConfigError("gradcheck_instances must be >= 1");
}

// ---------------------------------------------------------------------------
// Paths, manifest, log

namespace paths {
std::string checkpoint(ModuleKind kind) { return "checkpoint_" + to_string(kind) + ".gvsm"; }
std::string loss_history(ModuleKind kind) { return "loss_" + to_string(kind) + ".csv"; }
std::string edges(int tile_id) { return std::string(kGraphs) + "/tile_" + std::to_string(tile_id) + ".edges"; }
}  // namespace paths

Manifest Manifest::load(const fs::path& out) {
  Manifest m;
  m.kv_ = KeyValues::load(out / paths::kManifest);
  for (const auto& [key, value] : m.kv_.entries()) {
    if (key.rfind("file.", 0) == 0 && !fs::exists(out / value)) {
      throw ConfigError("manifest entry " + key + " refers to missing file " + value);
    }
  }
  return m;
}

void Manifest::record(const fs::path& out, const std::map<std::string, std::string>& entries) {
  KeyValues kv;
  if (fs::exists(out / paths::kManifest)) kv = KeyValues::load(out / paths::kManifest);
  kv.set("format.raster", "GVSR 1");
  kv.set("format.checkpoint", "GVSM " + std::to_string(kCheckpointVersion));
  for (const auto& [k, v] : entries) kv.set(k, v);
  kv.save(out / paths::kManifest);
}

void save_effective_config(const PipelineConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  cfg.to_key_values().save(out / paths::kConfig);
}

void append_run_log(const fs::path& out, const std::string& line) {
  fs::create_directories(out);
  std::ofstream f(out / paths::kRunLog, std::ios::app);
  f << line << "\n";
}

// ---------------------------------------------------------------------------
// Generation, graphs, split

void stage_generate(const PipelineConfig& cfg, const fs::path& out) {
  const Scenario sc = generate_synthetic_scenario(cfg.scenario);
  fs::create_directories(out);
  write_raster_stack(sc.covariates, out / paths::kCovariates);
  write_raster_stack(sc.truth_presence, out / paths::kTruthPresence);
  write_raster_stack(sc.truth_height, out / paths::kTruthHeight);
  write_raster_stack(sc.truth_composition, out / paths::kTruthComposition);
  write_prior(sc.prior, out);
  Manifest::record(out, {{"file.covariates", paths::kCovariates},
                         {"file.truth_presence", paths::kTruthPresence},
                         {"file.truth_height", paths::kTruthHeight},
                         {"file.truth_composition", paths::kTruthComposition},
                         {"file.prior_mu0", "prior_mu0.gvsr"},
                         {"file.prior_sigma0", "prior_sigma0.gvsr"},
                         {"file.prior_p0_bp", "prior_p0_bp.gvsr"},
                         {"file.prior_p0_v", "prior_p0_v.gvsr"},
                         {"file.prior_class_mask", "prior_class_mask.gvsr"},
                         {"file.classes", "classes.txt"}});
  append_run_log(out, "stage=gen-synthetic scenario_seed=" + std::to_string(cfg.scenario.seed) +
                          " grid=" + std::to_string(cfg.scenario.grid) +
                          " timesteps=" + std::to_string(cfg.scenario.timesteps));
}

namespace {

std::vector<TileGrid> read_tiles(const fs::path& path, std::size_t timesteps) {
  std::istringstream in(read_binary_file(path));
  std::vector<TileGrid> tiles;
  std::size_t offset = 0;
  for (std::string line; std::getline(in, line); offset += line.size() + 1) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    TileGrid t;
    if (!(ls >> t.id >> t.row0 >> t.col0 >> t.side)) throw ParseError(path.string() + ": malformed tile line", offset);
    t.timesteps = timesteps;
    tiles.push_back(t);
  }
  return tiles;
}

SparseAdjacency read_edges(const fs::path& path, std::size_t nodes) {
  std::istringstream in(read_binary_file(path));
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::size_t offset = 0;
  for (std::string line; std::getline(in, line); offset += line.size() + 1) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::size_t i = 0, j = 0;
    if (!(ls >> i >> j) || i >= nodes || j >= nodes || i == j) {
      throw ParseError(path.string() + ": malformed edge line", offset);
    }
    edges.emplace_back(i, j);
  }
  return SparseAdjacency::from_edges(nodes, edges);
}

std::map<int, Split> read_split(const fs::path& path) {
  std::istringstream in(read_binary_file(path));
  std::map<int, Split> out;
  std::size_t offset = 0;
  for (std::string line; std::getline(in, line); offset += line.size() + 1) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int id = 0;
    std::string name;
    if (!(ls >> id >> name)) throw ParseError(path.string() + ": malformed split line", offset);
    out[id] = split_from_string(name);
  }
  return out;
}

void require_file(const fs::path& out, const std::string& rel, const std::string& stage) {
  if (!fs::exists(out / rel)) {
    throw PrerequisiteError(stage + " needs " + (out / rel).string() + "; run the earlier stages first");
  }
}

}  // namespace

std::vector<TileGrid> stage_build_graphs(const PipelineConfig& cfg, const fs::path& out) {
  require_file(out, paths::kCovariates, "build-graphs");
  const RasterStack x = read_raster_stack(out / paths::kCovariates);
  const auto tiles = make_tiles(x.width, x.height, cfg.tile_side, x.timesteps);
  const SparseAdjacency adj = build_grid_adjacency(cfg.tile_side);
  std::string edge_text;
  for (const auto& [i, j] : adj.edge_list()) edge_text += std::to_string(i) + " " + std::to_string(j) + "\n";
  std::string tile_text = "# id row0 col0 side\n";
  std::map<std::string, std::string> entries{{"file.tiles", paths::kTiles}};
  for (const TileGrid& t : tiles) {
    tile_text += std::to_string(t.id) + " " + std::to_string(t.row0) + " " + std::to_string(t.col0) + " " +
                 std::to_string(t.side) + "\n";
    write_text_file(out / paths::edges(t.id), edge_text);
    entries["file.edges." + std::to_string(t.id)] = paths::edges(t.id);
  }
  write_text_file(out / paths::kTiles, tile_text);
  Manifest::record(out, entries);
  append_run_log(out, "stage=build-graphs tiles=" + std::to_string(tiles.size()) +
                          " tile_side=" + std::to_string(cfg.tile_side));
  return tiles;
}

SplitAssignment stage_split(const PipelineConfig& cfg, const fs::path& out) {
  require_file(out, paths::kTiles, "split");
  const RasterStack x = read_raster_stack(out / paths::kCovariates);
  const PriorRaster prior = read_prior(out);
  const auto tiles = read_tiles(out / paths::kTiles, x.timesteps);
  const std::size_t k = prior.class_count();
  // Expected building count per class from the prior.
  std::vector<std::vector<double>> hist;
  for (const TileGrid& t : tiles) {
    std::vector<double> h(k, 0.0);
    for (std::size_t r = t.row0; r < std::min(x.height, t.row0 + t.side); ++r)
      for (std::size_t c = t.col0; c < std::min(x.width, t.col0 + t.side); ++c) {
        const std::size_t p = r * x.width + c;
        for (std::size_t q = 0; q < k; ++q) h[q] += prior.p0_bp[p] * prior.p0_v_at(q, p);
      }
    hist.push_back(h);
  }
  Rng rng(cfg.train.seed, 0x73706c74);
  const SplitAssignment a = split_tiles_balanced(tiles, hist, cfg.fractions, rng, cfg.split_tolerance);
  std::string text;
  for (const auto& [id, s] : a.by_tile) text += std::to_string(id) + " " + to_string(s) + "\n";
  write_text_file(out / paths::kSplit, text);
  write_text_file(out / paths::kSplitReport, a.report());
  Manifest::record(out, {{"file.split", paths::kSplit}, {"file.split_report", paths::kSplitReport}});
  append_run_log(out, "stage=split seed=" + std::to_string(cfg.train.seed) +
                          " max_relative_deviation=" + format_double(a.max_relative_deviation) +
                          (a.within_tolerance() ? " balanced" : " outside_tolerance"));
  return a;
}

// ---------------------------------------------------------------------------
// Dataset assembly

namespace {

std::size_t local_node(const TileGrid& t, std::size_t r, std::size_t c) { return (r - t.row0) * t.side + (c - t.col0); }

template <typename F>
void for_each_pixel(const TileGrid& t, std::size_t width, std::size_t height, F&& f) {
  for (std::size_t r = t.row0; r < std::min(height, t.row0 + t.side); ++r)
    for (std::size_t c = t.col0; c < std::min(width, t.col0 + t.side); ++c) f(r * width + c, local_node(t, r, c));
}

}  // namespace

Dataset load_dataset(const PipelineConfig& cfg, const fs::path& out) {
  for (const char* f : {paths::kCovariates, paths::kTiles, paths::kSplit}) require_file(out, f, "training");
  const RasterStack x = read_raster_stack(out / paths::kCovariates);
  const PriorRaster prior = read_prior(out);
  if (prior.width != x.width || prior.height != x.height) throw ShapeError("prior and covariate grids differ");
  const auto tiles = read_tiles(out / paths::kTiles, x.timesteps);
  const auto split = read_split(out / paths::kSplit);
  const std::size_t B = x.bands, K = prior.class_count(), T = x.timesteps, px = x.pixels();

  Dataset data;
  data.shape.bands = B;
  data.shape.classes = K;
  data.shape.hidden = cfg.hidden;
  data.timesteps = T;

  std::vector<std::uint8_t> valid_all(px, 1);
  for (std::size_t t = 0; t < T; ++t) {
    const auto v = x.valid_mask(t);
    for (std::size_t p = 0; p < px; ++p) valid_all[p] &= v[p];
  }
  // Shape-dependent weights: one scheme per covariate band, one for mu0, one for p0.
  std::vector<ShapeWeightScheme> band_scheme;
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> vals;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p < px; ++p)
        if (valid_all[p]) vals.push_back(x.values[(t * B + b) * px + p]);
    band_scheme.push_back(ShapeWeightScheme::from_samples(vals, cfg.shape_peak_weight, cfg.shape_base_weight));
  }
  const std::vector<double> mu_all(prior.mu0.begin(), prior.mu0.end());
  const std::vector<double> p_all(prior.p0_bp.begin(), prior.p0_bp.end());
  const auto mu_scheme = ShapeWeightScheme::from_samples(mu_all, cfg.shape_peak_weight, cfg.shape_base_weight);
  const auto p_scheme = ShapeWeightScheme::from_samples(p_all, cfg.shape_peak_weight, cfg.shape_base_weight);
  const auto w_mu_all = shape_weights(mu_all, mu_scheme);
  const auto w_p_all = shape_weights(p_all, p_scheme);
  double mu_mean = 0.0;
  for (double v : mu_all) mu_mean += v;
  mu_mean /= static_cast<double>(mu_all.size());

  for (const TileGrid& tg : tiles) {
    const auto sit = split.find(tg.id);
    if (sit == split.end()) throw ConfigError("tile " + std::to_string(tg.id) + " has no split assignment");
    TileData td;
    td.tile = tg;
    td.split = sit->second;
    const std::size_t n = tg.side * tg.side;
    auto topo = std::make_shared<GridTopology>();
    topo->side = tg.side;
    topo->adjacency = read_edges(out / paths::edges(tg.id), n);
    topo->normalized = normalize_adjacency(topo->adjacency);
    td.topology = topo;
    td.valid.assign(n, 0);
    for_each_pixel(tg, x.width, x.height, [&](std::size_t p, std::size_t i) { td.valid[i] = valid_all[p]; });

    for (std::size_t t = 0; t < T; ++t) {
      Matrix m(n, B);
      std::vector<double> w(n * B, 0.0);
      for_each_pixel(tg, x.width, x.height, [&](std::size_t p, std::size_t i) {
        if (!td.valid[i]) return;
        for (std::size_t b = 0; b < B; ++b) m(i, b) = x.values[(t * B + b) * px + p];
      });
      for (std::size_t b = 0; b < B; ++b) {
        const auto wb = shape_weights(m.col(b), band_scheme[b]);
        for (std::size_t i = 0; i < n; ++i) w[i * B + b] = td.valid[i] ? wb[i] : 0.0;
      }
      td.covariates.push_back(std::move(m));
      td.covariate_weights.push_back(std::move(w));
    }

    PriorBeliefs& e = td.exposure_prior;
    e.mu0.assign(n, mu_mean);
    e.sigma0.assign(n, 1.0);
    e.p0_bp.assign(n, 0.5);
    e.w_mu0.assign(n, 0.0);
    e.w_p0.assign(n, 0.0);
    PriorBeliefs& v = td.vulnerability_prior;
    v.p0_v = Matrix(n, K, 1.0 / static_cast<double>(K));
    td.class_mask.assign(n * K, 1);
    for_each_pixel(tg, x.width, x.height, [&](std::size_t p, std::size_t i) {
      e.mu0[i] = prior.mu0[p];
      e.sigma0[i] = prior.sigma0[p];
      e.p0_bp[i] = prior.p0_bp[p];
      e.w_mu0[i] = w_mu_all[p];
      e.w_p0[i] = w_p_all[p];
      for (std::size_t q = 0; q < K; ++q) {
        v.p0_v(i, q) = prior.p0_v_at(q, p);
        td.class_mask[i * K + q] = prior.allowed(q, p) ? 1 : 0;
      }
    });
    e.w_sigma0 = e.w_mu0;
    e.sanitize();
    v.sanitize();
    v.v_importance = default_importance_mask(v.p0_v, cfg.train.argmax_importance);
    data.tiles.push_back(std::move(td));
  }
  data.validate();
  return data;
}

namespace {

RasterStack stitch_recon(const Dataset& data, const ReconstructionBuffer& buf, std::size_t width, std::size_t height) {
  const std::size_t B = data.shape.bands, T = data.timesteps, px = width * height;
  RasterStack r(width, height, B, T, 0.0f);
  for (std::size_t ti = 0; ti < data.tiles.size(); ++ti) {
    for_each_pixel(data.tiles[ti].tile, width, height, [&](std::size_t p, std::size_t i) {
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t b = 0; b < B; ++b) r.values[(t * B + b) * px + p] = static_cast<float>(buf[ti][t](i, b));
    });
  }
  return r;
}

ReconstructionBuffer unstitch_recon(const Dataset& data, const RasterStack& r) {
  const std::size_t B = data.shape.bands, T = data.timesteps, px = r.pixels();
  if (r.bands != B || r.timesteps != T) throw ShapeError("TE reconstruction raster has unexpected dimensions");
  ReconstructionBuffer buf(data.tiles.size());
  for (std::size_t ti = 0; ti < data.tiles.size(); ++ti) {
    const TileData& td = data.tiles[ti];
    buf[ti].assign(T, Matrix(td.nodes(), B));
    for_each_pixel(td.tile, r.width, r.height, [&](std::size_t p, std::size_t i) {
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t b = 0; b < B; ++b) buf[ti][t](i, b) = r.values[(t * B + b) * px + p];
    });
  }
  return buf;
}

}  // namespace

TrainedModules load_trained(const Dataset& data, const fs::path& out) {
  TrainedModules m;
  std::optional<ModuleParams>* slots[] = {&m.oe, &m.te, &m.ov, &m.tv};
  for (ModuleKind k : {ModuleKind::oe, ModuleKind::te, ModuleKind::ov, ModuleKind::tv}) {
    const fs::path p = out / paths::checkpoint(k);
    if (fs::exists(p)) *slots[static_cast<int>(k)] = read_checkpoint(p, k);
  }
  // A reconstruction buffer is only meaningful with the TE checkpoint it came from.
  if (m.te && fs::exists(out / paths::kTeRecon)) m.te_recon = unstitch_recon(data, read_raster_stack(out / paths::kTeRecon));
  return m;
}

// ---------------------------------------------------------------------------
// Training, inference, forecasting, evaluation

TrainResult stage_train(const PipelineConfig& cfg, const fs::path& out, ModuleKind kind) {
  for (auto need = prerequisite(kind); need; need = prerequisite(*need)) {
    if (!fs::exists(out / paths::checkpoint(*need))) {
      throw PrerequisiteError("train --module " + to_string(kind) + " needs the " + to_string(*need) +
                              " checkpoint " + paths::checkpoint(*need) +
                              " (modules train in the order oe -> te -> ov -> tv)");
    }
  }
  const Dataset data = load_dataset(cfg, out);
  const TrainedModules upstream = load_trained(data, out);
  const TrainResult result = train_module(kind, data, upstream, cfg.train);
  write_checkpoint(result.params, out / paths::checkpoint(kind));
  std::string csv = "epoch,train_loss,validation_loss\n";
  for (std::size_t e = 0; e < result.history.train.size(); ++e) {
    csv += std::to_string(e) + "," + format_double(result.history.train[e]) + "," +
           format_double(result.history.validation[e]) + "\n";
  }
  write_text_file(out / paths::loss_history(kind), csv);
  std::map<std::string, std::string> entries{{"file.checkpoint." + to_string(kind), paths::checkpoint(kind)},
                                             {"file.loss." + to_string(kind), paths::loss_history(kind)}};
  if (kind == ModuleKind::te) {
    const RasterStack x = read_raster_stack(out / paths::kCovariates);
    write_raster_stack(stitch_recon(data, result.te_recon, x.width, x.height), out / paths::kTeRecon);
    entries["file.te_recon"] = paths::kTeRecon;
  }
  Manifest::record(out, entries);
  append_run_log(out, "stage=train module=" + to_string(kind) + " seed=" + std::to_string(cfg.train.seed) +
                          " epochs=" + std::to_string(cfg.train.epochs) +
                          " first_train_loss=" + format_double(result.history.train.front()) +
                          " final_train_loss=" + format_double(result.history.train.back()) +
                          " final_validation_loss=" + format_double(result.history.validation.back()));
  return result;
}

namespace {

struct LoadedRun {
  Dataset data;
  TrainedModules modules;
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::string> classes;
};

LoadedRun load_run(const PipelineConfig& cfg, const fs::path& out, std::initializer_list<ModuleKind> needed,
                   const std::string& stage) {
  for (ModuleKind k : needed) {
    if (!fs::exists(out / paths::checkpoint(k))) {
      throw PrerequisiteError(stage + " needs the " + to_string(k) + " checkpoint " + paths::checkpoint(k));
    }
  }
  LoadedRun run;
  run.data = load_dataset(cfg, out);
  run.modules = load_trained(run.data, out);
  const RasterStack x = read_raster_stack(out / paths::kCovariates);
  run.width = x.width;
  run.height = x.height;
  run.classes = read_class_vocabulary(out / "classes.txt");
  return run;
}

}  // namespace

void stage_infer(const PipelineConfig& cfg, const fs::path& out) {
  const LoadedRun run = load_run(cfg, out, {ModuleKind::oe, ModuleKind::te, ModuleKind::ov}, "infer");
  const Dataset& data = run.data;
  const std::size_t T = data.timesteps, K = data.shape.classes, px = run.width * run.height;
  PosteriorMaps maps(run.width, run.height, T, run.classes);
  for (std::size_t ti = 0; ti < data.tiles.size(); ++ti) {
    const TileData& td = data.tiles[ti];
    std::vector<std::ptrdiff_t> raster_of(td.nodes(), -1);
    for_each_pixel(td.tile, run.width, run.height,
                   [&](std::size_t p, std::size_t i) { raster_of[i] = static_cast<std::ptrdiff_t>(p); });
    for (std::size_t t = 0; t < T; ++t) {
      const ExposureHeads h = infer_oe(*run.modules.oe, td, t);
      const auto presence = h.presence.probability();
      for (std::size_t i = 0; i < td.nodes(); ++i) {
        if (raster_of[i] < 0 || !td.valid[i]) continue;
        const std::size_t p = static_cast<std::size_t>(raster_of[i]);
        maps.mu.values[t * px + p] = static_cast<float>(h.height.mu[i]);
        maps.sigma.values[t * px + p] = static_cast<float>(std::exp(0.5 * h.height.log_var[i]));
        maps.presence.values[t * px + p] = static_cast<float>(presence[i]);
      }
      if (t == 0) continue;
      const auto st = infer_ov(run.modules, data, ti, t, cfg.train);
      if (!st) continue;
      for (std::size_t r = 0; r < st->graph.nodes(); ++r) {
        const std::ptrdiff_t p = raster_of[st->graph.node_map[r]];
        if (p < 0) continue;
        for (std::size_t k = 0; k < K; ++k) {
          maps.class_prob.values[(t * K + k) * px + static_cast<std::size_t>(p)] =
              static_cast<float>(st->probabilities(r, k));
        }
      }
    }
  }
  export_posterior_maps(maps, out / paths::kPosterior);
  Manifest::record(out, {{"file.posterior_summary", std::string(paths::kPosterior) + "/summary.csv"}});
  append_run_log(out, "stage=infer path=mean timesteps=" + std::to_string(T) +
                          " note=class posteriors are defined for t>=1 on the vulnerability graph");
}

ForecastSummary stage_forecast(const PipelineConfig& cfg, const fs::path& out, std::size_t horizon) {
  const LoadedRun run =
      load_run(cfg, out, {ModuleKind::oe, ModuleKind::te, ModuleKind::ov, ModuleKind::tv}, "forecast");
  const Dataset& data = run.data;
  const auto& temp = cfg.train.objective.temperature;
  const std::size_t T = data.timesteps, K = data.shape.classes;
  const std::size_t t0 = T - 1;
  ForecastSummary s;
  s.horizon = horizon;
  s.min_variance = std::numeric_limits<double>::infinity();
  s.min_presence = std::numeric_limits<double>::infinity();
  s.max_presence = -std::numeric_limits<double>::infinity();

  struct StepStats {
    double mu = 0.0, var = 0.0, presence = 0.0;
    std::size_t n = 0;
    std::vector<double> share;
    std::size_t vn = 0;
    double simplex = 0.0;
  };
  std::vector<StepStats> steps(horizon);
  for (auto& st : steps) st.share.assign(K, 0.0);

  for (std::size_t ti = 0; ti < data.tiles.size(); ++ti) {
    const TileData& td = data.tiles[ti];
    const ExposureGraph g = td.exposure_graph(t0);
    const ExposureSample state = mean_exposure(infer_oe(*run.modules.oe, td, t0), temp);
    const auto ex = forecast_exposure(*run.modules.te, state, run.modules.te_recon[ti][t0], g, horizon, temp);
    s.exposure_steps = std::max(s.exposure_steps, ex.size());
    for (std::size_t h = 0; h < ex.size(); ++h) {
      const auto p = ex[h].heads.presence.probability();
      for (std::size_t i = 0; i < td.nodes(); ++i) {
        if (!td.valid[i]) continue;
        const double var = std::exp(ex[h].heads.height.log_var[i]);
        if (!std::isfinite(var) || !std::isfinite(ex[h].heads.height.mu[i]) || !std::isfinite(p[i])) s.all_finite = false;
        steps[h].mu += ex[h].heads.height.mu[i];
        steps[h].var += var;
        steps[h].presence += p[i];
        ++steps[h].n;
        s.min_variance = std::min(s.min_variance, var);
        s.min_presence = std::min(s.min_presence, p[i]);
        s.max_presence = std::max(s.max_presence, p[i]);
      }
    }
    const auto ov = infer_ov(run.modules, data, ti, t0, cfg.train);
    if (!ov) continue;
    const GumbelSoftmaxSample v = mean_vulnerability(ov->pruned, temp);
    const TaggedMatrix xhat = ov_reconstruction(*run.modules.ov, v.value, ov->graph);
    const auto vf = forecast_vulnerability(*run.modules.tv, v.value, xhat.values, ov->graph, ov->pruned.class_mask,
                                           horizon, cfg.train.objective);
    s.vulnerability_steps = std::max(s.vulnerability_steps, vf.size());
    for (std::size_t h = 0; h < vf.size(); ++h) {
      const Matrix& pr = vf[h].probabilities;
      for (std::size_t r = 0; r < pr.rows(); ++r) {
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          sum += pr(r, k);
          steps[h].share[k] += pr(r, k);
          if (!std::isfinite(pr(r, k)) || pr(r, k) < 0.0) s.all_finite = false;
        }
        steps[h].simplex = std::max(steps[h].simplex, std::abs(sum - 1.0));
        ++steps[h].vn;
      }
      s.max_simplex_error = std::max(s.max_simplex_error, steps[h].simplex);
    }
  }
  std::string ecsv = "step,timestep,mean_mu,mean_variance,mean_presence\n";
  std::string vcsv = "step,timestep,nodes,max_simplex_error";
  for (const auto& c : run.classes) vcsv += ",share_" + c;
  vcsv += "\n";
  for (std::size_t h = 0; h < horizon; ++h) {
    const StepStats& st = steps[h];
    const double n = st.n ? static_cast<double>(st.n) : 1.0;
    const std::string ts = std::to_string(t0 + h + 1);
    ecsv += std::to_string(h + 1) + "," + ts + "," + format_double(st.mu / n) + "," + format_double(st.var / n) + "," +
            format_double(st.presence / n) + "\n";
    vcsv += std::to_string(h + 1) + "," + ts + "," + std::to_string(st.vn) + "," + format_double(st.simplex);
    for (std::size_t k = 0; k < K; ++k) vcsv += "," + format_double(st.vn ? st.share[k] / static_cast<double>(st.vn) : 0.0);
    vcsv += "\n";
  }
  write_text_file(out / "forecast_exposure.csv", ecsv);
  write_text_file(out / "forecast_vulnerability.csv", vcsv);
  Manifest::record(out, {{"file.forecast_exposure", "forecast_exposure.csv"},
                         {"file.forecast_vulnerability", "forecast_vulnerability.csv"}});
  append_run_log(out, "stage=forecast horizon=" + std::to_string(horizon) + " start_timestep=" + std::to_string(t0) +
                          " max_simplex_error=" + format_double(s.max_simplex_error) +
                          " min_variance=" + format_double(s.min_variance));
  return s;
}

AitchisonSummary stage_eval_aitchison(const PipelineConfig& cfg, const fs::path& out, int baseline) {
  (void)cfg;
  require_file(out, std::string(paths::kPosterior) + "/summary.csv", "eval-aitchison");
  const RasterStack x = read_raster_stack(out / paths::kCovariates);
  const PriorRaster prior = read_prior(out);
  const std::size_t T = x.timesteps, K = prior.class_count(), px = x.pixels();
  const RasterStack post = read_class_probabilities(out / paths::kPosterior, T);
  std::vector<double> p0(prior.p0_v.begin(), prior.p0_v.end());
  std::vector<std::uint8_t> mask(prior.class_mask);

  AitchisonSummary s;
  const fs::path eval_dir = out / paths::kEval;
  fs::create_directories(eval_dir);
  std::string absent;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> pt(px * K);
    for (std::size_t i = 0; i < px * K; ++i) pt[i] = post.values[t * px * K + i];
    const auto valid = post.valid_mask(t);
    const DistanceMap dm = mean_distance_map(p0, pt, K, valid, mask);
    RasterStack r(x.width, x.height, 1, 1, kDefaultNodata);
    for (std::size_t p = 0; p < px; ++p)
      if (!std::isnan(dm.per_pixel[p])) r.values[p] = static_cast<float>(dm.per_pixel[p]);
    write_raster_stack(r, eval_dir / ("aitchison_t" + std::to_string(t) + ".gvsr"));
    if (dm.mean) {
      s.series[static_cast<int>(t)] = *dm.mean;
    } else {
      absent += (absent.empty() ? "" : ",") + std::to_string(t);
    }
  }
  s.ratios = ratio_to_baseline(s.series, baseline);
  std::string csv = "timestep,mean_dA,ratio\n";
  for (const auto& [t, v] : s.series) csv += std::to_string(t) + "," + format_double(v) + "," + format_double(s.ratios[t]) + "\n";
  write_text_file(eval_dir / "aitchison_series.csv", csv);
  std::map<std::string, std::string> entries{{"file.aitchison_series", std::string(paths::kEval) + "/aitchison_series.csv"}};

  // Synthetic runs also compare against the true per-pixel composition on test tiles.
  if (fs::exists(out / paths::kTruthComposition) && fs::exists(out / paths::kSplit)) {
    const RasterStack truth = read_raster_stack(out / paths::kTruthComposition);
    const RasterStack present = read_raster_stack(out / paths::kTruthPresence);
    const auto tiles = read_tiles(out / paths::kTiles, T);
    const auto split = read_split(out / paths::kSplit);
    std::vector<std::uint8_t> test_pixel(px, 0);
    for (const TileGrid& tg : tiles) {
      if (split.at(tg.id) != Split::test) continue;
      for_each_pixel(tg, x.width, x.height, [&](std::size_t p, std::size_t) { test_pixel[p] = 1; });
    }
    TruthComparison all;
    std::string tcsv = "timestep,pixels,posterior_vs_truth,prior_vs_truth\n";
    std::vector<double> a(K), b(K), c(K);
    std::vector<std::uint8_t> allowed(K);
    for (std::size_t t = 1; t < T; ++t) {
      double sp = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (std::size_t p = 0; p < px; ++p) {
        if (!test_pixel[p] || present.values[t * px + p] < 0.5f) continue;
        if (post.is_nodata(post.values[t * px * K + p])) continue;
        for (std::size_t k = 0; k < K; ++k) {
          a[k] = truth.values[(t * K + k) * px + p];
          b[k] = post.values[(t * K + k) * px + p];
          c[k] = p0[k * px + p];
          allowed[k] = mask[k * px + p];
        }
        const auto sup_post = shared_support(a, b, allowed);
        const auto sup_prior = shared_support(a, c, allowed);
        if (std::count(sup_post.begin(), sup_post.end(), 1) < 2 || std::count(sup_prior.begin(), sup_prior.end(), 1) < 2) {
          continue;
        }
        sp += aitchison_distance(a, b, sup_post, p);
        sq += aitchison_distance(a, c, sup_prior, p);
        ++n;
      }
      all.posterior_vs_truth += sp;
      all.prior_vs_truth += sq;
      all.pixels += n;
      if (n) {
        tcsv += std::to_string(t) + "," + std::to_string(n) + "," + format_double(sp / static_cast<double>(n)) + "," +
                format_double(sq / static_cast<double>(n)) + "\n";
      }
    }
    if (all.pixels) {
      all.posterior_vs_truth /= static_cast<double>(all.pixels);
      all.prior_vs_truth /= static_cast<double>(all.pixels);
      tcsv += "all," + std::to_string(all.pixels) + "," + format_double(all.posterior_vs_truth) + "," +
              format_double(all.prior_vs_truth) + "\n";
      s.truth = all;
    }
    write_text_file(eval_dir / "truth_comparison.csv", tcsv);
    entries["file.truth_comparison"] = std::string(paths::kEval) + "/truth_comparison.csv";
  }
  Manifest::record(out, entries);
  append_run_log(out, "stage=eval-aitchison baseline=" + std::to_string(baseline) +
                          " pixels=vulnerability-graph (built-up) only" +
                          (absent.empty() ? "" : " absent_timesteps=" + absent));
  return s;
}

GradcheckSummary stage_gradcheck(const PipelineConfig& cfg, const fs::path& out) {
  GradCheckOptions o;
  o.hidden = cfg.hidden;
  o.instances = cfg.gradcheck_instances;
  o.seed = cfg.train.seed;
  const auto checks = check_module_gradients(o);
  GradcheckSummary s;
  std::string csv = "module,term,instance,parameter,analytic_norm,numeric_norm,relative_error\n";
  for (const TermGradCheck& c : checks) {
    s.max_relative_error = std::max(s.max_relative_error, c.report.relative_error);
    csv += to_string(c.kind) + "," + c.term + "," + std::to_string(c.instance) + "," + c.report.parameter + "," +
           format_double(c.report.analytic) + "," + format_double(c.report.numeric) + "," +
           format_double(c.report.relative_error) + "\n";
  }
  s.checks = checks.size();
  write_text_file(out / "gradcheck.csv", csv);
  Manifest::record(out, {{"file.gradcheck", "gradcheck.csv"}});
  append_run_log(out, "stage=gradcheck seed=" + std::to_string(cfg.train.seed) + " checks=" + std::to_string(s.checks) +
                          " max_relative_error=" + format_double(s.max_relative_error));
  return s;
}

void run_pipeline(const PipelineConfig& cfg, const fs::path& out) {
  cfg.validate();
  save_effective_config(cfg, out);
  stage_generate(cfg, out);
  stage_build_graphs(cfg, out);
  stage_split(cfg, out);
  for (ModuleKind k : {ModuleKind::oe, ModuleKind::te, ModuleKind::ov, ModuleKind::tv}) stage_train(cfg, out, k);
  stage_infer(cfg, out);
  stage_forecast(cfg, out, cfg.horizon);
  stage_eval_aitchison(cfg, out, cfg.baseline);
}

}  // namespace gvssm
