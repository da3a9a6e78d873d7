#include "gvssm/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>

#include "gvssm/errors.hpp"

namespace gvssm {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_tiles < 1) throw ConfigError("batch_tiles must be >= 1");
  if (samples < 1) throw ConfigError("samples must be >= 1");
  if (!(adam.learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(presence_threshold > 0.0 && presence_threshold < 1.0)) {
    throw ConfigError("presence_threshold must lie in (0, 1)");
  }
  if (!(argmax_importance >= 0.0)) throw ConfigError("argmax_importance must be >= 0");
  objective.temperature.validate();
  for (double c : {objective.reconstruction, objective.kl_height, objective.kl_presence,
                   objective.kl_vulnerability, objective.cross_entropy}) {
    if (!(c >= 0.0)) throw ConfigError("loss coefficients must be >= 0");
  }
}

ExposureGraph TileData::exposure_graph(std::size_t t) const {
  return ExposureGraph{tile, static_cast<int>(t), topology, covariates.at(t), valid};
}

std::vector<std::size_t> Dataset::tiles_in(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tiles.size(); ++i)
    if (tiles[i].split == s) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  if (timesteps < 2) throw ConfigError("dataset needs at least 2 timesteps");
  for (const TileData& td : tiles) {
    const std::size_t n = td.nodes();
    const std::string who = "tile " + std::to_string(td.tile.id);
    if (!td.topology || td.topology->adjacency.nodes != n) throw ShapeError(who + ": topology size mismatch");
    if (td.covariates.size() != timesteps || td.covariate_weights.size() != timesteps) {
      throw ShapeError(who + ": expected " + std::to_string(timesteps) + " timesteps");
    }
    for (std::size_t t = 0; t < timesteps; ++t) {
      if (td.covariates[t].rows() != n || td.covariates[t].cols() != shape.bands) {
        throw ShapeError(who + ": covariates " + td.covariates[t].shape_string());
      }
      if (td.covariate_weights[t].size() != n * shape.bands) throw ShapeError(who + ": weight length");
    }
    if (td.exposure_prior.mu0.size() != n) throw ShapeError(who + ": exposure prior size");
    if (td.vulnerability_prior.p0_v.rows() != n || td.vulnerability_prior.p0_v.cols() != shape.classes) {
      throw ShapeError(who + ": vulnerability prior " + td.vulnerability_prior.p0_v.shape_string());
    }
    if (td.class_mask.size() != n * shape.classes) throw ShapeError(who + ": class mask size");
  }
}

const ModuleParams* TrainedModules::get(ModuleKind kind) const {
  const std::optional<ModuleParams>* slots[] = {&oe, &te, &ov, &tv};
  const auto& slot = *slots[static_cast<int>(kind)];
  return slot ? &*slot : nullptr;
}

void require_prerequisites(ModuleKind kind, const TrainedModules& upstream) {
  for (auto need = prerequisite(kind); need; need = prerequisite(*need)) {
    if (!upstream.get(*need)) {
      throw PrerequisiteError("module " + to_string(kind) + " requires a trained " + to_string(*need) +
                              " module (training order is oe -> te -> ov -> tv)");
    }
  }
  if (kind == ModuleKind::ov || kind == ModuleKind::tv) {
    if (upstream.te_recon.empty()) {
      throw PrerequisiteError("module " + to_string(kind) + " requires the TE covariate reconstructions");
    }
  }
}

// ---------------------------------------------------------------------------
// Derived quantities

ExposureHeads infer_oe(const ModuleParams& oe, const TileData& tile, std::size_t t) {
  return forward_oe(oe, tile.covariates.at(t), tile.exposure_graph(t));
}

ExposureHeads infer_te(const ModuleParams& te, const ModuleParams& oe, const TileData& tile,
                       const Matrix& recon_prev, std::size_t t, const TemperatureConfig& temp) {
  if (t == 0) throw ConfigError("TE heads are defined for t >= 1 only");
  const ExposureSample prev = mean_exposure(infer_oe(oe, tile, t - 1), temp);
  return forward_te(te, prev, recon_prev, tile.exposure_graph(t - 1));
}

namespace {

Matrix covariate_block(const Matrix& decoded, std::size_t first, std::size_t bands) {
  return slice_cols(decoded, first, bands);
}

}  // namespace

std::vector<Matrix> refresh_te_recon(const ModuleParams& te, const ModuleParams& oe,
                                     const TileData& tile, const std::vector<Matrix>& previous,
                                     const ModelShape& shape, const TemperatureConfig& temp) {
  std::vector<Matrix> out;
  out.reserve(previous.size());
  for (std::size_t t = 0; t < previous.size(); ++t) {
    const ExposureGraph g = tile.exposure_graph(t);
    const ExposureSample now = mean_exposure(infer_oe(oe, tile, t), temp);
    const ExposureSample next = mean_exposure(forward_te(te, now, previous[t], g), temp);
    out.push_back(covariate_block(decode_te(te, next, g), 2, shape.bands));
  }
  return out;
}

std::vector<double> presence_statistic(const ExposureHeads& te_heads, const TileData& tile,
                                       std::size_t t, const TrainConfig& cfg) {
  if (!cfg.prune_on_sample) return te_heads.presence.probability();
  Rng rng = Rng(cfg.seed, 0x70726e).split(static_cast<std::uint64_t>(tile.tile.id) * 1024 + t);
  const GumbelSoftmaxSample s = gumbel_softmax(te_heads.presence.as_categorical(),
                                               cfg.objective.temperature, rng);
  return s.value.col(0);
}

std::vector<std::size_t> vulnerability_nodes(const TileData& tile, std::span<const double> presence,
                                             double threshold) {
  if (presence.size() != tile.nodes()) throw ShapeError("presence statistic length mismatch");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < presence.size(); ++i)
    if (tile.valid[i] && presence[i] >= threshold) out.push_back(i);
  return out;
}

VulnerabilityGraph vulnerability_graph(const TileData& tile, std::size_t t,
                                       std::span<const std::size_t> nodes) {
  VulnerabilityGraph g;
  g.tile = tile.tile;
  g.timestep = static_cast<int>(t);
  g.node_map.assign(nodes.begin(), nodes.end());
  g.adjacency = induced_subgraph(tile.topology->adjacency, nodes);
  g.normalized = normalize_adjacency(g.adjacency);
  g.features = gather_rows(tile.covariates.at(t), nodes);
  return g;
}

std::vector<std::uint8_t> subset_mask(const std::vector<std::uint8_t>& mask,
                                      std::span<const std::size_t> nodes, std::size_t classes) {
  std::vector<std::uint8_t> out;
  if (mask.empty()) return out;
  out.reserve(nodes.size() * classes);
  for (std::size_t i : nodes)
    for (std::size_t k = 0; k < classes; ++k) out.push_back(mask[i * classes + k]);
  return out;
}

namespace {

std::vector<double> gather_weights(const std::vector<double>& w, std::span<const std::size_t> nodes,
                                   std::size_t cols) {
  std::vector<double> out;
  out.reserve(nodes.size() * cols);
  for (std::size_t i : nodes)
    for (std::size_t c = 0; c < cols; ++c) out.push_back(w[i * cols + c]);
  return out;
}

Matrix log_height_column(const LognormalHead& h, std::span<const std::size_t> nodes,
                         std::span<const double> eps) {
  Matrix out(nodes.size(), 1);
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    const std::size_t i = nodes[r];
    const double e = eps.empty() ? 0.0 : eps[r];
    out(r, 0) = h.mu[i] + std::exp(0.5 * h.log_var[i]) * e;
  }
  return out;
}

}  // namespace

std::optional<VulnerabilityState> infer_ov(const TrainedModules& m, const Dataset& data,
                                           std::size_t tile, std::size_t t, const TrainConfig& cfg) {
  require_prerequisites(ModuleKind::tv, m);
  if (t == 0) throw ConfigError("OV posteriors are defined for t >= 1 only");
  const TileData& td = data.tiles.at(tile);
  const auto& temp = cfg.objective.temperature;
  const ExposureHeads te_heads = infer_te(*m.te, *m.oe, td, m.te_recon.at(tile).at(t - 1), t, temp);
  const auto presence = presence_statistic(te_heads, td, t, cfg);
  const auto nodes = vulnerability_nodes(td, presence, cfg.presence_threshold);
  if (nodes.empty()) return std::nullopt;
  VulnerabilityState st;
  st.graph = vulnerability_graph(td, t, nodes);
  const TaggedMatrix h{log_height_column(te_heads.height, nodes, {}), Source::te_sample};
  const TaggedMatrix x{gather_rows(m.te_recon[tile][t], nodes), Source::te_reconstruction};
  const auto mask = subset_mask(td.class_mask, nodes, data.shape.classes);
  auto head = forward_ov(*m.ov, h, x, st.graph, mask);
  st.pruned = prune_logits(*head, cfg.objective.pruning_logit);
  st.probabilities = softmax_probs(st.pruned);
  return st;
}

TaggedMatrix ov_reconstruction(const ModuleParams& ov, const Matrix& v, const VulnerabilityGraph& g) {
  return {decode_ov(ov, v, g), Source::ov_reconstruction};
}

std::vector<ExposureForecastStep> forecast_exposure(const ModuleParams& te, const ExposureSample& state,
                                                    const Matrix& xhat, const ExposureGraph& g,
                                                    std::size_t horizon, const TemperatureConfig& temp) {
  std::vector<ExposureForecastStep> out;
  out.reserve(horizon);
  ExposureSample cur = state;
  Matrix x = xhat;
  const std::size_t bands = xhat.cols();
  for (std::size_t h = 0; h < horizon; ++h) {
    ExposureHeads heads = forward_te(te, cur, x, g);
    ExposureSample nxt = mean_exposure(heads, temp);
    x = slice_cols(decode_te(te, nxt, g), 2, bands);
    cur = nxt;
    out.push_back({std::move(heads), std::move(nxt)});
  }
  return out;
}

std::vector<VulnerabilityForecastStep> forecast_vulnerability(
    const ModuleParams& tv, const Matrix& v_state, const Matrix& xhat_ov, const VulnerabilityGraph& g,
    std::span<const std::uint8_t> class_mask, std::size_t horizon, const ObjectiveSettings& settings) {
  std::vector<VulnerabilityForecastStep> out;
  out.reserve(horizon);
  TaggedMatrix v{v_state, Source::ov_sample};
  TaggedMatrix x{xhat_ov, Source::ov_reconstruction};
  const std::size_t k = v_state.cols();
  for (std::size_t h = 0; h < horizon; ++h) {
    auto head = forward_tv(tv, v, x, g, class_mask);
    if (!head) break;
    VulnerabilityForecastStep step;
    step.pruned = prune_logits(*head, settings.pruning_logit);
    step.probabilities = softmax_probs(step.pruned);
    const GumbelSoftmaxSample mean = mean_vulnerability(step.pruned, settings.temperature);
    const Matrix decoded = decode_tv(tv, mean.value, g);
    v = {mean.value, Source::tv_sample};
    x = {slice_cols(decoded, k, decoded.cols() - k), Source::ov_reconstruction};
    out.push_back(std::move(step));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct PreparedStep {
  ModuleInstance instance;
  std::size_t classes = 0;
  std::shared_ptr<const SparseAdjacency> graph_owner;  // keeps instance.a_hat alive
};

/// Builds the objective instance for (tile, t); nullopt skips the step.
using StepBuilder = std::function<std::optional<PreparedStep>(std::size_t tile, std::size_t t, Rng& rng)>;
/// Observes the first-sample evaluation of every training step.
using StepObserver = std::function<void(std::size_t tile, std::size_t t, const ModuleEvaluation&)>;
using EpochHook = std::function<void(const ModuleParams&)>;

struct LoopSpec {
  ModuleKind kind;
  std::size_t t_first = 0;
  std::size_t t_last = 0;  // inclusive
  StepBuilder build;
  StepObserver observe;
  EpochHook end_of_epoch;
};

constexpr std::uint64_t kValidationStream = 0x76616c;

Rng step_rng(const Rng& base, const TileData& td, std::size_t t) {
  return base.split(static_cast<std::uint64_t>(td.tile.id) * 1024 + t + 1);
}

double evaluate_split(const ModuleParams& params, const Dataset& data, const LoopSpec& spec,
                      const TrainConfig& cfg, const Rng& base, std::span<const std::size_t> tiles) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t ti : tiles) {
    for (std::size_t t = spec.t_first; t <= spec.t_last; ++t) {
      Rng rng = step_rng(base, data.tiles[ti], t);
      auto step = spec.build(ti, t, rng);
      if (!step) continue;
      Rng noise_rng = rng.split(100);
      const ModuleNoise noise = draw_noise(spec.kind, step->instance.nodes(), step->classes, noise_rng);
      sum += evaluate_module(params, step->instance, noise, cfg.objective).terms.total;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

[[noreturn]] void diverged(ModuleKind kind, const char* what, int epoch, int batch) {
  throw DivergenceError("non-finite " + to_string(kind) + " " + what + " at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batch),
                        epoch, batch);
}

ModuleParams run_loop(const Dataset& data, const TrainConfig& cfg, const LoopSpec& spec,
                      LossHistory& history) {
  const Rng root(cfg.seed, 0x67767373 + static_cast<std::uint64_t>(spec.kind));
  Rng init_rng = root.split(0);
  ModuleParams params = ModuleParams::init(spec.kind, data.shape, init_rng);
  Adam adam(cfg.adam, std::as_const(params).parameters());

  const std::vector<std::size_t> train_tiles = data.tiles_in(Split::train);
  const std::vector<std::size_t> val_tiles = data.tiles_in(Split::validation);
  if (train_tiles.empty()) throw ConfigError("no training tiles");
  const Rng val_base = root.split(kValidationStream);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = root.split(1 + static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order = train_tiles;
    shuffle(order, epoch_rng);

    double epoch_sum = 0.0;
    std::size_t epoch_count = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_tiles, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_tiles);
      ModuleParams grads = ModuleParams::zeros_like(params);
      double batch_sum = 0.0;
      std::size_t batch_count = 0;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t ti = order[b];
        for (std::size_t t = spec.t_first; t <= spec.t_last; ++t) {
          Rng rng = step_rng(epoch_rng, data.tiles[ti], t);
          auto step = spec.build(ti, t, rng);
          if (!step) continue;
          for (std::size_t s = 0; s < cfg.samples; ++s) {
            Rng noise_rng = rng.split(100 + s);
            const ModuleNoise noise = draw_noise(spec.kind, step->instance.nodes(), step->classes, noise_rng);
            const ModuleEvaluation ev = evaluate_module(params, step->instance, noise, cfg.objective, &grads);
            if (!std::isfinite(ev.terms.total)) diverged(spec.kind, "loss", epoch, batch_index);
            if (s == 0 && spec.observe) spec.observe(ti, t, ev);
            batch_sum += ev.terms.total;
            ++batch_count;
          }
        }
      }
      if (batch_count == 0) continue;
      const double scale = 1.0 / static_cast<double>(batch_count);
      for (Matrix* g : grads.parameters()) *g *= scale;
      if (!grads.all_finite()) diverged(spec.kind, "gradient", epoch, batch_index);
      adam.step(params.parameters(), std::as_const(grads).parameters());
      if (!params.all_finite()) diverged(spec.kind, "parameters", epoch, batch_index);
      epoch_sum += batch_sum;
      epoch_count += batch_count;
    }
    history.train.push_back(epoch_count ? epoch_sum / static_cast<double>(epoch_count) : 0.0);
    history.validation.push_back(evaluate_split(params, data, spec, cfg, val_base, val_tiles));
    if (spec.end_of_epoch) spec.end_of_epoch(params);
  }
  return params;
}

PreparedStep exposure_step(const TileData& td) {
  PreparedStep step;
  step.instance.a_hat = &td.topology->normalized;
  step.classes = 2;
  return step;
}

TrainResult train_oe(const Dataset& data, const TrainConfig& cfg) {
  LoopSpec spec;
  spec.kind = ModuleKind::oe;
  spec.t_first = 0;
  spec.t_last = data.timesteps - 1;
  spec.build = [&](std::size_t ti, std::size_t t, Rng&) -> std::optional<PreparedStep> {
    const TileData& td = data.tiles[ti];
    PreparedStep step = exposure_step(td);
    step.instance.encoder_input = td.covariates[t];
    step.instance.recon_target = td.covariates[t];
    step.instance.recon_weights = td.covariate_weights[t];
    step.instance.recon_valid = td.valid;
    step.instance.prior = td.exposure_prior;
    step.instance.kl_valid = td.valid;
    return step;
  };
  TrainResult result;
  result.params = run_loop(data, cfg, spec, result.history);
  return result;
}

/// OE posterior expressed as a prior for the TE transition into the same timestep.
PriorBeliefs posterior_as_prior(const ExposureHeads& h) {
  PriorBeliefs p;
  p.mu0 = h.height.mu;
  p.sigma0.resize(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) p.sigma0[i] = std::exp(0.5 * h.height.log_var[i]);
  p.p0_bp = h.presence.probability();
  p.sanitize();
  return p;
}

TrainResult train_te(const Dataset& data, const ModuleParams& oe, const TrainConfig& cfg) {
  const std::size_t T = data.timesteps;
  const std::size_t B = data.shape.bands;
  const std::size_t n_tiles = data.tiles.size();
  const auto& temp = cfg.objective.temperature;
  std::vector<std::vector<ExposureHeads>> oe_heads(n_tiles);
  std::vector<std::vector<PriorBeliefs>> priors(n_tiles);
  ReconstructionBuffer buf(n_tiles);
  for (std::size_t ti = 0; ti < n_tiles; ++ti) {
    for (std::size_t t = 0; t < T; ++t) {
      oe_heads[ti].push_back(infer_oe(oe, data.tiles[ti], t));
      priors[ti].push_back(posterior_as_prior(oe_heads[ti].back()));
    }
    buf[ti].assign(T, Matrix(data.tiles[ti].nodes(), B));
  }
  ReconstructionBuffer next = buf;
  std::vector<std::vector<std::uint8_t>> produced(n_tiles, std::vector<std::uint8_t>(T, 0));

  LoopSpec spec;
  spec.kind = ModuleKind::te;
  spec.t_first = 0;
  spec.t_last = T - 2;
  spec.build = [&](std::size_t ti, std::size_t t, Rng& rng) -> std::optional<PreparedStep> {
    const TileData& td = data.tiles[ti];
    Rng oe_rng = rng.split(1);
    const ExposureSample now = sample_exposure(oe_heads[ti][t], temp, oe_rng);
    const Matrix f = now.features();
    PreparedStep step = exposure_step(td);
    step.instance.encoder_input = hconcat({&f, &buf[ti][t]});
    step.instance.recon_target = hconcat({&f, &td.covariates[t]});
    auto& w = step.instance.recon_weights;
    w.reserve(td.nodes() * (2 + B));
    for (std::size_t i = 0; i < td.nodes(); ++i) {
      w.push_back(1.0);
      w.push_back(1.0);
      for (std::size_t c = 0; c < B; ++c) w.push_back(td.covariate_weights[t][i * B + c]);
    }
    step.instance.recon_valid = td.valid;
    step.instance.prior = priors[ti][t + 1];
    step.instance.kl_valid = td.valid;
    return step;
  };
  spec.observe = [&](std::size_t ti, std::size_t t, const ModuleEvaluation& ev) {
    next[ti][t] = covariate_block(ev.decoder_output, 2, B);
    produced[ti][t] = 1;
  };
  spec.end_of_epoch = [&](const ModuleParams& live) {
    // Entries not produced by a training step get a no-loss mean-path refresh.
    for (std::size_t ti = 0; ti < n_tiles; ++ti) {
      const TileData& td = data.tiles[ti];
      for (std::size_t t = 0; t < T; ++t) {
        if (produced[ti][t]) continue;
        const ExposureGraph g = td.exposure_graph(t);
        const ExposureSample now = mean_exposure(oe_heads[ti][t], temp);
        const ExposureSample nxt = mean_exposure(forward_te(live, now, buf[ti][t], g), temp);
        next[ti][t] = covariate_block(decode_te(live, nxt, g), 2, B);
      }
      std::fill(produced[ti].begin(), produced[ti].end(), 0);
    }
    buf = next;
  };
  TrainResult result;
  result.params = run_loop(data, cfg, spec, result.history);
  result.te_recon.resize(n_tiles);
  for (std::size_t ti = 0; ti < n_tiles; ++ti) {
    result.te_recon[ti] = refresh_te_recon(result.params, oe, data.tiles[ti], buf[ti], data.shape, temp);
  }
  return result;
}

/// Cached per-(tile, t) vulnerability context shared by all epochs.
struct VulnerabilityContext {
  std::shared_ptr<const VulnerabilityGraph> graph;
  LognormalHead te_height;  // restricted to graph nodes
  std::vector<std::uint8_t> class_mask;
};

TrainResult train_ov(const Dataset& data, const TrainedModules& m, const TrainConfig& cfg) {
  const std::size_t T = data.timesteps;
  const std::size_t B = data.shape.bands;
  const std::size_t K = data.shape.classes;
  const auto& temp = cfg.objective.temperature;
  std::vector<std::vector<VulnerabilityContext>> ctx(data.tiles.size(), std::vector<VulnerabilityContext>(T));
  for (std::size_t ti = 0; ti < data.tiles.size(); ++ti) {
    const TileData& td = data.tiles[ti];
    for (std::size_t t = 1; t < T; ++t) {
      const ExposureHeads heads = infer_te(*m.te, *m.oe, td, m.te_recon[ti][t - 1], t, temp);
      const auto nodes = vulnerability_nodes(td, presence_statistic(heads, td, t, cfg), cfg.presence_threshold);
      if (nodes.empty()) continue;
      VulnerabilityContext& c = ctx[ti][t];
      c.graph = std::make_shared<VulnerabilityGraph>(vulnerability_graph(td, t, nodes));
      for (std::size_t i : nodes) {
        c.te_height.mu.push_back(heads.height.mu[i]);
        c.te_height.log_var.push_back(heads.height.log_var[i]);
      }
      c.class_mask = subset_mask(td.class_mask, nodes, K);
    }
  }

  LoopSpec spec;
  spec.kind = ModuleKind::ov;
  spec.t_first = 1;
  spec.t_last = T - 1;
  spec.build = [&](std::size_t ti, std::size_t t, Rng& rng) -> std::optional<PreparedStep> {
    const VulnerabilityContext& c = ctx[ti][t];
    if (!c.graph) return std::nullopt;
    const TileData& td = data.tiles[ti];
    const auto& nodes = c.graph->node_map;
    Rng h_rng = rng.split(1);
    const LognormalSample h = reparam_lognormal(c.te_height, h_rng);
    const TaggedMatrix lnh{Matrix::column(h.log_value), Source::te_sample};
    const TaggedMatrix xhat{gather_rows(m.te_recon[ti][t], nodes), Source::te_reconstruction};
    PreparedStep step;
    step.classes = K;
    step.instance.a_hat = &c.graph->normalized;
    step.instance.encoder_input = ov_encoder_input(lnh, xhat);
    step.instance.recon_target = xhat.values;
    step.instance.recon_weights = gather_weights(td.covariate_weights[t], nodes, B);
    step.instance.prior = td.vulnerability_prior.subset(nodes);
    step.instance.class_mask = c.class_mask;
    return step;
  };
  TrainResult result;
  result.params = run_loop(data, cfg, spec, result.history);
  return result;
}

TrainResult train_tv(const Dataset& data, const TrainedModules& m, const TrainConfig& cfg) {
  const std::size_t T = data.timesteps;
  const std::size_t K = data.shape.classes;
  if (T < 3) throw ConfigError("TV training needs at least 3 timesteps");
  std::vector<std::vector<std::optional<VulnerabilityState>>> ov(data.tiles.size());
  for (std::size_t ti = 0; ti < data.tiles.size(); ++ti) {
    ov[ti].resize(T);
    for (std::size_t t = 1; t < T; ++t) ov[ti][t] = infer_ov(m, data, ti, t, cfg);
  }
  // Prior at t+1 mapped onto N^V_t; nodes absent from N^V_{t+1} are excluded from KL/CE.
  struct Target {
    PriorBeliefs prior;
    std::vector<std::uint8_t> kl_valid;
  };
  std::vector<std::vector<Target>> targets(data.tiles.size(), std::vector<Target>(T));
  for (std::size_t ti = 0; ti < data.tiles.size(); ++ti) {
    for (std::size_t t = 1; t + 1 < T; ++t) {
      if (!ov[ti][t]) continue;
      const auto& nodes = ov[ti][t]->graph.node_map;
      Target& tg = targets[ti][t];
      tg.prior.p0_v = Matrix(nodes.size(), K, 1.0 / static_cast<double>(K));
      tg.kl_valid.assign(nodes.size(), 0);
      if (ov[ti][t + 1]) {
        const auto& nxt = *ov[ti][t + 1];
        std::vector<std::ptrdiff_t> local(data.tiles[ti].nodes(), -1);
        for (std::size_t j = 0; j < nxt.graph.node_map.size(); ++j) local[nxt.graph.node_map[j]] = static_cast<std::ptrdiff_t>(j);
        for (std::size_t r = 0; r < nodes.size(); ++r) {
          const std::ptrdiff_t j = local[nodes[r]];
          if (j < 0) continue;
          for (std::size_t k = 0; k < K; ++k) tg.prior.p0_v(r, k) = nxt.probabilities(static_cast<std::size_t>(j), k);
          tg.kl_valid[r] = 1;
        }
      }
      tg.prior.sanitize();
      tg.prior.v_importance = default_importance_mask(tg.prior.p0_v, cfg.argmax_importance);
    }
  }

  LoopSpec spec;
  spec.kind = ModuleKind::tv;
  spec.t_first = 1;
  spec.t_last = T - 2;
  spec.build = [&](std::size_t ti, std::size_t t, Rng& rng) -> std::optional<PreparedStep> {
    if (!ov[ti][t]) return std::nullopt;
    const VulnerabilityState& st = *ov[ti][t];
    Rng v_rng = rng.split(1);
    const GumbelSoftmaxSample v = gumbel_softmax(st.pruned, cfg.objective.temperature, v_rng);
    const TaggedMatrix vt{v.value, Source::ov_sample};
    const TaggedMatrix xhat = ov_reconstruction(*m.ov, v.value, st.graph);
    PreparedStep step;
    step.classes = K;
    step.instance.a_hat = &st.graph.normalized;
    step.instance.encoder_input = tv_encoder_input(vt, xhat);
    step.instance.recon_target = step.instance.encoder_input;
    step.instance.prior = targets[ti][t].prior;
    step.instance.kl_valid = targets[ti][t].kl_valid;
    step.instance.class_mask = st.pruned.class_mask;
    return step;
  };
  TrainResult result;
  result.params = run_loop(data, cfg, spec, result.history);
  return result;
}

}  // namespace

TrainResult train_module(ModuleKind kind, const Dataset& data, const TrainedModules& upstream,
                         const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  require_prerequisites(kind, upstream);
  switch (kind) {
    case ModuleKind::oe: return train_oe(data, cfg);
    case ModuleKind::te: return train_te(data, *upstream.oe, cfg);
    case ModuleKind::ov: return train_ov(data, upstream, cfg);
    case ModuleKind::tv: return train_tv(data, upstream, cfg);
  }
  throw ConfigError("unknown module kind");
}

}  // namespace gvssm
