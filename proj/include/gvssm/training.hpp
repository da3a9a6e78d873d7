#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gvssm/graph.hpp"
#include "gvssm/losses.hpp"
#include "gvssm/modules.hpp"
#include "gvssm/network.hpp"

namespace gvssm {

struct TrainConfig {
  AdamConfig adam;
  int epochs = 200;
  std::size_t batch_tiles = 4;
  ObjectiveSettings objective;
  std::uint64_t seed = 1;
  double presence_threshold = kDefaultPresenceThreshold;
  bool prune_on_sample = false;
  double argmax_importance = kDefaultArgmaxImportance;
  std::size_t samples = 1;  // reparameterized draws per node per step

  void validate() const;
};

/// Everything the modules see for one tile: covariates per timestep, the static
/// coarse prior resampled to pixels, and loss masks.
struct TileData {
  TileGrid tile;
  Split split = Split::train;
  std::shared_ptr<const GridTopology> topology;
  std::vector<Matrix> covariates;                  // per timestep, nodes x bands
  std::vector<std::vector<double>> covariate_weights;  // per timestep, nodes * bands
  std::vector<std::uint8_t> valid;                 // nodes
  PriorBeliefs exposure_prior;                     // mu0, sigma0, p0_bp and their weights
  PriorBeliefs vulnerability_prior;                // p0_v and the importance mask
  std::vector<std::uint8_t> class_mask;            // nodes * classes

  std::size_t nodes() const noexcept { return valid.size(); }
  ExposureGraph exposure_graph(std::size_t t) const;
};

struct Dataset {
  ModelShape shape;
  std::size_t timesteps = 0;
  std::vector<TileData> tiles;

  std::vector<std::size_t> tiles_in(Split s) const;
  void validate() const;
};

struct LossHistory {
  std::vector<double> train;
  std::vector<double> validation;
};

/// Covariate reconstructions produced by the TE decoder, per tile and timestep.
/// OV consumes these in place of raw covariates.
using ReconstructionBuffer = std::vector<std::vector<Matrix>>;

/// Trained parameter sets available to downstream modules.
struct TrainedModules {
  std::optional<ModuleParams> oe;
  std::optional<ModuleParams> te;
  std::optional<ModuleParams> ov;
  std::optional<ModuleParams> tv;
  ReconstructionBuffer te_recon;

  const ModuleParams* get(ModuleKind kind) const;
};

struct TrainResult {
  ModuleParams params;
  LossHistory history;
  ReconstructionBuffer te_recon;  // TE only
};

/// Throws PrerequisiteError naming the violated OE -> TE -> OV -> TV order.
void require_prerequisites(ModuleKind kind, const TrainedModules& upstream);

TrainResult train_module(ModuleKind kind, const Dataset& data, const TrainedModules& upstream,
                         const TrainConfig& cfg);

// Deterministic (mean-path) derived quantities used by training, inference and forecasting.

ExposureHeads infer_oe(const ModuleParams& oe, const TileData& tile, std::size_t t);
/// TE heads for timestep t >= 1 from the OE mean path at t-1 and buf(t-1).
ExposureHeads infer_te(const ModuleParams& te, const ModuleParams& oe, const TileData& tile,
                       const Matrix& recon_prev, std::size_t t, const TemperatureConfig& temp);
/// Mean-path refresh of the TE covariate reconstructions for one tile.
std::vector<Matrix> refresh_te_recon(const ModuleParams& te, const ModuleParams& oe,
                                     const TileData& tile, const std::vector<Matrix>& previous,
                                     const ModelShape& shape, const TemperatureConfig& temp);
/// Presence statistic used for pruning: the Bernoulli mean, or a Gumbel-Softmax draw
/// from a fixed per-(tile, t) stream when `prune_on_sample` is set.
std::vector<double> presence_statistic(const ExposureHeads& te_heads, const TileData& tile,
                                       std::size_t t, const TrainConfig& cfg);
/// Valid nodes whose presence statistic reaches the threshold.
std::vector<std::size_t> vulnerability_nodes(const TileData& tile, std::span<const double> presence,
                                             double threshold);
VulnerabilityGraph vulnerability_graph(const TileData& tile, std::size_t t,
                                       std::span<const std::size_t> nodes);
std::vector<std::uint8_t> subset_mask(const std::vector<std::uint8_t>& mask,
                                      std::span<const std::size_t> nodes, std::size_t classes);

/// OV posterior at t >= 1 on N^V_t (nullopt when the graph is empty).
struct VulnerabilityState {
  VulnerabilityGraph graph;
  CategoricalHead pruned;   // logits after pruning
  Matrix probabilities;     // softmax of the pruned logits
};
/// `tile` indexes data.tiles and m.te_recon.
std::optional<VulnerabilityState> infer_ov(const TrainedModules& m, const Dataset& data,
                                           std::size_t tile, std::size_t t, const TrainConfig& cfg);
/// g_OV covariate reconstruction from a vulnerability sample, tagged for TV.
TaggedMatrix ov_reconstruction(const ModuleParams& ov, const Matrix& v, const VulnerabilityGraph& g);

struct ExposureForecastStep {
  ExposureHeads heads;
  ExposureSample sample;
};
struct VulnerabilityForecastStep {
  CategoricalHead pruned;
  Matrix probabilities;
};

/// Rolls TE forward from a state at t0: heads(t0+1) = f_TE(sample(t0), xhat(t0)), with
/// xhat advanced by the covariate columns of decode_te.
std::vector<ExposureForecastStep> forecast_exposure(const ModuleParams& te, const ExposureSample& state,
                                                    const Matrix& xhat, const ExposureGraph& g,
                                                    std::size_t horizon, const TemperatureConfig& temp);
/// Rolls TV forward on a fixed vulnerability graph.
std::vector<VulnerabilityForecastStep> forecast_vulnerability(
    const ModuleParams& tv, const Matrix& v_state, const Matrix& xhat_ov, const VulnerabilityGraph& g,
    std::span<const std::uint8_t> class_mask, std::size_t horizon, const ObjectiveSettings& settings);

}  // namespace gvssm
