#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gvssm/evaluation.hpp"
#include "gvssm/keyvalue.hpp"
#include "gvssm/scenario.hpp"
#include "gvssm/training.hpp"

namespace gvssm {

/// Every tunable of the command-line pipeline. Keys are listed in
/// PipelineConfig::keys(); the CLI applies a config file, then --set overrides.
struct PipelineConfig {
  ScenarioSpec scenario;
  TrainConfig train;
  std::vector<std::size_t> hidden{32, 32};
  std::size_t tile_side = 32;
  SplitFractions fractions;
  double split_tolerance = 0.1;
  std::size_t horizon = 10;
  int baseline = 1;
  double shape_peak_weight = 2.0;
  double shape_base_weight = 1.0;
  std::size_t gradcheck_instances = 10;

  static std::vector<std::string> keys();
  /// Starts from defaults; throws ConfigError on an unknown key or bad value.
  static PipelineConfig from_key_values(const KeyValues& kv);
  void apply(const KeyValues& kv);
  KeyValues to_key_values() const;
  void validate() const;
};

/// Output directory layout.
namespace paths {
inline constexpr const char* kConfig = "config.txt";
inline constexpr const char* kManifest = "manifest.txt";
inline constexpr const char* kRunLog = "run.log";
inline constexpr const char* kCovariates = "covariates.gvsr";
inline constexpr const char* kTruthPresence = "truth_presence.gvsr";
inline constexpr const char* kTruthHeight = "truth_height.gvsr";
inline constexpr const char* kTruthComposition = "truth_composition.gvsr";
inline constexpr const char* kGraphs = "graphs";
inline constexpr const char* kTiles = "graphs/tiles.txt";
inline constexpr const char* kSplit = "split.txt";
inline constexpr const char* kSplitReport = "split_report.txt";
inline constexpr const char* kTeRecon = "te_recon.gvsr";
inline constexpr const char* kPosterior = "posterior";
inline constexpr const char* kEval = "eval";
std::string checkpoint(ModuleKind kind);
std::string loss_history(ModuleKind kind);
std::string edges(int tile_id);
}  // namespace paths

/// Key-value record of produced files. Loading checks that each listed file exists.
class Manifest {
 public:
  static Manifest load(const std::filesystem::path& out);
  /// Adds entries and rewrites manifest.txt.
  static void record(const std::filesystem::path& out, const std::map<std::string, std::string>& entries);
  const KeyValues& values() const noexcept { return kv_; }

 private:
  KeyValues kv_;
};

void save_effective_config(const PipelineConfig& cfg, const std::filesystem::path& out);
void append_run_log(const std::filesystem::path& out, const std::string& line);

// Stages, in dependency order. Each reads its inputs from and writes its
// artifacts under `out`.

void stage_generate(const PipelineConfig& cfg, const std::filesystem::path& out);
std::vector<TileGrid> stage_build_graphs(const PipelineConfig& cfg, const std::filesystem::path& out);
SplitAssignment stage_split(const PipelineConfig& cfg, const std::filesystem::path& out);
/// Throws PrerequisiteError when an upstream checkpoint is missing.
TrainResult stage_train(const PipelineConfig& cfg, const std::filesystem::path& out, ModuleKind kind);
void stage_infer(const PipelineConfig& cfg, const std::filesystem::path& out);

struct ForecastSummary {
  std::size_t horizon = 0;
  std::size_t exposure_steps = 0;
  std::size_t vulnerability_steps = 0;
  double max_simplex_error = 0.0;  // max |sum - 1| over every forecast composition
  double min_variance = 0.0;       // smallest forecast log-height variance
  double min_presence = 0.0;
  double max_presence = 0.0;
  bool all_finite = true;
};
ForecastSummary stage_forecast(const PipelineConfig& cfg, const std::filesystem::path& out, std::size_t horizon);

struct TruthComparison {
  double posterior_vs_truth = 0.0;
  double prior_vs_truth = 0.0;
  std::size_t pixels = 0;
};
struct AitchisonSummary {
  DistanceSeries series;
  std::map<int, double> ratios;
  std::optional<TruthComparison> truth;  // present when truth rasters exist
};
AitchisonSummary stage_eval_aitchison(const PipelineConfig& cfg, const std::filesystem::path& out, int baseline);

struct GradcheckSummary {
  double max_relative_error = 0.0;
  std::size_t checks = 0;
};
GradcheckSummary stage_gradcheck(const PipelineConfig& cfg, const std::filesystem::path& out);

/// generate, build graphs, split, train oe/te/ov/tv, infer, forecast, evaluate.
void run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out);

/// Dataset assembled from the stage outputs under `out`.
Dataset load_dataset(const PipelineConfig& cfg, const std::filesystem::path& out);
/// Checkpoints present under `out` up to (not including) `kind`, plus the TE
/// reconstructions when available.
TrainedModules load_trained(const Dataset& data, const std::filesystem::path& out);

}  // namespace gvssm
