#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gvssm/random.hpp"
#include "gvssm/raster.hpp"

namespace gvssm {

/// Synthetic coarse-to-fine scenario. Truth evolves by growth, a single shock
/// inside a rectangular footprint, and rebuilding of destroyed pixels.
struct ScenarioSpec {
  std::size_t grid = 64;
  std::size_t timesteps = 6;
  std::size_t classes = 4;
  double growth_rate = 0.05;
  std::size_t shock_timestep = 3;  // buildings are removed between s and s + 1
  std::size_t shock_row0 = 8;
  std::size_t shock_col0 = 8;
  std::size_t shock_rows = 16;
  std::size_t shock_cols = 16;
  double shock_fraction = 0.75;
  double rebuild_rate = 0.25;
  double noise = 0.05;
  std::size_t block_size = 5;
  double field_wavelength = 20.0;
  double prior_sigma_floor = 0.1;
  double class_contrast = 1.0;  // class log-odds slope per unit of the height field
  double class_context = 0.0;   // slope on a field independent of height
  double presence_offset = 0.0;
  std::uint64_t seed = 42;

  /// Throws ConfigError. A block size that does not divide the grid leaves a
  /// partial trailing block.
  void validate() const;
  bool in_footprint(std::size_t row, std::size_t col) const noexcept {
    return row >= shock_row0 && row < shock_row0 + shock_rows && col >= shock_col0 && col < shock_col0 + shock_cols;
  }
};

inline constexpr std::size_t kScenarioBands = 4;

struct Scenario {
  RasterStack covariates;         // 4 bands x T
  RasterStack truth_presence;     // 1 band x T, 0 or 1
  RasterStack truth_height;       // 1 band x T, metres; 0 where absent
  RasterStack truth_composition;  // K bands x T
  PriorRaster prior;
};

/// Default class vocabulary for K classes (building typology codes).
std::vector<std::string> default_class_names(std::size_t classes);

Scenario generate_synthetic_scenario(const ScenarioSpec& spec);

/// Block-averaged prior from t = 0 truth: per block, mean and spread of log-height
/// over present pixels, presence fraction and mean composition. Blocks without
/// buildings fall back to the scene-wide log-height mean and the block mean
/// composition over all pixels.
PriorRaster build_block_prior(const RasterStack& presence, const RasterStack& height,
                              const RasterStack& composition, std::size_t block_size,
                              double sigma_floor, const std::vector<std::string>& classes);

}  // namespace gvssm
