#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "gvssm/raster.hpp"

namespace gvssm {

/// Stitched per-pixel posteriors over the whole raster.
struct PosteriorMaps {
  std::vector<std::string> classes;
  RasterStack mu;          // 1 band x T, log-height mean
  RasterStack sigma;       // 1 band x T, log-height standard deviation
  RasterStack presence;    // 1 band x T
  RasterStack class_prob;  // K bands x T, nodata outside the vulnerability graph

  PosteriorMaps() = default;
  PosteriorMaps(std::size_t width, std::size_t height, std::size_t timesteps, std::vector<std::string> classes);
};

/// Index of the largest class probability per pixel (lowest index on ties), nodata
/// where the class rasters hold none.
RasterStack argmax_raster(const RasterStack& class_prob);

/// Writes <param>_t<t>.gvsr for mu, sigma, presence, class_prob and argmax plus
/// summary.csv (one row per timestep).
void export_posterior_maps(const PosteriorMaps& maps, const std::filesystem::path& dir);
/// Reads back the class probability rasters written by export_posterior_maps.
RasterStack read_class_probabilities(const std::filesystem::path& dir, std::size_t timesteps);
RasterStack read_posterior_parameter(const std::filesystem::path& dir, const std::string& name,
                                     std::size_t timesteps);

}  // namespace gvssm
