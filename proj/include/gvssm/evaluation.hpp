#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace gvssm {

inline constexpr double kCompositionClamp = 1e-6;

/// Classes where both compositions exceed the clamp (and `allowed`, if given, is set).
std::vector<std::uint8_t> shared_support(std::span<const double> p0, std::span<const double> p_theta,
                                         std::span<const std::uint8_t> allowed = {});

/// sqrt((1/(2K)) sum_i sum_j [ln(p0_i/p0_j) - ln(pt_i/pt_j)]^2) over the classes in
/// `support` (all classes when empty), entries clamped below at 1e-6. Throws
/// SupportError naming `pixel` when fewer than two classes remain.
double aitchison_distance(std::span<const double> p0, std::span<const double> p_theta,
                          std::span<const std::uint8_t> support = {}, std::size_t pixel = 0);

struct DistanceMap {
  std::vector<double> per_pixel;  // NaN where not evaluated
  std::optional<double> mean;     // absent when no pixel was evaluated
  std::size_t evaluated = 0;
  std::size_t excluded_singleton = 0;
};

/// Compositions are [class][pixel]. Pixels with `valid` unset are skipped; pixels
/// whose shared support is a single class are excluded and counted.
DistanceMap mean_distance_map(std::span<const double> prior, std::span<const double> posterior,
                              std::size_t classes, std::span<const std::uint8_t> valid,
                              std::span<const std::uint8_t> class_mask = {});

/// timestep -> mean distance
using DistanceSeries = std::map<int, double>;

/// value / value(baseline) per timestep. Throws UndefinedRatioError when the
/// baseline is missing, zero or non-finite.
std::map<int, double> ratio_to_baseline(const DistanceSeries& series, int baseline);

}  // namespace gvssm
