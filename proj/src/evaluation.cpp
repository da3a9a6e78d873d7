#include "gvssm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gvssm/errors.hpp"

namespace gvssm {

std::vector<std::uint8_t> shared_support(std::span<const double> p0, std::span<const double> p_theta,
                                         std::span<const std::uint8_t> allowed) {
  if (p0.size() != p_theta.size()) throw ShapeError("compositions differ in length");
  std::vector<std::uint8_t> s(p0.size());
  for (std::size_t k = 0; k < p0.size(); ++k) {
    const bool ok = allowed.empty() || allowed[k];
    s[k] = ok && p0[k] > kCompositionClamp && p_theta[k] > kCompositionClamp ? 1 : 0;
  }
  return s;
}

double aitchison_distance(std::span<const double> p0, std::span<const double> p_theta,
                          std::span<const std::uint8_t> support, std::size_t pixel) {
  if (p0.size() != p_theta.size()) throw ShapeError("compositions differ in length");
  if (!support.empty() && support.size() != p0.size()) throw ShapeError("support mask length mismatch");
  std::vector<double> d;  // ln p0_i - ln pt_i on the support
  d.reserve(p0.size());
  for (std::size_t k = 0; k < p0.size(); ++k) {
    if (!support.empty() && !support[k]) continue;
    d.push_back(std::log(std::max(p0[k], kCompositionClamp)) - std::log(std::max(p_theta[k], kCompositionClamp)));
  }
  if (d.size() < 2) {
    throw SupportError("composition support has " + std::to_string(d.size()) + " shared class(es) at pixel " +
                           std::to_string(pixel),
                       pixel);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.size(); ++j) s += (d[i] - d[j]) * (d[i] - d[j]);
  return std::sqrt(s / (2.0 * static_cast<double>(d.size())));
}

DistanceMap mean_distance_map(std::span<const double> prior, std::span<const double> posterior,
                              std::size_t classes, std::span<const std::uint8_t> valid,
                              std::span<const std::uint8_t> class_mask) {
  const std::size_t n = valid.size();
  if (prior.size() != n * classes || posterior.size() != n * classes) throw ShapeError("distance map inputs size mismatch");
  if (!class_mask.empty() && class_mask.size() != n * classes) throw ShapeError("class mask size mismatch");
  DistanceMap out;
  out.per_pixel.assign(n, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> a(classes), b(classes);
  std::vector<std::uint8_t> allowed(classes, 1);
  double sum = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    if (!valid[p]) continue;
    for (std::size_t k = 0; k < classes; ++k) {
      a[k] = prior[k * n + p];
      b[k] = posterior[k * n + p];
      if (!class_mask.empty()) allowed[k] = class_mask[k * n + p];
    }
    const auto support = shared_support(a, b, allowed);
    if (std::count(support.begin(), support.end(), 1) < 2) {
      ++out.excluded_singleton;
      continue;
    }
    out.per_pixel[p] = aitchison_distance(a, b, support, p);
    sum += out.per_pixel[p];
    ++out.evaluated;
  }
  if (out.evaluated) out.mean = sum / static_cast<double>(out.evaluated);
  return out;
}

std::map<int, double> ratio_to_baseline(const DistanceSeries& series, int baseline) {
  const auto it = series.find(baseline);
  if (it == series.end()) throw UndefinedRatioError("baseline timestep " + std::to_string(baseline) + " has no value");
  const double base = it->second;
  if (!(std::isfinite(base) && base != 0.0)) {
    throw UndefinedRatioError("baseline value at timestep " + std::to_string(baseline) + " is zero or non-finite");
  }
  std::map<int, double> out;
  for (const auto& [t, v] : series) out[t] = t == baseline ? 1.0 : v / base;
  return out;
}

}  // namespace gvssm
