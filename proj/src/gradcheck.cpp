#include "gvssm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "gvssm/errors.hpp"

namespace gvssm {

std::vector<double> finite_difference_gradient(const ScalarFunction& loss_fn,
                                               std::span<const double> params, double step) {
  if (!(step > 0.0)) throw ConfigError("finite_difference_gradient: step must be positive");
  std::vector<double> probe(params.begin(), params.end());
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double plus = loss_fn(probe);
    probe[i] = original - step;
    const double minus = loss_fn(probe);
    probe[i] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw ProbeError("finite_difference_gradient: non-finite loss probing coordinate " +
                           std::to_string(i),
                       i);
    }
    grad[i] = (plus - minus) / (2.0 * step);
  }
  return grad;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max(1e-12, std::sqrt(na) + std::sqrt(nn));
}

}  // namespace gvssm
