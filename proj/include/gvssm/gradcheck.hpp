#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gvssm {

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every coordinate.
/// Throws ProbeError naming the coordinate when a probe is non-finite, and
/// ConfigError when step <= 0.
std::vector<double> finite_difference_gradient(const ScalarFunction& loss_fn,
                                               std::span<const double> params, double step);

/// |a - n| / max(1e-12, |a| + |n|)
double relative_error(double analytic, double numeric);
/// Vector form: ||a - n|| / max(1e-12, ||a|| + ||n||), Euclidean norms.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

struct GradCheckReport {
  std::string parameter;
  double analytic = 0.0;  // Euclidean norm of the analytic gradient block
  double numeric = 0.0;   // Euclidean norm of the finite-difference block
  double relative_error = 0.0;
};

}  // namespace gvssm
