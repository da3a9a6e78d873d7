#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gvssm/distributions.hpp"
#include "gvssm/matrix.hpp"

namespace gvssm {

inline constexpr double kProbabilityClamp = 1e-6;
inline constexpr double kSigmaFloor = 1e-3;
inline constexpr double kSupportMassThreshold = 1e-3;
inline constexpr double kDefaultArgmaxImportance = 2.0;

/// Per-node prior parameters the KL terms are anchored to.
struct PriorBeliefs {
  std::vector<double> mu0;
  std::vector<double> sigma0;
  std::vector<double> p0_bp;
  Matrix p0_v;  // nodes x K, may be empty for exposure-only use
  std::vector<double> w_mu0;
  std::vector<double> w_sigma0;
  std::vector<double> w_p0;
  Matrix v_importance;  // nodes x K; empty means all ones

  std::size_t nodes() const noexcept {
    return !mu0.empty() ? mu0.size() : !p0_bp.empty() ? p0_bp.size() : p0_v.rows();
  }

  /// Clamps sigma0 to kSigmaFloor, probabilities to [1e-6, 1 - 1e-6], and
  /// renormalizes p0_v rows. Missing weight vectors are filled with ones.
  /// Returns the number of sigma0 entries that were raised to the floor.
  int sanitize();
  PriorBeliefs subset(std::span<const std::size_t> nodes) const;
};

/// Weight `argmax_weight` on each row's most likely class, 1 elsewhere.
Matrix default_importance_mask(const Matrix& p0_v, double argmax_weight = kDefaultArgmaxImportance);

/// Piecewise-linear weighting over value space, clamped outside the anchor range.
struct ShapeWeightScheme {
  std::vector<double> anchor_values;
  std::vector<double> anchor_weights;

  void validate() const;
  /// Anchors at min, mode and max of `values` carry `peak_weight`; the midpoints
  /// between them carry `base_weight`. The mode is the centre of the fullest
  /// histogram bin.
  static ShapeWeightScheme from_samples(std::span<const double> values, double peak_weight = 2.0,
                                        double base_weight = 1.0, std::size_t bins = 32);
};

std::vector<double> shape_weights(std::span<const double> values, const ShapeWeightScheme& scheme);

/// (1/N) sum_i w_i (x_i - xhat_i)^2 over all N entries, w row-major like x.
double weighted_mse(const Matrix& x, const Matrix& x_hat, std::span<const double> w);
/// Gradient of weighted_mse w.r.t. x_hat.
Matrix weighted_mse_grad(const Matrix& x, const Matrix& x_hat, std::span<const double> w);

struct NodeLoss {
  std::vector<double> per_node;
  double mean = 0.0;       // over valid nodes
  int warnings = 0;        // support mismatches (multinomial terms only)
};

/// Weighted closed-form Gaussian KL on log-height. `valid` (optional, 0/1 per
/// node) restricts the mean.
NodeLoss kl_lognormal(const LognormalHead& head, const PriorBeliefs& prior,
                      std::span<const std::uint8_t> valid = {});
LognormalGrad kl_lognormal_grad(const LognormalHead& head, const PriorBeliefs& prior,
                                std::span<const std::uint8_t> valid = {});

/// Head log-probabilities are exact log-sigmoids; p0_bp is clamped to
/// [1e-6, 1 - 1e-6].
NodeLoss kl_bernoulli(const BernoulliHead& head, const PriorBeliefs& prior,
                      std::span<const std::uint8_t> valid = {});
/// Gradient of the mean w.r.t. the presence logits.
std::vector<double> kl_bernoulli_grad(const BernoulliHead& head, const PriorBeliefs& prior,
                                      std::span<const std::uint8_t> valid = {});

/// Importance-weighted discrete KL(p_theta || p0). Each class contributes
/// m_k (p log(p/q) - p + q), which sums to the textbook KL for unit m and stays
/// nonnegative for any nonnegative m. `head` is expected to be pruned already.
NodeLoss kl_multinomial(const CategoricalHead& head, const PriorBeliefs& prior,
                        std::span<const std::uint8_t> valid = {});
Matrix kl_multinomial_grad(const CategoricalHead& head, const PriorBeliefs& prior,
                           std::span<const std::uint8_t> valid = {});

/// -w sum_k m_k p0_k log(p_theta_k): supervised cross-entropy against the prior.
NodeLoss cross_entropy_v(const CategoricalHead& head, const PriorBeliefs& prior,
                         std::span<const std::uint8_t> valid = {});
Matrix cross_entropy_v_grad(const CategoricalHead& head, const PriorBeliefs& prior,
                            std::span<const std::uint8_t> valid = {});

struct LossPart {
  double value = 0.0;
  double coefficient = 1.0;
};

/// Sum of coefficient * value. Throws ConfigError on a negative coefficient.
double total_loss(std::span<const LossPart> parts);

/// log(max(x, 1e-6)) and its derivative, used inside every probability log.
double safe_log(double x) noexcept;
double safe_log_slope(double x) noexcept;

}  // namespace gvssm
