#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gvssm/matrix.hpp"
#include "gvssm/random.hpp"

namespace gvssm {

inline constexpr double kMinLogVar = -13.815510557964274;  // ln(1e-6)
inline constexpr double kMaxLogVar = 13.815510557964274;   // ln(1e6)
inline constexpr double kDefaultPruningLogit = -20.0;
inline constexpr double kDefaultTemperature = 0.5;

/// Per-node lognormal height belief: ln(height) ~ N(mu, exp(log_var)).
struct LognormalHead {
  std::vector<double> mu;
  std::vector<double> log_var;

  std::size_t size() const noexcept { return mu.size(); }
  std::vector<double> variance() const;
  /// Throws HeadError on the first non-finite node or a size mismatch.
  void validate() const;
};

double clamp_log_var(double raw) noexcept;
/// 1 where `raw` lies inside the clamp interval (gradient passes), else 0.
double clamp_log_var_slope(double raw) noexcept;

/// Per-node presence logit. p = softmax((logit, 0))[0] = sigmoid(logit).
struct BernoulliHead {
  std::vector<double> logit;

  std::size_t size() const noexcept { return logit.size(); }
  std::vector<double> probability() const;
  struct CategoricalHead as_categorical() const;
};

/// Per-node K-class logits plus an optional allowed-class mask.
struct CategoricalHead {
  Matrix logits;                          // nodes x K
  std::vector<std::uint8_t> class_mask;   // nodes * K, 1 = allowed; empty means all allowed

  std::size_t nodes() const noexcept { return logits.rows(); }
  std::size_t classes() const noexcept { return logits.cols(); }
  bool allowed(std::size_t node, std::size_t k) const {
    return class_mask.empty() || class_mask[node * classes() + k] != 0;
  }
  void validate() const;
};

struct TemperatureConfig {
  double tau = kDefaultTemperature;
  void validate() const;
};

struct LognormalSample {
  std::vector<double> noise;      // eps ~ N(0, 1)
  std::vector<double> log_value;  // mu + exp(log_var / 2) * eps
  std::vector<double> value;      // exp(log_value)
};

struct LognormalGrad {
  std::vector<double> mu;
  std::vector<double> log_var;
};

/// exp(mu + sigma * eps), eps drawn from `rng`.
LognormalSample reparam_lognormal(const LognormalHead& head, Rng& rng);
/// Same path with caller-supplied eps.
LognormalSample reparam_lognormal(const LognormalHead& head, std::span<const double> noise);
/// Chain rule through the reparameterized path. Either upstream span may be empty.
LognormalGrad reparam_lognormal_backward(const LognormalHead& head, const LognormalSample& sample,
                                         std::span<const double> d_log_value,
                                         std::span<const double> d_value = {});

/// -log(-log(u)), u ~ Uniform(0, 1) clamped away from the endpoints.
std::vector<double> sample_gumbel(Rng& rng, std::size_t n);

struct GumbelSoftmaxSample {
  Matrix gumbel;  // nodes x K
  Matrix value;   // nodes x K, rows on the simplex
};

GumbelSoftmaxSample gumbel_softmax(const CategoricalHead& head, const TemperatureConfig& temp,
                                   Rng& rng);
GumbelSoftmaxSample gumbel_softmax(const CategoricalHead& head, const TemperatureConfig& temp,
                                   const Matrix& gumbel);
/// Gradient w.r.t. logits for fixed Gumbel noise.
Matrix gumbel_softmax_backward(const GumbelSoftmaxSample& sample, const TemperatureConfig& temp,
                               const Matrix& d_value);

/// Row-wise softmax with max-logit subtraction.
Matrix softmax_probs(const CategoricalHead& head);
Matrix softmax_rows(const Matrix& logits);
/// Vector-Jacobian product of row-wise softmax.
Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs);

/// Replaces masked-out logits with `pruning_logit`. Throws ConfigError naming the
/// first node whose mask allows no class.
CategoricalHead prune_logits(const CategoricalHead& head,
                             double pruning_logit = kDefaultPruningLogit);
/// Zeroes gradient entries of pruned (constant) logits.
void prune_backward(const CategoricalHead& head, Matrix& d_logits);

}  // namespace gvssm
