#include "gvssm/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gvssm/errors.hpp"

namespace gvssm {

std::vector<double> LognormalHead::variance() const {
  std::vector<double> v(log_var.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(log_var[i]);
  return v;
}

void LognormalHead::validate() const {
  if (mu.size() != log_var.size()) throw HeadError("lognormal head: mu/log_var length mismatch", 0);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!std::isfinite(mu[i]) || !std::isfinite(log_var[i])) {
      throw HeadError("lognormal head: non-finite parameters at node " + std::to_string(i), i);
    }
  }
}

double clamp_log_var(double raw) noexcept { return std::clamp(raw, kMinLogVar, kMaxLogVar); }

double clamp_log_var_slope(double raw) noexcept {
  return (raw > kMinLogVar && raw < kMaxLogVar) ? 1.0 : 0.0;
}

std::vector<double> BernoulliHead::probability() const {
  std::vector<double> p(logit.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    // Two-class softmax over (logit, 0), written in the overflow-safe branch form.
    const double l = logit[i];
    p[i] = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
  }
  return p;
}

CategoricalHead BernoulliHead::as_categorical() const {
  CategoricalHead head{Matrix(logit.size(), 2), {}};
  for (std::size_t i = 0; i < logit.size(); ++i) head.logits(i, 0) = logit[i];
  return head;
}

void CategoricalHead::validate() const {
  if (classes() < 2) throw ConfigError("categorical head: need at least 2 classes");
  if (!class_mask.empty() && class_mask.size() != logits.size()) {
    throw ConfigError("categorical head: mask size does not match logits " +
                      logits.shape_string());
  }
  for (std::size_t i = 0; i < nodes(); ++i)
    for (std::size_t k = 0; k < classes(); ++k)
      if (!std::isfinite(logits(i, k)))
        throw HeadError("categorical head: non-finite logit at node " + std::to_string(i), i);
}

void TemperatureConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("temperature tau must be positive");
}

LognormalSample reparam_lognormal(const LognormalHead& head, Rng& rng) {
  return reparam_lognormal(head, sample_gaussian(rng, head.size()));
}

LognormalSample reparam_lognormal(const LognormalHead& head, std::span<const double> noise) {
  head.validate();
  if (noise.size() != head.size()) throw ShapeError("reparam_lognormal: noise length mismatch");
  LognormalSample s;
  s.noise.assign(noise.begin(), noise.end());
  s.log_value.resize(head.size());
  s.value.resize(head.size());
  for (std::size_t i = 0; i < head.size(); ++i) {
    s.log_value[i] = head.mu[i] + std::exp(0.5 * head.log_var[i]) * noise[i];
    s.value[i] = std::exp(s.log_value[i]);
  }
  return s;
}

LognormalGrad reparam_lognormal_backward(const LognormalHead& head, const LognormalSample& sample,
                                         std::span<const double> d_log_value,
                                         std::span<const double> d_value) {
  const std::size_t n = head.size();
  LognormalGrad g{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    double d = d_log_value.empty() ? 0.0 : d_log_value[i];
    if (!d_value.empty()) d += d_value[i] * sample.value[i];
    g.mu[i] = d;
    g.log_var[i] = d * 0.5 * std::exp(0.5 * head.log_var[i]) * sample.noise[i];
  }
  return g;
}

std::vector<double> sample_gumbel(Rng& rng, std::size_t n) {
  std::vector<double> g(n);
  for (double& v : g) v = -std::log(-std::log(rng.next_open_unit()));
  return g;
}

GumbelSoftmaxSample gumbel_softmax(const CategoricalHead& head, const TemperatureConfig& temp,
                                   Rng& rng) {
  Matrix g(head.nodes(), head.classes(), sample_gumbel(rng, head.logits.size()));
  return gumbel_softmax(head, temp, g);
}

GumbelSoftmaxSample gumbel_softmax(const CategoricalHead& head, const TemperatureConfig& temp,
                                   const Matrix& gumbel) {
  temp.validate();
  head.validate();
  if (gumbel.rows() != head.nodes() || gumbel.cols() != head.classes()) {
    throw ShapeError("gumbel_softmax: noise " + gumbel.shape_string() + " vs logits " +
                     head.logits.shape_string());
  }
  Matrix z = head.logits;
  for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = (z.data()[i] + gumbel.data()[i]) / temp.tau;
  return {gumbel, softmax_rows(z)};
}

Matrix gumbel_softmax_backward(const GumbelSoftmaxSample& sample, const TemperatureConfig& temp,
                               const Matrix& d_value) {
  Matrix d = softmax_backward(sample.value, d_value);
  d *= 1.0 / temp.tau;
  return d;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto out = p.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      out[k] = std::exp(in[k] - mx);
      sum += out[k];
    }
    for (double& v : out) v /= sum;
  }
  return p;
}

Matrix softmax_probs(const CategoricalHead& head) {
  head.validate();
  return softmax_rows(head.logits);
}

Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs) {
  if (probs.rows() != d_probs.rows() || probs.cols() != d_probs.cols()) {
    throw ShapeError("softmax_backward: " + probs.shape_string() + " vs " +
                     d_probs.shape_string());
  }
  Matrix d(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto p = probs.row(i);
    auto g = d_probs.row(i);
    double dot = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) dot += p[k] * g[k];
    for (std::size_t k = 0; k < p.size(); ++k) d(i, k) = p[k] * (g[k] - dot);
  }
  return d;
}

CategoricalHead prune_logits(const CategoricalHead& head, double pruning_logit) {
  CategoricalHead out = head;
  if (head.class_mask.empty()) return out;
  if (head.class_mask.size() != head.logits.size()) {
    throw ConfigError("prune_logits: mask size does not match logits " +
                      head.logits.shape_string());
  }
  for (std::size_t i = 0; i < head.nodes(); ++i) {
    bool any = false;
    for (std::size_t k = 0; k < head.classes(); ++k) {
      if (head.allowed(i, k)) {
        any = true;
      } else {
        out.logits(i, k) = pruning_logit;
      }
    }
    if (!any) {
      throw ConfigError("prune_logits: node " + std::to_string(i) + " has every class masked");
    }
  }
  return out;
}

void prune_backward(const CategoricalHead& head, Matrix& d_logits) {
  if (head.class_mask.empty()) return;
  for (std::size_t i = 0; i < head.nodes(); ++i)
    for (std::size_t k = 0; k < head.classes(); ++k)
      if (!head.allowed(i, k)) d_logits(i, k) = 0.0;
}

}  // namespace gvssm
