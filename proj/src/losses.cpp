#include "gvssm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gvssm/errors.hpp"

namespace gvssm {

namespace {

std::size_t count_valid(std::size_t n, std::span<const std::uint8_t> valid) {
  if (valid.empty()) return n;
  if (valid.size() != n) throw ShapeError("valid mask length does not match node count");
  return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

bool is_valid(std::span<const std::uint8_t> valid, std::size_t i) {
  return valid.empty() || valid[i] != 0;
}

void require_nodes(std::size_t have, const PriorBeliefs& prior, const char* who) {
  if (prior.nodes() != have) {
    throw ShapeError(std::string(who) + ": head has " + std::to_string(have) +
                     " nodes, prior has " + std::to_string(prior.nodes()));
  }
}

double importance(const PriorBeliefs& prior, std::size_t i, std::size_t k) {
  return prior.v_importance.empty() ? 1.0 : prior.v_importance(i, k);
}

double weight_or_one(const std::vector<double>& w, std::size_t i) {
  return w.empty() ? 1.0 : w[i];
}

// log(sigmoid(x)) without overflow or underflow to -inf.
double log_sigmoid(double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); }

}  // namespace

double safe_log(double x) noexcept { return std::log(std::max(x, kProbabilityClamp)); }
double safe_log_slope(double x) noexcept { return x > kProbabilityClamp ? 1.0 / x : 0.0; }

int PriorBeliefs::sanitize() {
  const std::size_t n = nodes();
  int clamped = 0;
  for (double& s : sigma0) {
    if (!(s >= kSigmaFloor)) {
      s = kSigmaFloor;
      ++clamped;
    }
  }
  for (double& p : p0_bp) p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  for (std::size_t i = 0; i < p0_v.rows(); ++i) {
    auto row = p0_v.row(i);
    double sum = 0.0;
    for (double& v : row) {
      v = std::max(v, kProbabilityClamp);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  auto fill = [n](std::vector<double>& w) {
    if (w.empty()) w.assign(n, 1.0);
  };
  if (!mu0.empty()) {
    fill(w_mu0);
    fill(w_sigma0);
  }
  fill(w_p0);
  return clamped;
}

PriorBeliefs PriorBeliefs::subset(std::span<const std::size_t> idx) const {
  auto pick = [&idx](const std::vector<double>& v) {
    std::vector<double> out;
    if (v.empty()) return out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(v.at(i));
    return out;
  };
  PriorBeliefs out;
  out.mu0 = pick(mu0);
  out.sigma0 = pick(sigma0);
  out.p0_bp = pick(p0_bp);
  out.w_mu0 = pick(w_mu0);
  out.w_sigma0 = pick(w_sigma0);
  out.w_p0 = pick(w_p0);
  if (!p0_v.empty()) out.p0_v = gather_rows(p0_v, idx);
  if (!v_importance.empty()) out.v_importance = gather_rows(v_importance, idx);
  return out;
}

Matrix default_importance_mask(const Matrix& p0_v, double argmax_weight) {
  Matrix m(p0_v.rows(), p0_v.cols(), 1.0);
  for (std::size_t i = 0; i < p0_v.rows(); ++i) {
    auto row = p0_v.row(i);
    const auto k = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    m(i, k) = argmax_weight;
  }
  return m;
}

void ShapeWeightScheme::validate() const {
  if (anchor_values.empty() || anchor_values.size() != anchor_weights.size()) {
    throw ConfigError("shape weights: anchors and weights must be non-empty and equal length");
  }
  for (std::size_t i = 0; i < anchor_values.size(); ++i) {
    if (anchor_weights[i] < 0.0) throw ConfigError("shape weights: negative anchor weight");
    if (i > 0 && anchor_values[i] < anchor_values[i - 1]) {
      throw ConfigError("shape weights: anchors must be sorted by value");
    }
  }
}

ShapeWeightScheme ShapeWeightScheme::from_samples(std::span<const double> values,
                                                  double peak_weight, double base_weight,
                                                  std::size_t bins) {
  if (values.empty()) return {{0.0}, {base_weight}};
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return {{lo}, {peak_weight}};
  bins = std::max<std::size_t>(bins, 1);
  std::vector<std::size_t> hist(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    hist[std::min(b, bins - 1)]++;
  }
  const auto peak = static_cast<std::size_t>(std::max_element(hist.begin(), hist.end()) - hist.begin());
  const double mode = lo + (static_cast<double>(peak) + 0.5) * width;
  return {{lo, 0.5 * (lo + mode), mode, 0.5 * (mode + hi), hi},
          {peak_weight, base_weight, peak_weight, base_weight, peak_weight}};
}

std::vector<double> shape_weights(std::span<const double> values, const ShapeWeightScheme& scheme) {
  scheme.validate();
  const auto& xs = scheme.anchor_values;
  const auto& ws = scheme.anchor_weights;
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (v <= xs.front()) {
      out[i] = ws.front();
    } else if (v >= xs.back()) {
      out[i] = ws.back();
    } else {
      const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), v) - xs.begin());
      const std::size_t lo = hi - 1;
      const double span = xs[hi] - xs[lo];
      const double t = span > 0.0 ? (v - xs[lo]) / span : 0.0;
      out[i] = ws[lo] + t * (ws[hi] - ws[lo]);
    }
  }
  return out;
}

double weighted_mse(const Matrix& x, const Matrix& x_hat, std::span<const double> w) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) {
    throw ShapeError("weighted_mse: target " + x.shape_string() + " vs reconstruction " +
                     x_hat.shape_string());
  }
  if (w.size() != x.size()) throw ShapeError("weighted_mse: weight length does not match entries");
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.data()[i] - x_hat.data()[i];
    s += w[i] * d * d;
  }
  return s / static_cast<double>(x.size());
}

Matrix weighted_mse_grad(const Matrix& x, const Matrix& x_hat, std::span<const double> w) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols() || w.size() != x.size()) {
    throw ShapeError("weighted_mse_grad: shape mismatch");
  }
  Matrix g(x.rows(), x.cols());
  if (x.empty()) return g;
  const double scale = 2.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g.data()[i] = scale * w[i] * (x_hat.data()[i] - x.data()[i]);
  return g;
}

NodeLoss kl_lognormal(const LognormalHead& head, const PriorBeliefs& prior,
                      std::span<const std::uint8_t> valid) {
  head.validate();
  require_nodes(head.size(), prior, "kl_lognormal");
  const std::size_t n = head.size();
  const std::size_t nv = count_valid(n, valid);
  NodeLoss out{std::vector<double>(n, 0.0), 0.0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const double s0 = std::max(prior.sigma0[i], kSigmaFloor);
    const double var0 = s0 * s0;
    const double dm = head.mu[i] - prior.mu0[i];
    const double ratio = std::exp(head.log_var[i]) / var0;
    const double term_mu = dm * dm / var0 * weight_or_one(prior.w_mu0, i);
    const double term_sigma = (ratio - (head.log_var[i] - std::log(var0)) - 1.0) *
                              weight_or_one(prior.w_sigma0, i);
    out.per_node[i] = 0.5 * (term_mu + term_sigma);
    if (is_valid(valid, i)) out.mean += out.per_node[i];
  }
  if (nv > 0) out.mean /= static_cast<double>(nv);
  return out;
}

LognormalGrad kl_lognormal_grad(const LognormalHead& head, const PriorBeliefs& prior,
                                std::span<const std::uint8_t> valid) {
  require_nodes(head.size(), prior, "kl_lognormal_grad");
  const std::size_t n = head.size();
  const std::size_t nv = count_valid(n, valid);
  LognormalGrad g{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  if (nv == 0) return g;
  const double inv = 1.0 / static_cast<double>(nv);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_valid(valid, i)) continue;
    const double s0 = std::max(prior.sigma0[i], kSigmaFloor);
    const double var0 = s0 * s0;
    g.mu[i] = inv * (head.mu[i] - prior.mu0[i]) / var0 * weight_or_one(prior.w_mu0, i);
    g.log_var[i] = inv * 0.5 * (std::exp(head.log_var[i]) / var0 - 1.0) *
                   weight_or_one(prior.w_sigma0, i);
  }
  return g;
}

NodeLoss kl_bernoulli(const BernoulliHead& head, const PriorBeliefs& prior,
                      std::span<const std::uint8_t> valid) {
  require_nodes(head.size(), prior, "kl_bernoulli");
  const std::size_t n = head.size();
  const std::size_t nv = count_valid(n, valid);
  const auto p = head.probability();
  NodeLoss out{std::vector<double>(n, 0.0), 0.0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(prior.p0_bp[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double pi = p[i];
    out.per_node[i] = (pi * (log_sigmoid(head.logit[i]) - std::log(q)) +
                       (1.0 - pi) * (log_sigmoid(-head.logit[i]) - std::log(1.0 - q))) *
                      weight_or_one(prior.w_p0, i);
    if (is_valid(valid, i)) out.mean += out.per_node[i];
  }
  if (nv > 0) out.mean /= static_cast<double>(nv);
  return out;
}

std::vector<double> kl_bernoulli_grad(const BernoulliHead& head, const PriorBeliefs& prior,
                                      std::span<const std::uint8_t> valid) {
  require_nodes(head.size(), prior, "kl_bernoulli_grad");
  const std::size_t n = head.size();
  const std::size_t nv = count_valid(n, valid);
  std::vector<double> g(n, 0.0);
  if (nv == 0) return g;
  const auto p = head.probability();
  const double inv = 1.0 / static_cast<double>(nv);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_valid(valid, i)) continue;
    const double q = std::clamp(prior.p0_bp[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double pi = p[i];
    const double r = 1.0 - pi;
    // d/dp of p(log p - log q) + (1-p)(log(1-p) - log(1-q)); the unit terms cancel.
    const double d_p = (log_sigmoid(head.logit[i]) - std::log(q)) -
                       (log_sigmoid(-head.logit[i]) - std::log(1.0 - q));
    g[i] = inv * d_p * pi * r * weight_or_one(prior.w_p0, i);
  }
  return g;
}

NodeLoss kl_multinomial(const CategoricalHead& head, const PriorBeliefs& prior,
                        std::span<const std::uint8_t> valid) {
  require_nodes(head.nodes(), prior, "kl_multinomial");
  if (prior.p0_v.cols() != head.classes()) throw ShapeError("kl_multinomial: class count mismatch");
  const std::size_t n = head.nodes();
  const std::size_t nv = count_valid(n, valid);
  const Matrix p = softmax_probs(head);
  NodeLoss out{std::vector<double>(n, 0.0), 0.0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    bool mismatch = false;
    for (std::size_t k = 0; k < head.classes(); ++k) {
      const double q = std::max(prior.p0_v(i, k), kProbabilityClamp);
      const double pk = p(i, k);
      if (q <= kProbabilityClamp && pk >= kSupportMassThreshold) mismatch = true;
      s += importance(prior, i, k) * (pk * (safe_log(pk) - std::log(q)) - pk + q);
    }
    out.per_node[i] = s * weight_or_one(prior.w_p0, i);
    if (is_valid(valid, i)) {
      out.mean += out.per_node[i];
      if (mismatch) ++out.warnings;
    }
  }
  if (nv > 0) out.mean /= static_cast<double>(nv);
  return out;
}

Matrix kl_multinomial_grad(const CategoricalHead& head, const PriorBeliefs& prior,
                           std::span<const std::uint8_t> valid) {
  require_nodes(head.nodes(), prior, "kl_multinomial_grad");
  const std::size_t n = head.nodes();
  const std::size_t nv = count_valid(n, valid);
  const Matrix p = softmax_probs(head);
  Matrix d_p(n, head.classes());
  if (nv == 0) return d_p;
  const double inv = 1.0 / static_cast<double>(nv);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_valid(valid, i)) continue;
    const double w = inv * weight_or_one(prior.w_p0, i);
    for (std::size_t k = 0; k < head.classes(); ++k) {
      const double q = std::max(prior.p0_v(i, k), kProbabilityClamp);
      const double pk = p(i, k);
      d_p(i, k) = w * importance(prior, i, k) *
                  (safe_log(pk) + pk * safe_log_slope(pk) - std::log(q) - 1.0);
    }
  }
  return softmax_backward(p, d_p);
}

NodeLoss cross_entropy_v(const CategoricalHead& head, const PriorBeliefs& prior,
                         std::span<const std::uint8_t> valid) {
  require_nodes(head.nodes(), prior, "cross_entropy_v");
  if (prior.p0_v.cols() != head.classes()) throw ShapeError("cross_entropy_v: class count mismatch");
  const std::size_t n = head.nodes();
  const std::size_t nv = count_valid(n, valid);
  const Matrix p = softmax_probs(head);
  NodeLoss out{std::vector<double>(n, 0.0), 0.0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < head.classes(); ++k)
      s -= importance(prior, i, k) * prior.p0_v(i, k) * safe_log(p(i, k));
    out.per_node[i] = s * weight_or_one(prior.w_p0, i);
    if (is_valid(valid, i)) out.mean += out.per_node[i];
  }
  if (nv > 0) out.mean /= static_cast<double>(nv);
  return out;
}

Matrix cross_entropy_v_grad(const CategoricalHead& head, const PriorBeliefs& prior,
                            std::span<const std::uint8_t> valid) {
  require_nodes(head.nodes(), prior, "cross_entropy_v_grad");
  const std::size_t n = head.nodes();
  const std::size_t nv = count_valid(n, valid);
  const Matrix p = softmax_probs(head);
  Matrix d_p(n, head.classes());
  if (nv == 0) return d_p;
  const double inv = 1.0 / static_cast<double>(nv);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_valid(valid, i)) continue;
    const double w = inv * weight_or_one(prior.w_p0, i);
    for (std::size_t k = 0; k < head.classes(); ++k)
      d_p(i, k) = -w * importance(prior, i, k) * prior.p0_v(i, k) * safe_log_slope(p(i, k));
  }
  return softmax_backward(p, d_p);
}

double total_loss(std::span<const LossPart> parts) {
  double s = 0.0;
  for (const auto& part : parts) {
    if (part.coefficient < 0.0) throw ConfigError("total_loss: negative coefficient");
    if (part.coefficient != 0.0) s += part.coefficient * part.value;
  }
  return s;
}

}  // namespace gvssm
