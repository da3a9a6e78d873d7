#include "gvssm/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gvssm/errors.hpp"

namespace gvssm {

void ScenarioSpec::validate() const {
  if (grid < 2) throw ConfigError("scenario grid must be >= 2");
  if (timesteps < 2) throw ConfigError("scenario needs >= 2 timesteps");
  if (classes < 2) throw ConfigError("scenario needs >= 2 classes");
  if (block_size < 1 || block_size > grid) throw ConfigError("block_size must lie in [1, grid]");
  for (double r : {growth_rate, shock_fraction, rebuild_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("scenario rates must lie in [0, 1]");
  }
  if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
  if (!(field_wavelength > 0.0)) throw ConfigError("field_wavelength must be positive");
  if (!(prior_sigma_floor > 0.0)) throw ConfigError("prior_sigma_floor must be positive");
  if (!(class_contrast >= 0.0 && class_context >= 0.0)) throw ConfigError("class slopes must be >= 0");
  if (shock_timestep + 1 >= timesteps) throw ConfigError("shock_timestep must leave a following timestep");
  if (shock_row0 + shock_rows > grid || shock_col0 + shock_cols > grid || shock_rows == 0 || shock_cols == 0) {
    throw ConfigError("shock footprint must lie inside the grid");
  }
}

std::vector<std::string> default_class_names(std::size_t classes) {
  static const char* kNames[] = {"INF", "UCB", "UFB", "C3L", "C3M", "C3H", "RS", "RM", "DS", "S5"};
  std::vector<std::string> out;
  for (std::size_t k = 0; k < classes; ++k) {
    out.push_back(k < std::size(kNames) ? kNames[k] : "CLASS" + std::to_string(k));
  }
  return out;
}

namespace {

/// Unit-variance sum of random plane waves with wavelengths near `wavelength`.
std::vector<double> smooth_field(std::size_t n, double wavelength, Rng rng) {
  constexpr int kModes = 12;
  std::vector<double> f(n * n, 0.0);
  for (int m = 0; m < kModes; ++m) {
    const double angle = 2.0 * std::numbers::pi * rng.next_unit();
    const double lambda = wavelength * (0.8 + 0.45 * rng.next_unit());
    const double phase = 2.0 * std::numbers::pi * rng.next_unit();
    const double kx = std::cos(angle) * 2.0 * std::numbers::pi / lambda;
    const double ky = std::sin(angle) * 2.0 * std::numbers::pi / lambda;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c)
        f[r * n + c] += std::cos(kx * static_cast<double>(c) + ky * static_cast<double>(r) + phase);
  }
  double mean = 0.0, sq = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  for (double v : f) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(f.size()));
  for (double& v : f) v = (v - mean) / sd;
  return f;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kLogHeightMean = 1.8;   // ~6 m
constexpr double kLogHeightScale = 0.5;
constexpr double kFineShare = 0.8;
constexpr double kPresenceSlope = 4.0;

}  // namespace

PriorRaster build_block_prior(const RasterStack& presence, const RasterStack& height,
                              const RasterStack& composition, std::size_t block,
                              double sigma_floor, const std::vector<std::string>& classes) {
  const std::size_t w = presence.width, h = presence.height, n = w * h;
  const std::size_t k = composition.bands;
  if (classes.size() != k) throw ConfigError("class vocabulary size does not match composition bands");
  PriorRaster p;
  p.width = w;
  p.height = h;
  p.classes = classes;
  p.mu0.assign(n, 0.0f);
  p.sigma0.assign(n, 0.0f);
  p.p0_bp.assign(n, 0.0f);
  p.p0_v.assign(n * k, 0.0f);
  p.class_mask.assign(n * k, 0);

  double global_sum = 0.0;
  std::size_t global_n = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (presence.values[i] > 0.5f) {
      global_sum += std::log(static_cast<double>(height.values[i]));
      ++global_n;
    }
  }
  const double global_mu = global_n ? global_sum / static_cast<double>(global_n) : kLogHeightMean;

  for (std::size_t br = 0; br < h; br += block) {
    for (std::size_t bc = 0; bc < w; bc += block) {
      const std::size_t r1 = std::min(h, br + block), c1 = std::min(w, bc + block);
      double s = 0.0, s2 = 0.0;
      std::size_t present = 0, total = 0;
      std::vector<double> comp_present(k, 0.0), comp_all(k, 0.0);
      for (std::size_t r = br; r < r1; ++r) {
        for (std::size_t c = bc; c < c1; ++c) {
          const std::size_t i = r * w + c;
          ++total;
          const bool on = presence.values[i] > 0.5f;
          for (std::size_t q = 0; q < k; ++q) {
            const double v = composition.values[q * n + i];
            comp_all[q] += v;
            if (on) comp_present[q] += v;
          }
          if (on) {
            const double lh = std::log(static_cast<double>(height.values[i]));
            s += lh;
            s2 += lh * lh;
            ++present;
          }
        }
      }
      const double mu = present ? s / static_cast<double>(present) : global_mu;
      const double var = present ? std::max(0.0, s2 / static_cast<double>(present) - mu * mu) : 0.0;
      const double sigma = std::max(std::sqrt(var), sigma_floor);
      const auto& comp = present ? comp_present : comp_all;
      double csum = 0.0;
      for (double v : comp) csum += v;
      for (std::size_t r = br; r < r1; ++r) {
        for (std::size_t c = bc; c < c1; ++c) {
          const std::size_t i = r * w + c;
          p.mu0[i] = static_cast<float>(mu);
          p.sigma0[i] = static_cast<float>(sigma);
          p.p0_bp[i] = static_cast<float>(static_cast<double>(present) / static_cast<double>(total));
          double fsum = 0.0;
          for (std::size_t q = 0; q < k; ++q) {
            const float v = static_cast<float>(comp[q] / csum);
            p.p0_v[q * n + i] = v;
            fsum += v;
          }
          // Renormalize in float so stored rows sum to 1 at float precision.
          for (std::size_t q = 0; q < k; ++q) {
            float& v = p.p0_v[q * n + i];
            v = static_cast<float>(static_cast<double>(v) / fsum);
            p.class_mask[q * n + i] = v > 0.0f ? 1 : 0;
          }
        }
      }
    }
  }
  return p;
}

Scenario generate_synthetic_scenario(const ScenarioSpec& spec) {
  spec.validate();
  const std::size_t n = spec.grid, px = n * n, T = spec.timesteps, K = spec.classes;
  const Rng root(spec.seed, 0x7363656e);
  const auto z_h = smooth_field(n, spec.field_wavelength, root.split(1));
  const auto z_2 = smooth_field(n, spec.field_wavelength, root.split(2));
  const auto z_3 = smooth_field(n, spec.field_wavelength, root.split(3));
  const auto z_v = smooth_field(n, spec.field_wavelength, root.split(4));
  const auto z_f = smooth_field(n, 0.25 * spec.field_wavelength, root.split(8));
  Rng pixel_rng = root.split(5);
  Rng dyn_rng = root.split(6);
  Rng noise_rng = root.split(7);

  Scenario sc;
  sc.covariates = RasterStack(n, n, kScenarioBands, T);
  sc.truth_presence = RasterStack(n, n, 1, T);
  sc.truth_height = RasterStack(n, n, 1, T);
  sc.truth_composition = RasterStack(n, n, K, T);

  std::vector<double> log_h(px), q(px);
  std::vector<double> comp(px * K);
  for (std::size_t i = 0; i < px; ++i) {
    log_h[i] = kLogHeightMean + kLogHeightScale * z_h[i] + 0.05 * pixel_rng.next_gaussian();
    // Unit-variance suitability score; the short-wavelength part gives built-up
    // patches smaller than a prior block.
    const double zp = (0.5 * z_h[i] + std::sqrt(0.75) * z_2[i] + kFineShare * z_f[i]) /
                      std::sqrt(1.0 + kFineShare * kFineShare) + spec.presence_offset;
    q[i] = sigmoid(kPresenceSlope * zp);
    // Class logits rise with height for higher-index classes; z_3 adds a
    // height-independent component.
    double mx = -1e300;
    std::vector<double> logit(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double centred = static_cast<double>(k) - 0.5 * static_cast<double>(K - 1);
      logit[k] = spec.class_contrast * centred * z_h[i] + spec.class_context * centred * z_3[i];
      mx = std::max(mx, logit[k]);
    }
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += (logit[k] = std::exp(logit[k] - mx));
    for (std::size_t k = 0; k < K; ++k) comp[k * px + i] = logit[k] / s;
  }

  std::vector<std::uint8_t> present(px), destroyed(px, 0);
  for (std::size_t i = 0; i < px; ++i) present[i] = q[i] > 0.5 ? 1 : 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      for (std::size_t i = 0; i < px; ++i) {
        const double u = dyn_rng.next_unit();
        const bool foot = spec.in_footprint(i / n, i % n);
        if (t == spec.shock_timestep + 1 && foot) {
          if (present[i] && u < spec.shock_fraction) {
            present[i] = 0;
            destroyed[i] = 1;
          }
        } else if (destroyed[i]) {
          if (u < spec.rebuild_rate) {
            present[i] = 1;
            destroyed[i] = 0;
          }
        } else if (!present[i] && u < spec.growth_rate * q[i]) {
          present[i] = 1;
        }
      }
    }
    for (std::size_t i = 0; i < px; ++i) {
      const double on = present[i];
      sc.truth_presence.values[t * px + i] = static_cast<float>(on);
      sc.truth_height.values[t * px + i] = on ? static_cast<float>(std::exp(log_h[i])) : 0.0f;
      double refl = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        sc.truth_composition.values[(t * K + k) * px + i] = static_cast<float>(comp[k * px + i]);
        refl += comp[k * px + i] * (2.0 * static_cast<double>(k) / static_cast<double>(K - 1) - 1.0);
      }
      const double veg = 0.5 + 0.3 * z_v[i];
      const double bands[kScenarioBands] = {
          on * (log_h[i] - 1.0),             // height-like signal
          on,                                // built-up index
          on * refl + (1.0 - on) * 0.2 * veg,  // class-dependent reflectance
          (1.0 - on) * veg,                  // vegetation-like index
      };
      for (std::size_t b = 0; b < kScenarioBands; ++b) {
        sc.covariates.values[(t * kScenarioBands + b) * px + i] =
            static_cast<float>(bands[b] + spec.noise * noise_rng.next_gaussian());
      }
    }
  }

  // Coarse prior from t = 0 truth.
  RasterStack p0(n, n, 1, 1), h0(n, n, 1, 1), c0(n, n, K, 1);
  std::copy_n(sc.truth_presence.values.begin(), px, p0.values.begin());
  std::copy_n(sc.truth_height.values.begin(), px, h0.values.begin());
  std::copy_n(sc.truth_composition.values.begin(), px * K, c0.values.begin());
  sc.prior = build_block_prior(p0, h0, c0, spec.block_size, spec.prior_sigma_floor, default_class_names(K));
  return sc;
}

}  // namespace gvssm
