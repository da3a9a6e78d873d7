#include "gvssm/module_gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "gvssm/errors.hpp"

namespace gvssm {

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = scale * rng.next_gaussian();
  return m;
}

Matrix random_simplex_rows(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m = random_matrix(rng, r, c);
  return softmax_rows(m);
}

std::vector<std::uint8_t> random_valid(Rng& rng, std::size_t n) {
  std::vector<std::uint8_t> v(n);
  for (auto& x : v) x = rng.next_unit() < 0.8 ? 1 : 0;
  v[0] = 1;
  return v;
}

}  // namespace

std::vector<std::string> loss_terms(ModuleKind kind) {
  if (is_exposure(kind)) return {"reconstruction", "kl_height", "kl_presence"};
  return {"reconstruction", "kl_vulnerability", "cross_entropy"};
}

ObjectiveSettings isolate_term(const std::string& term) {
  ObjectiveSettings s;
  s.reconstruction = term == "reconstruction" ? 1.0 : 0.0;
  s.kl_height = term == "kl_height" ? 1.0 : 0.0;
  s.kl_presence = term == "kl_presence" ? 1.0 : 0.0;
  s.kl_vulnerability = term == "kl_vulnerability" ? 1.0 : 0.0;
  s.cross_entropy = term == "cross_entropy" ? 1.0 : 0.0;
  if (s.reconstruction + s.kl_height + s.kl_presence + s.kl_vulnerability + s.cross_entropy == 0.0) {
    throw ConfigError("unknown loss term '" + term + "'");
  }
  return s;
}

RandomModuleCase random_module_case(ModuleKind kind, const ModelShape& shape, std::size_t side, Rng& rng) {
  RandomModuleCase c;
  const std::size_t n = side * side;
  const std::size_t k = shape.classes;
  c.a_hat = std::make_shared<SparseAdjacency>(normalize_adjacency(build_grid_adjacency(side)));
  Rng init = rng.split(1);
  c.params = ModuleParams::init(kind, shape, init);
  const NetworkDims d = network_dims(kind, shape);
  ModuleInstance& inst = c.instance;
  inst.a_hat = c.a_hat.get();
  inst.encoder_input = random_matrix(rng, n, d.encoder_in);
  inst.recon_target = random_matrix(rng, n, d.decoder_out);
  inst.recon_weights.resize(inst.recon_target.size());
  for (double& w : inst.recon_weights) w = 0.5 + 1.5 * rng.next_unit();
  inst.recon_valid = random_valid(rng, n);
  inst.kl_valid = random_valid(rng, n);
  PriorBeliefs& p = inst.prior;
  if (is_exposure(kind)) {
    for (std::size_t i = 0; i < n; ++i) {
      p.mu0.push_back(rng.next_gaussian());
      p.sigma0.push_back(0.5 + rng.next_unit());
      p.p0_bp.push_back(0.1 + 0.8 * rng.next_unit());
      p.w_mu0.push_back(1.0 + rng.next_unit());
      p.w_sigma0.push_back(1.0 + rng.next_unit());
      p.w_p0.push_back(1.0 + rng.next_unit());
    }
  } else {
    inst.class_mask.assign(n * k, 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.next_unit() < 0.4) inst.class_mask[i * k + rng.next_below(k)] = 0;
    }
    p.p0_v = random_simplex_rows(rng, n, k);
    for (std::size_t i = 0; i < n; ++i) {
      // Prior mass only on allowed classes.
      double s = 0.0;
      for (std::size_t q = 0; q < k; ++q) {
        if (!inst.class_mask[i * k + q]) p.p0_v(i, q) = 0.0;
        s += p.p0_v(i, q);
      }
      for (std::size_t q = 0; q < k; ++q) p.p0_v(i, q) /= s;
      p.w_p0.push_back(1.0 + rng.next_unit());
    }
    p.v_importance = default_importance_mask(p.p0_v);
  }
  p.sanitize();
  c.noise = draw_noise(kind, n, k, rng);
  return c;
}

std::vector<TermGradCheck> check_module_gradients(const GradCheckOptions& opts) {
  ModelShape shape;
  shape.bands = opts.bands;
  shape.classes = opts.classes;
  shape.hidden = opts.hidden;
  std::vector<TermGradCheck> out;
  const Rng root(opts.seed, 0x67726164);
  for (ModuleKind kind : {ModuleKind::oe, ModuleKind::te, ModuleKind::ov, ModuleKind::tv}) {
    for (std::size_t inst = 0; inst < opts.instances; ++inst) {
      Rng rng = root.split(static_cast<std::uint64_t>(kind) * 1000 + inst);
      RandomModuleCase c = random_module_case(kind, shape, opts.side, rng);
      const auto names = c.params.parameter_names();
      for (const std::string& term : loss_terms(kind)) {
        const ObjectiveSettings settings = isolate_term(term);
        ModuleParams grads = ModuleParams::zeros_like(c.params);
        evaluate_module(c.params, c.instance, c.noise, settings, &grads);
        ModuleParams probe = c.params;
        auto probe_mats = probe.parameters();
        const auto grad_mats = std::as_const(grads).parameters();
        for (std::size_t m = 0; m < probe_mats.size(); ++m) {
          Matrix* target = probe_mats[m];
          const std::vector<double> original = target->data();
          auto loss = [&](std::span<const double> values) {
            std::copy(values.begin(), values.end(), target->data().begin());
            return evaluate_module(probe, c.instance, c.noise, settings).terms.total;
          };
          const std::vector<double> numeric = finite_difference_gradient(loss, original, opts.step);
          target->data() = original;
          const auto& analytic = grad_mats[m]->data();
          GradCheckReport r;
          r.parameter = names[m];
          r.analytic = frobenius_norm(*grad_mats[m]);
          double nn = 0.0;
          for (double v : numeric) nn += v * v;
          r.numeric = std::sqrt(nn);
          r.relative_error = relative_error(analytic, numeric);
          out.push_back({kind, term, inst, r});
        }
      }
    }
  }
  return out;
}

}  // namespace gvssm
