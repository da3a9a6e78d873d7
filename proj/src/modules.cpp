#include "gvssm/modules.hpp"

#include <cmath>

#include "gvssm/errors.hpp"

namespace gvssm {

std::string to_string(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::oe: return "oe";
    case ModuleKind::te: return "te";
    case ModuleKind::ov: return "ov";
    case ModuleKind::tv: return "tv";
  }
  return "oe";
}

ModuleKind module_from_string(const std::string& name) {
  if (name == "oe") return ModuleKind::oe;
  if (name == "te") return ModuleKind::te;
  if (name == "ov") return ModuleKind::ov;
  if (name == "tv") return ModuleKind::tv;
  throw ConfigError("unknown module '" + name + "' (expected oe, te, ov or tv)");
}

std::optional<ModuleKind> prerequisite(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::oe: return std::nullopt;
    case ModuleKind::te: return ModuleKind::oe;
    case ModuleKind::ov: return ModuleKind::te;
    case ModuleKind::tv: return ModuleKind::ov;
  }
  return std::nullopt;
}

bool is_exposure(ModuleKind kind) { return kind == ModuleKind::oe || kind == ModuleKind::te; }

NetworkDims network_dims(ModuleKind kind, const ModelShape& s) {
  const std::size_t b = s.bands, k = s.classes;
  switch (kind) {
    case ModuleKind::oe: return {b, 3, 2, b};
    case ModuleKind::te: return {2 + b, 3, 2, 2 + b};
    case ModuleKind::ov: return {1 + b, k, k, b};
    case ModuleKind::tv: return {k + b, k, k, k + b};
  }
  return {b, 3, 2, b};
}

ModuleParams ModuleParams::init(ModuleKind kind, const ModelShape& shape, Rng& rng) {
  if (shape.bands == 0) throw ConfigError("model shape: bands must be positive");
  if (!is_exposure(kind) && shape.classes < 2) throw ConfigError("model shape: need >= 2 classes");
  const auto d = network_dims(kind, shape);
  Rng enc_rng = rng.split(1);
  Rng dec_rng = rng.split(2);
  return {kind, Network::init(enc_rng, d.encoder_in, shape.hidden, d.encoder_out),
          Network::init(dec_rng, d.decoder_in, shape.hidden, d.decoder_out)};
}

ModuleParams ModuleParams::zeros_like(const ModuleParams& like) {
  return {like.kind, Network::zeros_like(like.encoder), Network::zeros_like(like.decoder)};
}

std::vector<Matrix*> ModuleParams::parameters() {
  auto out = encoder.parameters();
  auto dec = decoder.parameters();
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

std::vector<const Matrix*> ModuleParams::parameters() const {
  auto out = encoder.parameters();
  auto dec = decoder.parameters();
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

std::vector<std::string> ModuleParams::parameter_names() const {
  const std::string k = to_string(kind);
  auto out = encoder.parameter_names(k + ".encoder");
  auto dec = decoder.parameter_names(k + ".decoder");
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

bool ModuleParams::all_finite() const { return encoder.all_finite() && decoder.all_finite(); }

std::string to_string(Source s) {
  switch (s) {
    case Source::raw_covariates: return "raw_covariates";
    case Source::oe_sample: return "oe_sample";
    case Source::te_sample: return "te_sample";
    case Source::te_reconstruction: return "te_reconstruction";
    case Source::ov_sample: return "ov_sample";
    case Source::ov_reconstruction: return "ov_reconstruction";
    case Source::tv_sample: return "tv_sample";
  }
  return "unknown";
}

Matrix ExposureSample::features() const {
  Matrix f(height.log_value.size(), 2);
  for (std::size_t i = 0; i < f.rows(); ++i) {
    f(i, 0) = height.log_value[i];
    f(i, 1) = presence.value(i, 0);
  }
  return f;
}

ExposureHeads exposure_heads_from_output(const Matrix& out) {
  if (out.cols() != 3) throw ShapeError("exposure head output must have 3 columns, got " + out.shape_string());
  ExposureHeads h;
  const std::size_t n = out.rows();
  h.height.mu.resize(n);
  h.height.log_var.resize(n);
  h.presence.logit.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    h.height.mu[i] = out(i, 0);
    h.height.log_var[i] = clamp_log_var(out(i, 1));
    h.presence.logit[i] = out(i, 2);
  }
  return h;
}

ExposureSample sample_exposure(const ExposureHeads& heads, const TemperatureConfig& temp, Rng& rng) {
  const auto eps = sample_gaussian(rng, heads.size());
  Matrix g(heads.size(), 2, sample_gumbel(rng, heads.size() * 2));
  return sample_exposure(heads, temp, eps, g);
}

ExposureSample sample_exposure(const ExposureHeads& heads, const TemperatureConfig& temp,
                               std::span<const double> eps, const Matrix& gumbel) {
  return {reparam_lognormal(heads.height, eps),
          gumbel_softmax(heads.presence.as_categorical(), temp, gumbel)};
}

ExposureSample mean_exposure(const ExposureHeads& heads, const TemperatureConfig& temp) {
  const std::vector<double> zeros(heads.size(), 0.0);
  return sample_exposure(heads, temp, zeros, Matrix(heads.size(), 2));
}

GumbelSoftmaxSample mean_vulnerability(const CategoricalHead& pruned, const TemperatureConfig& temp) {
  return gumbel_softmax(pruned, temp, Matrix(pruned.nodes(), pruned.classes()));
}

namespace {

void require_finite(const Matrix& m, const char* who) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (double v : m.row(i))
      if (!std::isfinite(v))
        throw HeadError(std::string(who) + ": non-finite input feature at node " + std::to_string(i), i);
}

void require_kind(const ModuleParams& p, ModuleKind kind, const char* who) {
  if (p.kind != kind) {
    throw ConfigError(std::string(who) + ": parameters belong to module " + to_string(p.kind));
  }
}

void require_source(const TaggedMatrix& m, std::initializer_list<Source> allowed, const char* who) {
  for (Source s : allowed)
    if (m.source == s) return;
  throw ConfigError(std::string(who) + ": input from " + to_string(m.source) + " is not allowed here");
}

CategoricalHead categorical_from(Matrix logits, std::span<const std::uint8_t> mask) {
  CategoricalHead h{std::move(logits), {}};
  if (!mask.empty()) {
    if (mask.size() != h.logits.size()) throw ShapeError("class mask size does not match logits");
    h.class_mask.assign(mask.begin(), mask.end());
  }
  return h;
}

std::vector<std::size_t> valid_rows(std::size_t n, const std::vector<std::uint8_t>& valid) {
  std::vector<std::size_t> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (valid.empty() || valid[i]) rows.push_back(i);
  return rows;
}

/// Reconstruction loss over the selected rows and its gradient w.r.t. the full
/// decoder output.
double reconstruction(const ModuleInstance& inst, const Matrix& output, Matrix* d_output, double coef) {
  const Matrix& target = inst.recon_target;
  if (target.rows() != output.rows() || target.cols() != output.cols()) {
    throw ShapeError("reconstruction target " + target.shape_string() + " vs decoder output " +
                     output.shape_string());
  }
  const auto rows = valid_rows(target.rows(), inst.recon_valid);
  const std::size_t d = target.cols();
  Matrix xt = gather_rows(target, rows);
  Matrix xo = gather_rows(output, rows);
  std::vector<double> w(rows.size() * d, 1.0);
  if (!inst.recon_weights.empty()) {
    if (inst.recon_weights.size() != target.size()) throw ShapeError("reconstruction weights length mismatch");
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) w[r * d + c] = inst.recon_weights[rows[r] * d + c];
  }
  const double loss = weighted_mse(xt, xo, w);
  if (d_output && coef != 0.0) {
    Matrix g = weighted_mse_grad(xt, xo, w);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) (*d_output)(rows[r], c) += coef * g(r, c);
  }
  return loss;
}

ModuleEvaluation evaluate_exposure(const ModuleParams& params, const ModuleInstance& inst,
                                   const ModuleNoise& noise, const ObjectiveSettings& s,
                                   ModuleParams* grads) {
  const SparseAdjacency& a = *inst.a_hat;
  NetworkCache enc_cache, dec_cache;
  ModuleEvaluation ev;
  ev.encoder_output = network_forward(params.encoder, a, inst.encoder_input, &enc_cache);
  const ExposureHeads heads = exposure_heads_from_output(ev.encoder_output);
  const ExposureSample sample = sample_exposure(heads, s.temperature, noise.eps, noise.gumbel);
  ev.decoder_input = sample.features();
  ev.decoder_output = network_forward(params.decoder, a, ev.decoder_input, &dec_cache);

  Matrix d_dec_out(ev.decoder_output.rows(), ev.decoder_output.cols());
  ev.terms.reconstruction = reconstruction(inst, ev.decoder_output, grads ? &d_dec_out : nullptr,
                                           s.reconstruction);
  ev.terms.kl_height = kl_lognormal(heads.height, inst.prior, inst.kl_valid).mean;
  ev.terms.kl_presence = kl_bernoulli(heads.presence, inst.prior, inst.kl_valid).mean;
  const LossPart parts[] = {{ev.terms.reconstruction, s.reconstruction},
                            {ev.terms.kl_height, s.kl_height},
                            {ev.terms.kl_presence, s.kl_presence}};
  ev.terms.total = total_loss(parts);
  if (!grads) return ev;

  const Matrix d_dec_in = network_backward(params.decoder, a, dec_cache, d_dec_out, grads->decoder);
  const std::size_t n = heads.size();
  std::vector<double> d_log_h(n);
  Matrix d_presence(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    d_log_h[i] = d_dec_in(i, 0);
    d_presence(i, 0) = d_dec_in(i, 1);
  }
  const LognormalGrad g_sample = reparam_lognormal_backward(heads.height, sample.height, d_log_h);
  const Matrix d_logits = gumbel_softmax_backward(sample.presence, s.temperature, d_presence);
  const LognormalGrad g_kl = kl_lognormal_grad(heads.height, inst.prior, inst.kl_valid);
  const auto g_bp = kl_bernoulli_grad(heads.presence, inst.prior, inst.kl_valid);

  Matrix d_enc_out(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    d_enc_out(i, 0) = g_sample.mu[i] + s.kl_height * g_kl.mu[i];
    d_enc_out(i, 1) = (g_sample.log_var[i] + s.kl_height * g_kl.log_var[i]) *
                      clamp_log_var_slope(ev.encoder_output(i, 1));
    d_enc_out(i, 2) = d_logits(i, 0) + s.kl_presence * g_bp[i];
  }
  network_backward(params.encoder, a, enc_cache, d_enc_out, grads->encoder);
  return ev;
}

ModuleEvaluation evaluate_vulnerability(const ModuleParams& params, const ModuleInstance& inst,
                                        const ModuleNoise& noise, const ObjectiveSettings& s,
                                        ModuleParams* grads) {
  const SparseAdjacency& a = *inst.a_hat;
  NetworkCache enc_cache, dec_cache;
  ModuleEvaluation ev;
  ev.encoder_output = network_forward(params.encoder, a, inst.encoder_input, &enc_cache);
  const CategoricalHead head = categorical_from(ev.encoder_output, inst.class_mask);
  const CategoricalHead pruned = prune_logits(head, s.pruning_logit);
  const GumbelSoftmaxSample v = gumbel_softmax(pruned, s.temperature, noise.gumbel);
  ev.decoder_input = v.value;
  ev.decoder_output = network_forward(params.decoder, a, ev.decoder_input, &dec_cache);

  Matrix d_dec_out(ev.decoder_output.rows(), ev.decoder_output.cols());
  ev.terms.reconstruction = reconstruction(inst, ev.decoder_output, grads ? &d_dec_out : nullptr,
                                           s.reconstruction);
  const NodeLoss kl = kl_multinomial(pruned, inst.prior, inst.kl_valid);
  ev.terms.kl_vulnerability = kl.mean;
  ev.terms.support_warnings = kl.warnings;
  ev.terms.cross_entropy = cross_entropy_v(pruned, inst.prior, inst.kl_valid).mean;
  const LossPart parts[] = {{ev.terms.reconstruction, s.reconstruction},
                            {ev.terms.kl_vulnerability, s.kl_vulnerability},
                            {ev.terms.cross_entropy, s.cross_entropy}};
  ev.terms.total = total_loss(parts);
  if (!grads) return ev;

  const Matrix d_v = network_backward(params.decoder, a, dec_cache, d_dec_out, grads->decoder);
  Matrix d_logits = gumbel_softmax_backward(v, s.temperature, d_v);
  if (s.kl_vulnerability != 0.0) d_logits += kl_multinomial_grad(pruned, inst.prior, inst.kl_valid) * s.kl_vulnerability;
  if (s.cross_entropy != 0.0) d_logits += cross_entropy_v_grad(pruned, inst.prior, inst.kl_valid) * s.cross_entropy;
  prune_backward(head, d_logits);
  network_backward(params.encoder, a, enc_cache, d_logits, grads->encoder);
  return ev;
}

}  // namespace

ModuleNoise draw_noise(ModuleKind kind, std::size_t nodes, std::size_t classes, Rng& rng) {
  ModuleNoise noise;
  if (is_exposure(kind)) {
    noise.eps = sample_gaussian(rng, nodes);
    noise.gumbel = Matrix(nodes, 2, sample_gumbel(rng, nodes * 2));
  } else {
    noise.gumbel = Matrix(nodes, classes, sample_gumbel(rng, nodes * classes));
  }
  return noise;
}

ModuleEvaluation evaluate_module(const ModuleParams& params, const ModuleInstance& instance,
                                 const ModuleNoise& noise, const ObjectiveSettings& settings,
                                 ModuleParams* grads) {
  if (!instance.a_hat) throw ConfigError("evaluate_module: instance has no adjacency");
  if (grads && grads->kind != params.kind) throw ConfigError("evaluate_module: gradient buffer kind mismatch");
  return is_exposure(params.kind) ? evaluate_exposure(params, instance, noise, settings, grads)
                                  : evaluate_vulnerability(params, instance, noise, settings, grads);
}

ExposureHeads forward_oe(const ModuleParams& p, const Matrix& x, const ExposureGraph& g) {
  require_kind(p, ModuleKind::oe, "forward_oe");
  require_finite(x, "forward_oe");
  return exposure_heads_from_output(network_forward(p.encoder, g.normalized(), x));
}

Matrix decode_oe(const ModuleParams& p, const ExposureSample& s, const ExposureGraph& g) {
  require_kind(p, ModuleKind::oe, "decode_oe");
  return network_forward(p.decoder, g.normalized(), s.features());
}

ExposureHeads forward_te(const ModuleParams& p, const ExposureSample& samples_t,
                         const Matrix& xhat_prev, const ExposureGraph& g) {
  require_kind(p, ModuleKind::te, "forward_te");
  const Matrix f = samples_t.features();
  const Matrix in = hconcat({&f, &xhat_prev});
  require_finite(in, "forward_te");
  return exposure_heads_from_output(network_forward(p.encoder, g.normalized(), in));
}

Matrix decode_te(const ModuleParams& p, const ExposureSample& samples_t1, const ExposureGraph& g) {
  require_kind(p, ModuleKind::te, "decode_te");
  return network_forward(p.decoder, g.normalized(), samples_t1.features());
}

std::optional<CategoricalHead> forward_ov(const ModuleParams& p, const TaggedMatrix& height_log_samples,
                                          const TaggedMatrix& xhat_te, const VulnerabilityGraph& g,
                                          std::span<const std::uint8_t> class_mask) {
  require_kind(p, ModuleKind::ov, "forward_ov");
  const Matrix in = ov_encoder_input(height_log_samples, xhat_te);
  if (g.empty()) return std::nullopt;
  return categorical_from(network_forward(p.encoder, g.normalized, in), class_mask);
}

Matrix decode_ov(const ModuleParams& p, const Matrix& v_samples, const VulnerabilityGraph& g) {
  require_kind(p, ModuleKind::ov, "decode_ov");
  return network_forward(p.decoder, g.normalized, v_samples);
}

std::optional<CategoricalHead> forward_tv(const ModuleParams& p, const TaggedMatrix& v_samples_t,
                                          const TaggedMatrix& xhat_ov, const VulnerabilityGraph& g,
                                          std::span<const std::uint8_t> class_mask) {
  require_kind(p, ModuleKind::tv, "forward_tv");
  const Matrix in = tv_encoder_input(v_samples_t, xhat_ov);
  if (g.empty()) return std::nullopt;
  return categorical_from(network_forward(p.encoder, g.normalized, in), class_mask);
}

Matrix decode_tv(const ModuleParams& p, const Matrix& v_samples_t1, const VulnerabilityGraph& g) {
  require_kind(p, ModuleKind::tv, "decode_tv");
  return network_forward(p.decoder, g.normalized, v_samples_t1);
}

Matrix ov_encoder_input(const TaggedMatrix& height_log_samples, const TaggedMatrix& xhat_te) {
  require_source(height_log_samples, {Source::te_sample}, "OV height input");
  require_source(xhat_te, {Source::te_reconstruction}, "OV covariate input");
  Matrix in = hconcat({&height_log_samples.values, &xhat_te.values});
  require_finite(in, "ov_encoder_input");
  return in;
}

Matrix tv_encoder_input(const TaggedMatrix& v_samples_t, const TaggedMatrix& xhat_ov) {
  require_source(v_samples_t, {Source::ov_sample, Source::tv_sample}, "TV class input");
  require_source(xhat_ov, {Source::ov_reconstruction}, "TV covariate input");
  Matrix in = hconcat({&v_samples_t.values, &xhat_ov.values});
  require_finite(in, "tv_encoder_input");
  return in;
}

}  // namespace gvssm
