#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gvssm/distributions.hpp"
#include "gvssm/graph.hpp"
#include "gvssm/losses.hpp"
#include "gvssm/network.hpp"

namespace gvssm {

enum class ModuleKind : std::uint8_t { oe = 0, te = 1, ov = 2, tv = 3 };

std::string to_string(ModuleKind kind);
ModuleKind module_from_string(const std::string& name);
/// Module that must be trained before `kind`, if any (OE -> TE -> OV -> TV).
std::optional<ModuleKind> prerequisite(ModuleKind kind);
bool is_exposure(ModuleKind kind);

struct ModelShape {
  std::size_t bands = 4;
  std::size_t classes = 4;
  std::vector<std::size_t> hidden{32, 32};
};

struct NetworkDims {
  std::size_t encoder_in;
  std::size_t encoder_out;
  std::size_t decoder_in;
  std::size_t decoder_out;
};

/// Input/output widths per module:
///   OE  X(B)                      -> (mu, log_var, logit) ; (ln h, b) -> X(B)
///   TE  (ln h, b, Xrec)(2+B)      -> (mu, log_var, logit) ; (ln h, b) -> (ln h, b, X)(2+B)
///   OV  (ln h, Xrec_TE)(1+B)      -> K logits             ; V(K) -> Xrec_TE(B)
///   TV  (V, Xrec_OV)(K+B)         -> K logits             ; V(K) -> (V, Xrec_OV)(K+B)
NetworkDims network_dims(ModuleKind kind, const ModelShape& shape);

/// Encoder/decoder pair of one module.
struct ModuleParams {
  ModuleKind kind = ModuleKind::oe;
  Network encoder;
  Network decoder;

  static ModuleParams init(ModuleKind kind, const ModelShape& shape, Rng& rng);
  static ModuleParams zeros_like(const ModuleParams& like);

  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::vector<std::string> parameter_names() const;
  bool all_finite() const;
};

/// Where a block of node features came from. OV and TV check these so that
/// raw covariates never enter the vulnerability modules.
enum class Source : std::uint8_t {
  raw_covariates,
  oe_sample,
  te_sample,
  te_reconstruction,
  ov_sample,
  ov_reconstruction,
  tv_sample,
};
std::string to_string(Source s);

struct TaggedMatrix {
  Matrix values;
  Source source = Source::raw_covariates;
};

struct ExposureHeads {
  LognormalHead height;
  BernoulliHead presence;

  std::size_t size() const noexcept { return height.size(); }
};

/// A reparameterized draw of height and presence from exposure heads.
struct ExposureSample {
  LognormalSample height;
  GumbelSoftmaxSample presence;  // nodes x 2; column 0 is "present"

  /// (ln h, b) as decoder/encoder input columns.
  Matrix features() const;
};

struct ObjectiveSettings {
  TemperatureConfig temperature;
  double pruning_logit = kDefaultPruningLogit;
  double reconstruction = 1.0;
  double kl_height = 1.0;
  double kl_presence = 1.0;
  double kl_vulnerability = 1.0;
  double cross_entropy = 1.0;
};

/// Splits an exposure encoder output (nodes x 3) into heads, clamping log-variance.
ExposureHeads exposure_heads_from_output(const Matrix& out);
ExposureSample sample_exposure(const ExposureHeads& heads, const TemperatureConfig& temp, Rng& rng);
ExposureSample sample_exposure(const ExposureHeads& heads, const TemperatureConfig& temp,
                               std::span<const double> eps, const Matrix& gumbel);
/// Noise-free path: ln h = mu, b = sigmoid(logit / tau).
ExposureSample mean_exposure(const ExposureHeads& heads, const TemperatureConfig& temp);
/// Noise-free Gumbel-Softmax path: softmax(pruned logits / tau).
GumbelSoftmaxSample mean_vulnerability(const CategoricalHead& pruned, const TemperatureConfig& temp);

// Named module operations (inference). Graph features are not read by these;
// callers supply the module inputs explicitly.
ExposureHeads forward_oe(const ModuleParams& p, const Matrix& x, const ExposureGraph& g);
Matrix decode_oe(const ModuleParams& p, const ExposureSample& s, const ExposureGraph& g);
ExposureHeads forward_te(const ModuleParams& p, const ExposureSample& samples_t,
                         const Matrix& xhat_prev, const ExposureGraph& g);
Matrix decode_te(const ModuleParams& p, const ExposureSample& samples_t1, const ExposureGraph& g);
/// Returns nullopt for an empty vulnerability graph. Throws ConfigError if the
/// inputs are not TE-derived. The head carries `class_mask` unapplied;
/// prune_logits applies it.
std::optional<CategoricalHead> forward_ov(const ModuleParams& p, const TaggedMatrix& height_log_samples,
                                          const TaggedMatrix& xhat_te, const VulnerabilityGraph& g,
                                          std::span<const std::uint8_t> class_mask = {});
Matrix decode_ov(const ModuleParams& p, const Matrix& v_samples, const VulnerabilityGraph& g);
std::optional<CategoricalHead> forward_tv(const ModuleParams& p, const TaggedMatrix& v_samples_t,
                                          const TaggedMatrix& xhat_ov, const VulnerabilityGraph& g,
                                          std::span<const std::uint8_t> class_mask = {});
Matrix decode_tv(const ModuleParams& p, const Matrix& v_samples_t1, const VulnerabilityGraph& g);

/// Encoder inputs of the vulnerability modules. Both throw ConfigError when a
/// block does not carry an allowed provenance tag.
Matrix ov_encoder_input(const TaggedMatrix& height_log_samples, const TaggedMatrix& xhat_te);
Matrix tv_encoder_input(const TaggedMatrix& v_samples_t, const TaggedMatrix& xhat_ov);

/// One graph instance of a module's training objective.
struct ModuleInstance {
  const SparseAdjacency* a_hat = nullptr;
  Matrix encoder_input;
  Matrix recon_target;
  std::vector<double> recon_weights;     // one per target entry; empty means ones
  std::vector<std::uint8_t> recon_valid;  // rows entering the reconstruction loss; empty = all
  PriorBeliefs prior;
  std::vector<std::uint8_t> kl_valid;     // nodes entering KL / CE terms; empty = all
  std::vector<std::uint8_t> class_mask;   // vulnerability modules only

  std::size_t nodes() const noexcept { return encoder_input.rows(); }
};

struct ModuleNoise {
  std::vector<double> eps;  // exposure modules
  Matrix gumbel;            // nodes x 2 (exposure) or nodes x K (vulnerability)
};

ModuleNoise draw_noise(ModuleKind kind, std::size_t nodes, std::size_t classes, Rng& rng);

struct LossTerms {
  double reconstruction = 0.0;
  double kl_height = 0.0;
  double kl_presence = 0.0;
  double kl_vulnerability = 0.0;
  double cross_entropy = 0.0;
  double total = 0.0;
  int support_warnings = 0;
};

struct ModuleEvaluation {
  LossTerms terms;
  Matrix encoder_output;
  Matrix decoder_input;
  Matrix decoder_output;
};

/// Forward pass of encoder, reparameterized sampling with the given noise,
/// decoder and all loss terms. When `grads` is non-null, gradients of
/// terms.total are accumulated into it.
ModuleEvaluation evaluate_module(const ModuleParams& params, const ModuleInstance& instance,
                                 const ModuleNoise& noise, const ObjectiveSettings& settings,
                                 ModuleParams* grads = nullptr);

}  // namespace gvssm
