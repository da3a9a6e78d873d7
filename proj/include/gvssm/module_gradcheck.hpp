#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gvssm/gradcheck.hpp"
#include "gvssm/modules.hpp"

namespace gvssm {

/// A random module objective on a small square tile, with owned adjacency.
struct RandomModuleCase {
  std::shared_ptr<SparseAdjacency> a_hat;
  ModuleParams params;
  ModuleInstance instance;
  ModuleNoise noise;
};

RandomModuleCase random_module_case(ModuleKind kind, const ModelShape& shape, std::size_t side, Rng& rng);

struct GradCheckOptions {
  std::size_t side = 3;
  std::size_t classes = 3;
  std::size_t bands = 4;
  std::vector<std::size_t> hidden{32, 32};
  std::size_t instances = 10;
  double step = 1e-5;
  std::uint64_t seed = 1;
};

struct TermGradCheck {
  ModuleKind kind;
  std::string term;
  std::size_t instance = 0;
  GradCheckReport report;  // parameter is e.g. "ov.decoder.gcn1.weight"
};

/// Names of the loss terms that apply to a module kind.
std::vector<std::string> loss_terms(ModuleKind kind);
/// Objective settings with `term` at coefficient 1 and every other term at 0.
ObjectiveSettings isolate_term(const std::string& term);

/// Analytic vs central-difference gradients for every (module, term, instance,
/// parameter matrix).
std::vector<TermGradCheck> check_module_gradients(const GradCheckOptions& opts);

}  // namespace gvssm
