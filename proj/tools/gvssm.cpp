#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gvssm/errors.hpp"
#include "gvssm/keyvalue.hpp"
#include "gvssm/pipeline.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPrerequisite = 3;

gvssm::PipelineConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  gvssm::PipelineConfig cfg;
  if (!config_path.empty()) cfg.apply(gvssm::KeyValues::load(config_path));
  gvssm::KeyValues kv;
  for (const auto& a : overrides) kv.set_assignment(a);
  cfg.apply(kv);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph variational state-space model for building exposure and vulnerability"};
  app.require_subcommand(1, 1);

  std::string out = "run";
  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override one configuration key (key=value), repeatable");

  auto* gen = app.add_subcommand("gen-synthetic", "Generate the synthetic scenario and its coarse prior");
  auto* graphs = app.add_subcommand("build-graphs", "Tile the grid and write 8-connectivity graphs");
  auto* split = app.add_subcommand("split", "Assign tiles to train/validation/test with balanced class shares");
  auto* train = app.add_subcommand("train", "Train one module");
  std::string module_name;
  train->add_option("--module", module_name, "oe, te, ov or tv")
      ->required()
      ->check(CLI::IsMember({"oe", "te", "ov", "tv"}));
  auto* infer = app.add_subcommand("infer", "Export posterior maps");
  auto* forecast = app.add_subcommand("forecast", "Roll TE and TV forward from the last timestep");
  std::size_t horizon = 0;
  forecast->add_option("--horizon", horizon, "Forecast steps (defaults to the configured horizon)");
  auto* eval = app.add_subcommand("eval-aitchison", "Aitchison distance of posterior to prior compositions");
  int baseline = -1;
  eval->add_option("--baseline", baseline, "Baseline timestep for ratios (defaults to the configured one)");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every module gradient");
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order");
  auto* keys = app.add_subcommand("keys", "List configuration keys with their defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*keys) {
      std::cout << gvssm::PipelineConfig{}.to_key_values().serialize();
      return 0;
    }
    const gvssm::PipelineConfig cfg = resolve_config(config_path, overrides);
    const std::filesystem::path dir(out);
    gvssm::save_effective_config(cfg, dir);
    if (*gen) {
      gvssm::stage_generate(cfg, dir);
    } else if (*graphs) {
      const auto tiles = gvssm::stage_build_graphs(cfg, dir);
      std::cout << "tiles " << tiles.size() << "\n";
    } else if (*split) {
      const auto a = gvssm::stage_split(cfg, dir);
      std::cout << a.report();
      if (!a.within_tolerance()) std::cerr << "warning: class shares deviate beyond the tolerance\n";
    } else if (*train) {
      const auto r = gvssm::stage_train(cfg, dir, gvssm::module_from_string(module_name));
      std::cout << "module " << module_name << " final_train_loss " << gvssm::format_double(r.history.train.back())
                << " final_validation_loss " << gvssm::format_double(r.history.validation.back()) << "\n";
    } else if (*infer) {
      gvssm::stage_infer(cfg, dir);
    } else if (*forecast) {
      const auto s = gvssm::stage_forecast(cfg, dir, horizon ? horizon : cfg.horizon);
      std::cout << "horizon " << s.horizon << " max_simplex_error " << gvssm::format_double(s.max_simplex_error)
                << " min_variance " << gvssm::format_double(s.min_variance) << "\n";
    } else if (*eval) {
      const auto s = gvssm::stage_eval_aitchison(cfg, dir, baseline >= 0 ? baseline : cfg.baseline);
      for (const auto& [t, v] : s.series) {
        std::cout << "t " << t << " mean_dA " << gvssm::format_double(v) << " ratio "
                  << gvssm::format_double(s.ratios.at(t)) << "\n";
      }
      if (s.truth) {
        std::cout << "truth posterior " << gvssm::format_double(s.truth->posterior_vs_truth) << " prior "
                  << gvssm::format_double(s.truth->prior_vs_truth) << " pixels " << s.truth->pixels << "\n";
      }
    } else if (*gradcheck) {
      const auto s = gvssm::stage_gradcheck(cfg, dir);
      std::cout << "checks " << s.checks << " max_relative_error " << gvssm::format_double(s.max_relative_error)
                << "\n";
    } else if (*pipeline) {
      gvssm::run_pipeline(cfg, dir);
    }
  } catch (const gvssm::PrerequisiteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPrerequisite;
  } catch (const gvssm::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
