#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "gvssm/checkpoint.hpp"
#include "gvssm/errors.hpp"
#include "gvssm/pipeline.hpp"

using namespace gvssm;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_config() {
  KeyValues kv = KeyValues::parse(
      "grid = 16\n"
      "tile_side = 8\n"
      "timesteps = 4\n"
      "shock_timestep = 1\n"
      "shock_row0 = 2\n"
      "shock_col0 = 2\n"
      "shock_rows = 6\n"
      "shock_cols = 6\n"
      "block_size = 4\n"
      "field_wavelength = 8\n"
      "epochs = 3\n"
      "batch_tiles = 2\n"
      "hidden = 6,5\n"
      "horizon = 3\n"
      "split_train = 0.5\n"
      "split_validation = 0.25\n"
      "split_test = 0.25\n"
      "split_tolerance = 1\n"
      "gradcheck_instances = 1\n");
  return PipelineConfig::from_key_values(kv);
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("gvssm_pipe_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TinyPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    out_ = new fs::path(fresh_dir("full"));
    run_pipeline(tiny_config(), *out_);
  }
  static void TearDownTestSuite() { delete out_; }
  static fs::path* out_;
};

fs::path* TinyPipeline::out_ = nullptr;

}  // namespace

TEST(Config, KeysRoundTrip) {
  const PipelineConfig a = tiny_config();
  const KeyValues kv = a.to_key_values();
  for (const std::string& k : PipelineConfig::keys()) EXPECT_TRUE(kv.has(k)) << k;
  EXPECT_EQ(kv.entries().size(), PipelineConfig::keys().size());
  EXPECT_EQ(PipelineConfig::from_key_values(kv).to_key_values().serialize(), kv.serialize());
}

TEST(Config, UnknownKeyAndBadValueRejected) {
  EXPECT_THROW(PipelineConfig::from_key_values(KeyValues::parse("no_such_key = 1\n")), ConfigError);
  EXPECT_THROW(PipelineConfig::from_key_values(KeyValues::parse("epochs = many\n")), ConfigError);
  EXPECT_THROW(PipelineConfig::from_key_values(KeyValues::parse("temperature = 0\n")).validate(), ConfigError);
}

TEST(Stages, TrainingOutOfOrderIsPrerequisiteError) {
  const PipelineConfig cfg = tiny_config();
  const fs::path out = fresh_dir("order");
  stage_generate(cfg, out);
  stage_build_graphs(cfg, out);
  stage_split(cfg, out);
  EXPECT_THROW(stage_train(cfg, out, ModuleKind::te), PrerequisiteError);
  EXPECT_THROW(stage_train(cfg, out, ModuleKind::tv), PrerequisiteError);
  EXPECT_THROW(stage_infer(cfg, out), PrerequisiteError);
}

TEST(Stages, MissingInputsAreReported) {
  const fs::path out = fresh_dir("empty");
  EXPECT_THROW(stage_build_graphs(tiny_config(), out), Error);
}

TEST_F(TinyPipeline, ProducesManifestedArtifacts) {
  const Manifest m = Manifest::load(*out_);
  EXPECT_FALSE(m.values().entries().empty());
  for (ModuleKind k : {ModuleKind::oe, ModuleKind::te, ModuleKind::ov, ModuleKind::tv}) {
    EXPECT_TRUE(fs::exists(*out_ / paths::checkpoint(k))) << to_string(k);
    EXPECT_TRUE(fs::exists(*out_ / paths::loss_history(k))) << to_string(k);
    EXPECT_NO_THROW(read_checkpoint(*out_ / paths::checkpoint(k), k));
  }
  EXPECT_TRUE(fs::exists(*out_ / paths::kTeRecon));
  EXPECT_TRUE(fs::exists(*out_ / "forecast_exposure.csv"));
  EXPECT_TRUE(fs::exists(*out_ / "forecast_vulnerability.csv"));
  EXPECT_TRUE(fs::exists(*out_ / "eval" / "aitchison_series.csv"));
  EXPECT_TRUE(fs::exists(*out_ / "eval" / "truth_comparison.csv"));
}

TEST_F(TinyPipeline, LossHistoryHasOneRowPerEpoch) {
  std::istringstream in(slurp(*out_ / paths::loss_history(ModuleKind::oe)));
  std::string line;
  int rows = 0;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,train_loss,validation_loss");
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST_F(TinyPipeline, ZeroLearningRateKeepsInitialParameters) {
  const PipelineConfig cfg = tiny_config();
  const Dataset data = load_dataset(cfg, *out_);
  TrainConfig tc = cfg.train;
  tc.adam.learning_rate = 0.0;
  const TrainResult r = train_module(ModuleKind::oe, data, TrainedModules{}, tc);
  Rng init = Rng(tc.seed, 0x67767373 + static_cast<std::uint64_t>(ModuleKind::oe)).split(0);
  const ModuleParams fresh = ModuleParams::init(ModuleKind::oe, data.shape, init);
  EXPECT_EQ(serialize_checkpoint(r.params), serialize_checkpoint(fresh));
}

TEST_F(TinyPipeline, TrainingIsDeterministic) {
  const PipelineConfig cfg = tiny_config();
  const Dataset data = load_dataset(cfg, *out_);
  const TrainedModules up = load_trained(data, *out_);
  const TrainResult a = train_module(ModuleKind::ov, data, up, cfg.train);
  const TrainResult b = train_module(ModuleKind::ov, data, up, cfg.train);
  EXPECT_EQ(serialize_checkpoint(a.params), serialize_checkpoint(b.params));
  EXPECT_EQ(a.history.train, b.history.train);
  EXPECT_EQ(serialize_checkpoint(a.params), slurp(*out_ / paths::checkpoint(ModuleKind::ov)));
}

TEST_F(TinyPipeline, ForecastHorizons) {
  const PipelineConfig cfg = tiny_config();
  const ForecastSummary zero = stage_forecast(cfg, *out_, 0);
  EXPECT_EQ(zero.exposure_steps, 0u);
  EXPECT_EQ(zero.vulnerability_steps, 0u);
  const ForecastSummary one = stage_forecast(cfg, *out_, 1);
  EXPECT_EQ(one.exposure_steps, 1u);
  const ForecastSummary ten = stage_forecast(cfg, *out_, 10);
  EXPECT_EQ(ten.exposure_steps, 10u);
  EXPECT_TRUE(ten.all_finite);
  EXPECT_LE(ten.max_simplex_error, 1e-9);
  EXPECT_GT(ten.min_variance, 0.0);
  EXPECT_GE(ten.min_presence, 0.0);
  EXPECT_LE(ten.max_presence, 1.0);
}

TEST_F(TinyPipeline, EvaluationRatiosAnchoredAtBaseline) {
  const AitchisonSummary s = stage_eval_aitchison(tiny_config(), *out_, 1);
  ASSERT_TRUE(s.ratios.count(1));
  EXPECT_EQ(s.ratios.at(1), 1.0);
  for (const auto& [t, d] : s.series) EXPECT_GE(d, 0.0) << t;
  ASSERT_TRUE(s.truth.has_value());
  EXPECT_GT(s.truth->pixels, 0u);
}

TEST_F(TinyPipeline, GradcheckWithinTolerance) {
  const GradcheckSummary g = stage_gradcheck(tiny_config(), *out_);
  EXPECT_GT(g.checks, 0u);
  EXPECT_LT(g.max_relative_error, 1e-4);
}

TEST(Cli, ExitCodes) {
  const fs::path out = fresh_dir("cli");
  const std::string bin = GVSSM_CLI_PATH;
  auto run = [&](const std::string& args) {
    const int status = std::system((bin + " --out " + out.string() + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  EXPECT_EQ(run("--set grid=16 --set tile_side=8 --set timesteps=4 --set shock_timestep=1 "
                "--set shock_row0=2 --set shock_col0=2 --set shock_rows=6 --set shock_cols=6 gen-synthetic"),
            0);
  EXPECT_EQ(run("train --module te"), 3);
  EXPECT_EQ(run("train --module xx"), 2);
  EXPECT_EQ(run("--set bogus=1 gen-synthetic"), 2);
  EXPECT_EQ(run("keys"), 0);
}
