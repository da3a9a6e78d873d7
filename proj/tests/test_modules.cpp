#include <gtest/gtest.h>

#include <cmath>

#include "gvssm/errors.hpp"
#include "gvssm/graph.hpp"
#include "gvssm/module_gradcheck.hpp"
#include "gvssm/modules.hpp"
#include "gvssm/network.hpp"

using namespace gvssm;

namespace {

ExposureGraph grid_graph(std::size_t side, std::size_t bands) {
  ExposureGraph g;
  g.tile.side = side;
  g.topology = GridTopology::build(side);
  g.features = Matrix(side * side, bands);
  g.valid.assign(side * side, 1);
  return g;
}

VulnerabilityGraph full_vulnerability_graph(const ExposureGraph& g) {
  return prune_to_vulnerability_graph(g, std::vector<double>(g.nodes(), 1.0));
}

void zero(Network& n) {
  for (Matrix* m : n.parameters()) m->fill(0.0);
}

}  // namespace

TEST(GcnForward, IdentityLayerOnIsolatedNode) {
  const SparseAdjacency a = normalize_adjacency(SparseAdjacency::from_edges(1, {}));
  GcnLayer l{Matrix::identity(3), Matrix(1, 3), Activation::identity};
  const Matrix x{{0.5, -2.0, 3.0}};
  const GcnLayer layers[] = {l};
  EXPECT_EQ(gcn_forward(layers, a, x), x);
}

TEST(GcnForward, TwoNodePathByHand) {
  const std::pair<std::size_t, std::size_t> e[] = {{0, 1}};
  const SparseAdjacency a = normalize_adjacency(SparseAdjacency::from_edges(2, e));
  // A_hat X = [[2, 3], [2, 3]] for X = [[1, 2], [3, 4]].
  GcnLayer l{Matrix{{1.0, 0.0}, {1.0, -1.0}}, Matrix{{0.5, 0.0}}, Activation::identity};
  const GcnLayer layers[] = {l};
  const Matrix out = gcn_forward(layers, a, Matrix{{1.0, 2.0}, {3.0, 4.0}});
  const Matrix want{{5.5, -3.0}, {5.5, -3.0}};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out(i, j), want(i, j), 1e-14);
}

TEST(GcnForward, ReluClipsNegatives) {
  const SparseAdjacency a = normalize_adjacency(build_grid_adjacency(2));
  GcnLayer l{Matrix{{-1.0, -2.0}}, Matrix{{-0.1, -0.1}}, Activation::relu};
  const GcnLayer layers[] = {l};
  const Matrix out = gcn_forward(layers, a, Matrix(4, 1, 1.0));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Network, BackwardMatchesFiniteDifference) {
  Rng rng(8);
  const SparseAdjacency a = normalize_adjacency(build_grid_adjacency(3));
  const std::size_t hidden[] = {5, 4};
  Network net = Network::init(rng, 3, hidden, 2);
  Matrix x(9, 3), w(9, 2);
  for (double& v : x.data()) v = rng.next_gaussian();
  for (double& v : w.data()) v = rng.next_gaussian();
  auto loss = [&](const Network& n) {
    const Matrix y = network_forward(n, a, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w.data()[i] * y.data()[i];
    return s;
  };
  NetworkCache cache;
  network_forward(net, a, x, &cache);
  Network grads = Network::zeros_like(net);
  network_backward(net, a, cache, w, grads);
  const std::vector<double> flat = net.flatten(), g = grads.flatten();
  const auto fd = finite_difference_gradient(
      [&](std::span<const double> p) {
        Network n = net;
        n.unflatten(p);
        return loss(n);
      },
      flat, 1e-6);
  EXPECT_LT(relative_error(g, fd), 1e-7);
}

TEST(Network, ParameterOrderAndCount) {
  Rng rng(1);
  const std::size_t hidden[] = {32, 32};
  const Network n = Network::init(rng, 4, hidden, 3);
  EXPECT_EQ(n.parameter_count(), 4u * 32 + 32 + 32 * 32 + 32 + 32 * 3 + 3);
  const auto names = n.parameter_names("oe.encoder");
  ASSERT_EQ(names.size(), 6u);
  EXPECT_EQ(names.front(), "oe.encoder.gcn0.weight");
  EXPECT_EQ(names.back(), "oe.encoder.head.bias");
}

TEST(Adam, ZeroLearningRateIsNoOp) {
  Rng rng(1);
  const std::size_t hidden[] = {4};
  Network n = Network::init(rng, 2, hidden, 1);
  const Network before = n;
  Network g = Network::zeros_like(n);
  for (Matrix* m : g.parameters()) m->fill(1.0);
  Adam opt(AdamConfig{0.0}, std::as_const(n).parameters());
  opt.step(n.parameters(), std::as_const(g).parameters());
  EXPECT_EQ(n.flatten(), before.flatten());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Matrix p(1, 2, 0.0), g{{3.0, -0.5}};
  Adam opt(AdamConfig{0.01}, {&p});
  opt.step({&p}, {&g});
  EXPECT_NEAR(p(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(p(0, 1), 0.01, 1e-9);
}

TEST(ModuleDims, EncoderDecoderWidths) {
  const ModelShape s{4, 3, {32, 32}};
  const NetworkDims oe = network_dims(ModuleKind::oe, s);
  EXPECT_EQ(oe.encoder_in, 4u);
  EXPECT_EQ(oe.encoder_out, 3u);
  EXPECT_EQ(oe.decoder_in, 2u);
  EXPECT_EQ(oe.decoder_out, 4u);
  const NetworkDims te = network_dims(ModuleKind::te, s);
  EXPECT_EQ(te.encoder_in, 6u);
  EXPECT_EQ(te.decoder_out, 6u);
  const NetworkDims ov = network_dims(ModuleKind::ov, s);
  EXPECT_EQ(ov.encoder_in, 5u);
  EXPECT_EQ(ov.encoder_out, 3u);
  EXPECT_EQ(ov.decoder_out, 4u);
  const NetworkDims tv = network_dims(ModuleKind::tv, s);
  EXPECT_EQ(tv.encoder_in, 7u);
  EXPECT_EQ(tv.decoder_out, 7u);
}

TEST(ModuleOrder, Prerequisites) {
  EXPECT_FALSE(prerequisite(ModuleKind::oe));
  EXPECT_EQ(*prerequisite(ModuleKind::te), ModuleKind::oe);
  EXPECT_EQ(*prerequisite(ModuleKind::ov), ModuleKind::te);
  EXPECT_EQ(*prerequisite(ModuleKind::tv), ModuleKind::ov);
  for (ModuleKind k : {ModuleKind::oe, ModuleKind::te, ModuleKind::ov, ModuleKind::tv}) {
    EXPECT_EQ(module_from_string(to_string(k)), k);
  }
  EXPECT_THROW(module_from_string("xv"), ConfigError);
}

TEST(ForwardOe, ZeroParametersGiveZeroHeads) {
  Rng rng(2);
  const ModelShape shape{4, 3, {32, 32}};
  ModuleParams p = ModuleParams::init(ModuleKind::oe, shape, rng);
  zero(p.encoder);
  const ExposureGraph g = grid_graph(3, 4);
  Matrix x(9, 4, 0.7);
  const ExposureHeads h = forward_oe(p, x, g);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(h.height.mu[i], 0.0);
    EXPECT_EQ(h.height.log_var[i], 0.0);
    EXPECT_EQ(h.presence.logit[i], 0.0);
  }
}

TEST(ExposureModules, OutputShapes) {
  Rng rng(3);
  const ModelShape shape{4, 3, {32, 32}};
  const ModuleParams oe = ModuleParams::init(ModuleKind::oe, shape, rng);
  const ModuleParams te = ModuleParams::init(ModuleKind::te, shape, rng);
  const ExposureGraph g = grid_graph(5, 4);
  Matrix x(25, 4);
  for (double& v : x.data()) v = rng.next_gaussian();
  const ExposureHeads h = forward_oe(oe, x, g);
  EXPECT_EQ(h.size(), 25u);
  const ExposureSample s = sample_exposure(h, TemperatureConfig{}, rng);
  const Matrix xr = decode_oe(oe, s, g);
  EXPECT_EQ(xr.rows(), 25u);
  EXPECT_EQ(xr.cols(), 4u);
  const ExposureHeads next = forward_te(te, s, x, g);
  EXPECT_EQ(next.size(), 25u);
  const Matrix back = decode_te(te, sample_exposure(next, TemperatureConfig{}, rng), g);
  EXPECT_EQ(back.cols(), 6u);
}

TEST(VulnerabilityModules, RejectRawCovariates) {
  Rng rng(4);
  const ModelShape shape{4, 3, {32, 32}};
  const ModuleParams ov = ModuleParams::init(ModuleKind::ov, shape, rng);
  const ModuleParams tv = ModuleParams::init(ModuleKind::tv, shape, rng);
  const VulnerabilityGraph v = full_vulnerability_graph(grid_graph(3, 4));
  const TaggedMatrix lnh{Matrix(9, 1, 1.0), Source::te_sample};
  const TaggedMatrix raw{Matrix(9, 4), Source::raw_covariates};
  const TaggedMatrix xte{Matrix(9, 4), Source::te_reconstruction};
  EXPECT_THROW(forward_ov(ov, lnh, raw, v), ConfigError);
  EXPECT_THROW(forward_ov(ov, TaggedMatrix{Matrix(9, 1), Source::oe_sample}, xte, v), ConfigError);
  const auto head = forward_ov(ov, lnh, xte, v);
  ASSERT_TRUE(head);
  EXPECT_EQ(head->classes(), 3u);
  const TaggedMatrix vs{Matrix(9, 3, 1.0 / 3), Source::ov_sample};
  EXPECT_THROW(forward_tv(tv, vs, raw, v), ConfigError);
  EXPECT_THROW(forward_tv(tv, vs, xte, v), ConfigError);
  const auto next = forward_tv(tv, vs, TaggedMatrix{decode_ov(ov, vs.values, v), Source::ov_reconstruction}, v);
  ASSERT_TRUE(next);
  EXPECT_EQ(decode_tv(tv, vs.values, v).cols(), 7u);
}

TEST(VulnerabilityModules, EmptyGraphHasNoHead) {
  Rng rng(4);
  const ModelShape shape{4, 3, {32, 32}};
  const ModuleParams ov = ModuleParams::init(ModuleKind::ov, shape, rng);
  const VulnerabilityGraph empty =
      prune_to_vulnerability_graph(grid_graph(3, 4), std::vector<double>(9, 0.0));
  EXPECT_FALSE(forward_ov(ov, TaggedMatrix{Matrix(0, 1), Source::te_sample},
                          TaggedMatrix{Matrix(0, 4), Source::te_reconstruction}, empty));
}

TEST(VulnerabilityModules, ClassMaskPrunesOutput) {
  Rng rng(5);
  const ModelShape shape{4, 3, {32, 32}};
  const ModuleParams ov = ModuleParams::init(ModuleKind::ov, shape, rng);
  const VulnerabilityGraph v = full_vulnerability_graph(grid_graph(2, 4));
  std::vector<std::uint8_t> mask(4 * 3, 1);
  mask[2] = 0;
  const auto head = forward_ov(ov, TaggedMatrix{Matrix(4, 1, 1.0), Source::te_sample},
                               TaggedMatrix{Matrix(4, 4, 0.3), Source::te_reconstruction}, v, mask);
  ASSERT_TRUE(head);
  EXPECT_EQ(head->class_mask, mask);
  EXPECT_LE(softmax_probs(prune_logits(*head))(0, 2), 1e-6);
}

TEST(EvaluateModule, SumsWeightedTerms) {
  Rng rng(6);
  const ModelShape shape{4, 3, {8, 8}};
  RandomModuleCase c = random_module_case(ModuleKind::ov, shape, 3, rng);
  ObjectiveSettings s;
  const LossTerms t = evaluate_module(c.params, c.instance, c.noise, s).terms;
  EXPECT_NEAR(t.total, t.reconstruction + t.kl_vulnerability + t.cross_entropy, 1e-12);
  s.cross_entropy = 2.0;
  const LossTerms t2 = evaluate_module(c.params, c.instance, c.noise, s).terms;
  EXPECT_NEAR(t2.total, t.total + t.cross_entropy, 1e-12);
}

TEST(ModuleGradients, EveryNetworkAndTermMatchesFiniteDifferences) {
  GradCheckOptions o;
  o.instances = 2;
  const auto checks = check_module_gradients(o);
  std::size_t networks_seen = 0;
  std::set<std::string> seen;
  for (const auto& c : checks) {
    EXPECT_LT(c.report.relative_error, 1e-4) << to_string(c.kind) << " " << c.term << " " << c.report.parameter;
    const std::string p = c.report.parameter;
    seen.insert(p.substr(0, p.find('.', p.find('.') + 1)));
  }
  networks_seen = seen.size();
  EXPECT_EQ(networks_seen, 8u);
}

TEST(ModuleGradients, TermIsolation) {
  const ObjectiveSettings s = isolate_term("kl_height");
  EXPECT_EQ(s.kl_height, 1.0);
  EXPECT_EQ(s.reconstruction, 0.0);
  EXPECT_EQ(s.cross_entropy, 0.0);
  EXPECT_THROW(isolate_term("entropy"), ConfigError);
  EXPECT_EQ(loss_terms(ModuleKind::oe), (std::vector<std::string>{"reconstruction", "kl_height", "kl_presence"}));
}
