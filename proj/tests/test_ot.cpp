#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "w2bary/errors.hpp"
#include "w2bary/ot.hpp"

using namespace w2bary;

namespace {

Mlp linear_net(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  Mlp net({w.cols(), w.rows()});
  net.weight(0) = w;
  net.bias(0) = b;
  return net;
}

MmrPair linear_pair(const Eigen::MatrixXd& map_w, const Eigen::VectorXd& map_b, const Eigen::RowVectorXd& pot_w,
                    double pot_b) {
  MmrConfig cfg;
  return MmrPair{TrainableNet(linear_net(map_w, map_b), cfg.map_lr),
                 TrainableNet(linear_net(pot_w, Eigen::VectorXd::Constant(1, pot_b)), cfg.potential_lr)};
}

// Central differences of a scalar objective in the parameters of one network.
template <typename Loss>
Eigen::VectorXd fd_gradient(Mlp& net, Loss&& loss) {
  Eigen::VectorXd g(net.parameter_count());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double keep = net.parameters()(i);
    const double h = 1e-5 * std::max(1.0, std::abs(keep));
    net.parameters()(i) = keep + h;
    const double up = loss();
    net.parameters()(i) = keep - h;
    const double down = loss();
    net.parameters()(i) = keep;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST(MmrObjective, TranslationSaddleIsStationary) {
  // Source x, target x + u on shared draws: T(x) = x + u and v(y) = <u, y>
  // solve the saddle problem, so both gradients vanish exactly.
  const Eigen::Index d = 3;
  const Eigen::VectorXd u = Eigen::Vector3d(1.0, -2.0, 0.5);
  auto pair = linear_pair(Eigen::MatrixXd::Identity(d, d), u, u.transpose(), 0.0);
  Rng rng = make_stream(1, "x");
  const Eigen::MatrixXd x = standard_normal(rng, 512, d);
  const Eigen::MatrixXd y = x.rowwise() + u.transpose();
  EXPECT_LT(potential_objective(pair, x, y).grad.norm(), 1e-12);
  EXPECT_LT(map_objective(pair, x).grad.norm(), 1e-12);
}

TEST(MmrObjective, GradientsMatchFiniteDifferences) {
  const Eigen::Index d = 2;
  auto pair = MmrPair::create(d, {16, 16}, MmrConfig{}, 4);
  Rng rng = make_stream(2, "x");
  const Eigen::MatrixXd x = standard_normal(rng, 64, d);
  const Eigen::MatrixXd y = standard_normal(rng, 64, d).array() + 1.0;

  const auto pot = potential_objective(pair, x, y);
  const auto pot_fd = fd_gradient(pair.potential.net, [&] { return potential_objective(pair, x, y).loss; });
  EXPECT_LT((pot.grad - pot_fd).norm(), 1e-5 * (1.0 + pot_fd.norm()));

  const auto map = map_objective(pair, x);
  const auto map_fd = fd_gradient(pair.map.net, [&] { return map_objective(pair, x).loss; });
  EXPECT_LT((map.grad - map_fd).norm(), 1e-4 * (1.0 + map_fd.norm()));
}

TEST(MmrObjective, LossesMatchDirectFormulas) {
  const Eigen::Index d = 2;
  auto pair = MmrPair::create(d, {8}, MmrConfig{}, 5);
  Rng rng = make_stream(3, "x");
  const Eigen::MatrixXd x = standard_normal(rng, 32, d);
  const Eigen::MatrixXd y = standard_normal(rng, 32, d);
  const Eigen::MatrixXd tx = pair.map.net(x);
  const double lv = pair.potential.net(tx).mean() - pair.potential.net(y).mean();
  const double lt = 0.5 * (x - tx).rowwise().squaredNorm().mean() - pair.potential.net(tx).mean();
  EXPECT_NEAR(potential_objective(pair, x, y).loss, lv, 1e-12);
  EXPECT_NEAR(map_objective(pair, x).loss, lt, 1e-12);
}

TEST(MmrObjective, PotentialShiftChangesNoGradient) {
  const Eigen::Index d = 3;
  auto pair = MmrPair::create(d, {12, 12}, MmrConfig{}, 6);
  Rng rng = make_stream(4, "x");
  const Eigen::MatrixXd x = standard_normal(rng, 128, d);
  const Eigen::MatrixXd y = standard_normal(rng, 128, d);
  const auto pot = potential_objective(pair, x, y);
  const auto map = map_objective(pair, x);

  auto shifted = pair;
  shifted.potential.net.bias(shifted.potential.net.num_layers() - 1)(0) += 7.5;
  const auto pot2 = potential_objective(shifted, x, y);
  const auto map2 = map_objective(shifted, x);
  EXPECT_NEAR(pot2.loss, pot.loss, 1e-12);
  EXPECT_LT((pot2.grad - pot.grad).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(map2.loss, map.loss - 7.5, 1e-12);
  EXPECT_LT((map2.grad - map.grad).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MmrUpdate, LearnsIdentityBetweenEqualMeasures) {
  const Eigen::Index d = 2;
  MmrConfig cfg;
  cfg.potential_steps = 200;
  cfg.batch_size = 256;
  auto pair = MmrPair::create(d, {32, 32}, cfg, 7);
  const auto p = base_sampler(BaseKind::kGaussian, d);
  Rng rng = make_stream(5, "train");
  const auto trace = mmr_update(pair, p, p, cfg, rng);
  ASSERT_EQ(trace.size(), 200u);
  EXPECT_EQ(trace.back().step, 200);
  Rng eval = make_stream(5, "eval");
  const Eigen::MatrixXd x = p.sample(eval, 20000);
  const double err = (pair.map.net(x) - x).rowwise().squaredNorm().mean();
  EXPECT_LT(err, 0.05 * d);
}

TEST(MmrUpdate, RejectsNonFiniteTargetWithStep) {
  const Eigen::Index d = 2;
  MmrConfig cfg;
  cfg.potential_steps = 3;
  cfg.batch_size = 8;
  auto pair = MmrPair::create(d, {4}, cfg, 1);
  const auto bad = constant_sampler(Eigen::Vector2d(std::nan(""), 0.0));
  Rng rng = make_stream(6, "x");
  try {
    mmr_update(pair, base_sampler(BaseKind::kGaussian, d), bad, cfg, rng);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(MmrUpdate, ValidatesShapesAndConfig) {
  MmrConfig cfg;
  auto pair = MmrPair::create(2, {4}, cfg, 1);
  Rng rng = make_stream(7, "x");
  EXPECT_THROW(mmr_update(pair, base_sampler(BaseKind::kGaussian, 3), base_sampler(BaseKind::kGaussian, 2), cfg, rng),
               ValidationError);
  cfg.map_steps = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = MmrConfig{};
  cfg.potential_lr.decay_factor = 1.5;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(MmrUpdate, AdamStatePersistsAcrossCalls) {
  MmrConfig cfg;
  cfg.potential_steps = 4;
  cfg.map_steps = 3;
  cfg.batch_size = 16;
  auto pair = MmrPair::create(2, {4}, cfg, 1);
  const auto p = base_sampler(BaseKind::kGaussian, 2);
  Rng rng = make_stream(8, "x");
  mmr_update(pair, p, p, cfg, rng);
  const auto trace = mmr_update(pair, p, p, cfg, rng);
  EXPECT_EQ(trace.front().step, 5);
  EXPECT_EQ(pair.map.opt.step_count, 24);
  pair.reset_optimizers();
  EXPECT_EQ(pair.potential.opt.step_count, 0);
  EXPECT_EQ(pair.map.opt.first_moment.norm(), 0.0);
}

TEST(TransportCost, IdentityIsZeroAndAffineMatchesClosedForm) {
  const Eigen::Index d = 2;
  const auto p = base_sampler(BaseKind::kGaussian, d);
  Rng rng = make_stream(9, "x");
  EXPECT_EQ(transport_cost_estimate([](const Eigen::MatrixXd& x) { return x; }, p, 1000, rng), 0.0);

  // x -> 2x + (1, 1) on N(0, I_2): 1/2 E|x + (1, 1)|^2 = 1/2 (2 + 2) = 2.
  const AffineMap<double> a{2.0 * Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Ones(d)};
  const double cost = transport_cost_estimate([&](const Eigen::MatrixXd& x) { return a(x); }, p, 400000, rng);
  EXPECT_NEAR(cost, 2.0, 0.02);
}

TEST(TransportCost, DeterministicPerStream) {
  const auto p = base_sampler(BaseKind::kUniform, 3);
  const BatchMap m = [](const Eigen::MatrixXd& x) { Eigen::MatrixXd y = 0.5 * x; return y; };
  Rng a = make_stream(10, "x"), b = make_stream(10, "x");
  EXPECT_EQ(transport_cost_estimate(m, p, 50000, a), transport_cost_estimate(m, p, 50000, b));
  EXPECT_THROW(transport_cost_estimate(m, p, 0, a), ValidationError);
}

TEST(DualCost, ExactTranslationPairGivesHalfSquaredShift) {
  const Eigen::Index d = 2;
  const Eigen::VectorXd u = Eigen::Vector2d(1.0, 2.0);
  auto pair = linear_pair(Eigen::MatrixXd::Identity(d, d), u, u.transpose(), 0.0);
  const auto p = base_sampler(BaseKind::kGaussian, d);
  const auto q = affine_pushforward(p, {Eigen::MatrixXd::Identity(d, d), u});
  Rng rng = make_stream(11, "x");
  EXPECT_NEAR(dual_cost_estimate(pair, p, q, 400000, rng), 0.5 * u.squaredNorm(), 0.02);
}

TEST(NormalizedMapError, ZeroForEqualMapsAndScaleFree) {
  const Eigen::Index d = 2;
  const auto p = base_sampler(BaseKind::kGaussian, d);
  const BatchMap ref = [](const Eigen::MatrixXd& x) { Eigen::MatrixXd y = 3.0 * x; return y; };
  const BatchMap off = [](const Eigen::MatrixXd& x) { Eigen::MatrixXd y = 3.3 * x; return y; };
  Rng rng = make_stream(12, "x");
  EXPECT_EQ(normalized_map_error(ref, ref, p, 1000, rng), 0.0);
  // |0.3 x|^2 / tr Cov(3 x) = 0.09 / 9.
  EXPECT_NEAR(normalized_map_error(off, ref, p, 200000, rng), 0.01, 5e-4);
}

TEST(GeneratedSampler, PushesLatentThroughGenerator) {
  const Mlp g = linear_net(2.0 * Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(1.0, -1.0));
  const auto s = generated_sampler(g, base_sampler(BaseKind::kGaussian, 2));
  const auto m = empirical_moments(s, 200000, 3);
  EXPECT_NEAR(m.mean(0), 1.0, 0.02);
  EXPECT_NEAR(m.mean(1), -1.0, 0.02);
  EXPECT_NEAR(m.cov(0, 0), 4.0, 0.05);
  EXPECT_THROW(generated_sampler(g, base_sampler(BaseKind::kGaussian, 3)), ValidationError);
}

TEST(LossTraceCsv, HeaderAndRows) {
  const LossTrace trace{{1, 0.5, -0.25, 1e-3, 1e-3}, {2, 0.125, -0.5, 5e-4, 1e-3}};
  std::ostringstream os;
  write_loss_trace_csv(os, trace);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# w2bary loss-trace v1");
  std::getline(in, line);
  EXPECT_EQ(line, "step,loss_v,loss_T,lr_v,lr_T");
  std::getline(in, line);
  EXPECT_EQ(line, "1,0.5,-0.25,0.001,0.001");
  std::getline(in, line);
  EXPECT_EQ(line, "2,0.125,-0.5,0.0005,0.001");
}
