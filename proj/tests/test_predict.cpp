#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cgsur/predict.hpp"
#include "tiny_problem.hpp"

using namespace cgsur;
using namespace cgsur::predict;
using cgsur::testing::tiny;

namespace {

std::vector<Eigen::VectorXd> scalars(std::initializer_list<double> v) {
  std::vector<Eigen::VectorXd> out;
  for (double x : v) out.push_back(Eigen::VectorXd::Constant(1, x));
  return out;
}

std::vector<Eigen::VectorXd> random_vectors(int n, int d, Rng& rng) {
  std::vector<Eigen::VectorXd> out(n, Eigen::VectorXd(d));
  for (auto& v : out)
    for (int i = 0; i < d; ++i) v[i] = standard_normal(rng);
  return out;
}

}  // namespace

TEST(Metrics, R2HandExample) {
  EXPECT_DOUBLE_EQ(r2_score(scalars({0.0, 2.0}), scalars({0.0, 1.0})), 0.5);
  EXPECT_DOUBLE_EQ(r2_score(scalars({0.0, 2.0}), scalars({0.0, 2.0})), 1.0);
  EXPECT_DOUBLE_EQ(r2_score(scalars({0.0, 2.0}), scalars({1.0, 1.0})), 0.0);
  EXPECT_THROW(r2_score(scalars({1.0, 1.0}), scalars({0.0, 1.0})), DegenerateValidation);
  EXPECT_THROW(r2_score(scalars({1.0}), scalars({1.0})), DegenerateValidation);
}

TEST(Metrics, R2OrderAndAffineInvariance) {
  Rng rng(1);
  auto y = random_vectors(20, 5, rng);
  auto mu = random_vectors(20, 5, rng);
  for (int i = 0; i < 20; ++i) mu[i] = 0.7 * y[i] + 0.3 * mu[i];
  const double r = r2_score(y, mu);
  std::vector<int> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Eigen::VectorXd> yp, mp, ya, ma;
  for (int i : perm) {
    yp.push_back(y[i]);
    mp.push_back(mu[i]);
  }
  EXPECT_NEAR(r2_score(yp, mp), r, 1e-12);
  for (int i = 0; i < 20; ++i) {
    ya.push_back((3.0 * y[i].array() - 1.5).matrix());
    ma.push_back((3.0 * mu[i].array() - 1.5).matrix());
  }
  EXPECT_NEAR(r2_score(ya, ma), r, 1e-12);
}

TEST(Metrics, LogscoreProperties) {
  Rng rng(2);
  const int d = 7;
  auto y = random_vectors(5, d, rng);
  std::vector<Eigen::VectorXd> ones(5, Eigen::VectorXd::Ones(d)), small(5, Eigen::VectorXd::Constant(d, 0.01));
  EXPECT_NEAR(logscore(y, y, ones), -0.5 * d * std::log(2 * M_PI), 1e-12);
  EXPECT_GT(logscore(y, y, small), logscore(y, y, ones));
  // single datum by hand
  Eigen::VectorXd y1(2), m1(2), v1(2);
  y1 << 1.0, -1.0;
  m1 << 0.5, 0.0;
  v1 << 0.25, 2.0;
  const double hand = -0.5 * (0.25 / 0.25 + std::log(0.25) + std::log(2 * M_PI)) -
                      0.5 * (1.0 / 2.0 + std::log(2.0) + std::log(2 * M_PI));
  EXPECT_NEAR(logscore({y1}, {m1}, {v1}), hand, 1e-12);
  v1[0] = 0.0;
  EXPECT_THROW(logscore({y1}, {m1}, {v1}), NonPositiveVariance);
}

TEST(Density, KsStatistic) {
  EXPECT_DOUBLE_EQ(ks_statistic({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(ks_statistic({1, 2, 3}, {4, 5}), 1.0);
  // F_a jumps to 1/2 at 1, F_b stays 0 until 1.5: sup = 1/2
  EXPECT_DOUBLE_EQ(ks_statistic({1, 2}, {1.5, 2.5}), 0.5);
  Rng rng(3);
  std::vector<double> a, b;
  for (int i = 0; i < 3000; ++i) {
    a.push_back(standard_normal(rng));
    b.push_back(standard_normal(rng));
  }
  const double d = ks_statistic(a, b);
  EXPECT_GE(d, 0.0);
  EXPECT_LT(d, 0.05);
  EXPECT_THROW(ks_statistic({}, {1.0}), input_error);
}

TEST(Density, HistogramAndKde) {
  Rng rng(4);
  std::vector<double> v;
  for (int i = 0; i < 5000; ++i) v.push_back(standard_normal(rng));
  const Histogram h = histogram(v, -5.0, 5.0, 64);
  ASSERT_EQ(h.density.size(), 64u);
  const double w = 10.0 / 64;
  EXPECT_NEAR(std::accumulate(h.density.begin(), h.density.end(), 0.0) * w, 1.0, 1e-12);
  const double bw = silverman_bandwidth(v);
  EXPECT_NEAR(bw, 0.9 * 1.0 * std::pow(5000.0, -0.2), 0.02);
  std::vector<double> grid;
  for (int g = 0; g <= 400; ++g) grid.push_back(-6.0 + 12.0 * g / 400);
  const auto dens = kde(v, grid, bw);
  double integral = 0.0;
  for (double x : dens) integral += x * 12.0 / 400;
  EXPECT_NEAR(integral, 1.0, 1e-3);
  EXPECT_NEAR(dens[200], 1.0 / std::sqrt(2 * M_PI), 0.03);
}

TEST(Predictive, ZeroFineSolvesAndMoments) {
  auto f = tiny(false, vobs::VoType::None, 3, 3, 0);
  Rng rng(5);
  field::GrfSpec spec;
  spec.grid_size = 8;
  field::GrfSampler sampler(spec);
  std::vector<Eigen::VectorXd> xs;
  std::vector<field::BoundaryCoeffs> bcs;
  for (int i = 0; i < 4; ++i) {
    xs.push_back(sampler.sample(rng).lambda);
    bcs.push_back(field::sample_bc(rng));
  }
  PredictOptions po;
  po.samples = 16;
  po.infer.steps = 20;
  fem::SolveCounter::instance().reset();
  const BatchPrediction p = predict_batch(f.state, xs, bcs, po);
  EXPECT_EQ(fem::solve_count(8), 0u);
  EXPECT_EQ(fem::solve_count(2), 4u * 16u);
  const auto& fine = *f.state.model.fine_mesh();
  for (int i = 0; i < 4; ++i) {
    const Eigen::VectorXd lift = fem::dirichlet_lift(fine, bcs[i]);
    for (int n : fine.dirichlet_nodes) {
      EXPECT_DOUBLE_EQ(p.mean[i][n], lift[n]);
      EXPECT_EQ(p.var[i][n], 0.0);
    }
    for (int n : fine.free_nodes) EXPECT_GT(p.var[i][n], 0.0);
  }
}

TEST(Predictive, MeanIsSampleAverageAndTraceMatches) {
  auto f = tiny(false, vobs::VoType::None, 2, 2, 0);
  const auto& m = f.state.model;
  const field::BoundaryCoeffs bc{0.1, -0.2, 0.3, 0.05};
  Eigen::VectorXd mu(m.dim_z()), lv(m.dim_z());
  mu << 0.3, -0.4;
  lv << -1.0, -0.5;
  Rng a(77);
  const PredictiveSamples ps = predictive_posterior(f.state, mu, lv, bc, 2, a);
  EXPECT_LT((ps.mean - ps.samples.rowwise().mean()).norm(), 1e-14);
  const Eigen::VectorXd d = ps.samples.col(0) - ps.samples.col(1);
  EXPECT_LT((ps.var - 0.5 * d.cwiseProduct(d)).norm(), 1e-14);

  // manual trace with the same stream
  Rng b(77);
  const auto& fine = *m.fine_mesh();
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd z(m.dim_z());
    for (int j = 0; j < m.dim_z(); ++j) z[j] = mu[j] + std::exp(0.5 * lv[j]) * standard_normal(b);
    Eigen::VectorXd X = m.W_g() * z + m.b_g();
    for (int j = 0; j < m.dim_X(); ++j) X[j] += std::sqrt(m.S_X()[j]) * standard_normal(b);
    const Eigen::VectorXd h = model::output_map(model::cgm_forward(m, X, bc).Y(), m).mean;
    Eigen::VectorXd y = fem::dirichlet_lift(fine, bc);
    for (int j = 0; j < m.dim_y(); ++j) y[fine.free_nodes[j]] = h[j] + std::sqrt(m.S_y()[j]) * standard_normal(b);
    EXPECT_LT((y - ps.samples.col(k)).norm(), 1e-13);
  }
}

TEST(Predictive, VanishingVariancesGiveDeterministicComposition) {
  auto f = tiny(false, vobs::VoType::None, 2, 2, 0);
  auto& m = f.state.model;
  m.log_S_X().setConstant(model::kLogMinVar);
  m.log_S_y().setConstant(model::kLogMinVar);
  const field::BoundaryCoeffs bc{0.2, 0.1, -0.3, 0.4};
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(m.dim_z(), 0.2);
  const Eigen::VectorXd lv = Eigen::VectorXd::Constant(m.dim_z(), -60.0);
  Rng rng(8);
  const PredictiveSamples ps = predictive_posterior(f.state, mu, lv, bc, 8, rng);
  const Eigen::VectorXd det =
      model::to_full(*m.fine_mesh(), model::output_map(model::cgm_forward(m, m.W_g() * mu + m.b_g(), bc).Y(), m).mean, bc);
  for (int k = 0; k < 8; ++k) EXPECT_LT((ps.samples.col(k) - det).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(InferZ, IgnoredLatentGivesPrior) {
  auto f = tiny(false, vobs::VoType::None, 2, 2, 0);
  auto& m = f.state.model;
  // first dense layer weights (hidden x dim_z) come first in the decoder block
  m.decoder_params().head(f.dims.hidden[0] * m.dim_z()).setZero();
  Rng rng(9);
  field::GrfSpec spec;
  spec.grid_size = 8;
  field::GrfSampler sampler(spec);
  std::vector<Eigen::VectorXd> xs{sampler.sample(rng).lambda, sampler.sample(rng).lambda};
  InferOptions io;
  io.steps = 600;
  const LatentPosterior q = infer_z(f.state, xs, io);
  EXPECT_LT(q.mean.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LT(q.logvar.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_THROW(
      [&] {
        InferOptions am;
        am.mode = InferMode::Amortized;
        infer_z(f.state, xs, am);
      }(),
      input_error);
}

TEST(InferZ, DeterministicAndNoWorseThanAmortized) {
  auto f = tiny(true, vobs::VoType::None, 4, 16, 0);
  f.config.iterations = 300;
  f.config.plateau_window = 0;
  inference::train(f.state, f.problem, f.config);
  std::vector<Eigen::VectorXd> xs;
  for (const auto& u : f.problem.unlabeled) xs.push_back(u.x);
  InferOptions io;
  io.seed = 3;
  io.steps = 200;
  io.lr = 0.02;
  const LatentPosterior a = infer_z(f.state, xs, io);
  const LatentPosterior b = infer_z(f.state, xs, io);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.logvar, b.logvar);
  InferOptions am = io;
  am.mode = InferMode::Amortized;
  const LatentPosterior c = infer_z(f.state, xs, am);

  Eigen::MatrixXd x(xs[0].size(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) x.col(i) = xs[i];
  Rng rng(4);
  std::vector<Eigen::MatrixXd> eps(400, Eigen::MatrixXd(f.state.dz(), xs.size()));
  for (auto& e : eps)
    for (int k = 0; k < e.size(); ++k) e.data()[k] = standard_normal(rng);
  const double opt = unlabeled_objective(f.state.model, x, a.mean, a.logvar, eps, nullptr, nullptr).sum();
  const double amo = unlabeled_objective(f.state.model, x, c.mean, c.logvar, eps, nullptr, nullptr).sum();
  EXPECT_GE(opt, amo - 0.5);
  EXPECT_NEAR(opt, amo, 0.1 * std::abs(amo) + 5.0);
}

TEST(Uq, BookkeepingAndReference) {
  auto f = tiny(false, vobs::VoType::None, 2, 2, 0);
  field::GrfSpec spec;
  spec.grid_size = 8;
  field::GrfSampler sampler(spec);
  UqOptions uo;
  uo.samples = 100;
  uo.chunk = 32;
  uo.infer.steps = 10;
  uo.reference = false;
  fem::SolveCounter::instance().reset();
  const UqResult a = propagate_uq(sampler, f.state, uo);
  EXPECT_EQ(a.surrogate.size(), 100u);
  EXPECT_TRUE(a.reference.empty());
  EXPECT_EQ(fem::solve_count(8), 0u);
  uo.reference = true;
  const UqResult b = propagate_uq(sampler, f.state, uo);
  EXPECT_EQ(b.reference.size(), 100u);
  EXPECT_EQ(fem::solve_count(8), 100u);
  EXPECT_EQ(a.surrogate, b.surrogate);
  EXPECT_GE(b.ks, 0.0);
  EXPECT_LE(b.ks, 1.0);
  const double w = (b.hist_reference.hi - b.hist_reference.lo) / 64;
  EXPECT_NEAR(std::accumulate(b.hist_reference.density.begin(), b.hist_reference.density.end(), 0.0) * w, 1.0, 1e-12);
  // the reference QoI is the centre node of the fine solution
  const int c = f.state.model.fine_mesh()->center_node();
  EXPECT_EQ(c, 4 * 9 + 4);
}
