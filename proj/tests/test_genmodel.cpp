#include <gtest/gtest.h>

#include <cmath>

#include "cgsur/genmodel.hpp"

using namespace cgsur;
using namespace cgsur::model;

namespace {

ModelParams small_model(std::uint64_t seed, int df = 8, int dc = 2) {
  ModelDims d;
  d.fine_grid = df;
  d.coarse_grid = dc;
  d.dim_z = ModelDims::default_dim_z(dc);
  d.hidden = {6, 5};
  ModelParams m(d);
  Rng rng(seed);
  m.initialize(rng, 0.4, 0.64, 0.3, 0.1, 1e-2, 0.3);
  std::normal_distribution<double> n(0.0, 0.05);
  for (int i = 0; i < m.num_params(); ++i) m.theta()[i] += n(rng);
  return m;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

}  // namespace

TEST(Prior, Values) {
  EXPECT_NEAR(prior_logpdf(Eigen::VectorXd::Zero(2)), -std::log(2 * M_PI), 1e-15);
  EXPECT_NEAR(prior_logpdf(Eigen::Vector2d(1, 0)), -0.5 - std::log(2 * M_PI), 1e-15);
}

TEST(Prior, ChiSquareMoment) {
  Rng rng(1);
  const int n = 100000, dz = 3;
  double s = 0, s2 = 0;
  for (int k = 0; k < n; ++k) {
    const double q = prior_sample(dz, rng).squaredNorm();
    s += q;
    s2 += q * q;
  }
  const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_NEAR(mean, dz, 3 * sd / std::sqrt(n));
}

TEST(Dims, DefaultLatentSize) {
  EXPECT_EQ(ModelDims::default_dim_z(4), 8);
  EXPECT_EQ(ModelDims::default_dim_z(8), 32);
  EXPECT_EQ(ModelDims::default_dim_z(1), 1);
  ModelDims d;
  d.fine_grid = 10;
  d.coarse_grid = 4;
  EXPECT_THROW(ModelParams{d}, GridMismatch);
}

TEST(Decoder, VarianceClamped) {
  auto m = small_model(2);
  // push the log-variance head far outside the clamp range
  m.decoder_params().tail(m.dim_x()).setConstant(100.0);
  auto d = decode_x(Eigen::VectorXd::Ones(m.dim_z()), m);
  EXPECT_LE(d.var.maxCoeff(), kMaxVar * (1 + 1e-12));
  m.decoder_params().tail(m.dim_x()).setConstant(-100.0);
  d = decode_x(Eigen::VectorXd::Ones(m.dim_z()) * 50.0, m);
  EXPECT_GE(d.var.minCoeff(), kMinVar * (1 - 1e-12));
}

TEST(Decoder, LogDensityAtMean) {
  auto m = small_model(3);
  const Eigen::VectorXd z = Eigen::VectorXd::Constant(m.dim_z(), 0.2);
  const auto d = decode_x(z, m);
  double expect = 0;
  for (int i = 0; i < d.var.size(); ++i) expect -= 0.5 * std::log(2 * M_PI * d.var[i]);
  EXPECT_NEAR(diag_gaussian_logpdf(d.mean, d.mean, d.var), expect, 1e-10);
}

TEST(Decoder, LikelihoodGradientFiniteDifferences) {
  auto m = small_model(4);
  Rng rng(5);
  Eigen::VectorXd x(m.dim_x());
  for (int i = 0; i < x.size(); ++i) x[i] = 0.4 + 0.8 * standard_normal(rng);
  const Eigen::VectorXd z = prior_sample(m.dim_z(), rng);
  auto loglik = [&](const ModelParams& mm, const Eigen::VectorXd& zz) {
    const auto d = decode_x(zz, mm);
    return diag_gaussian_logpdf(x, d.mean, d.var);
  };
  Decoded d = decode_x_batch(m, Eigen::MatrixXd(z));
  Eigen::MatrixXd cot = Eigen::MatrixXd::Zero(2 * m.dim_x(), 1);
  const double v = x_loglik_and_cotangent(x, d, 0, 1.0, &cot);
  EXPECT_NEAR(v, loglik(m, z), 1e-10);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m.decoder().num_params());
  const Eigen::MatrixXd gz = m.decoder().backward(m.decoder_params(), d.tape, cot, g);
  const double h = 1e-6;
  Eigen::VectorXd fd(g.size());
  for (int i = 0; i < g.size(); ++i) {
    ModelParams mp = m, mm = m;
    mp.decoder_params()[i] += h;
    mm.decoder_params()[i] -= h;
    fd[i] = (loglik(mp, z) - loglik(mm, z)) / (2 * h);
  }
  EXPECT_LT((g - fd).norm() / fd.norm(), 1e-5);
  for (int k = 0; k < m.dim_z(); ++k) {
    Eigen::VectorXd zp = z, zm = z;
    zp[k] += h;
    zm[k] -= h;
    EXPECT_LT(rel(gz(k, 0), (loglik(m, zp) - loglik(m, zm)) / (2 * h)), 1e-5);
  }
}

TEST(CoarseMap, ZeroWeightsAndLinearity) {
  auto m = small_model(6);
  const Eigen::VectorXd z1 = Eigen::VectorXd::Random(m.dim_z()), z2 = Eigen::VectorXd::Random(m.dim_z());
  const Eigen::VectorXd a = coarse_map(z1, m).mean - m.b_g();
  const Eigen::VectorXd b = coarse_map(z2, m).mean - m.b_g();
  const Eigen::VectorXd c = coarse_map(z1 + z2, m).mean - m.b_g();
  EXPECT_LT((a + b - c).norm(), 1e-13);
  EXPECT_LT((coarse_map(z1, m).var - m.log_S_X().array().exp().matrix()).norm(), 1e-15);
  m.W_g().setZero();
  EXPECT_EQ(coarse_map(z1, m).mean, Eigen::VectorXd(m.b_g()));
}

TEST(CoarseMap, GradientWrtWeights) {
  auto m = small_model(7);
  const Eigen::VectorXd z = Eigen::VectorXd::Random(m.dim_z());
  const Eigen::VectorXd c = Eigen::VectorXd::Random(m.dim_X());
  // d(c^T (W z + b)) / dW = c z^T
  const Eigen::MatrixXd analytic = c * z.transpose();
  const double h = 1e-6;
  for (int i = 0; i < m.dim_X(); ++i)
    for (int j = 0; j < m.dim_z(); ++j) {
      ModelParams mp = m, mm = m;
      mp.W_g()(i, j) += h;
      mm.W_g()(i, j) -= h;
      const double fd = (c.dot(coarse_map(z, mp).mean) - c.dot(coarse_map(z, mm).mean)) / (2 * h);
      EXPECT_LT(std::abs(fd - analytic(i, j)), 1e-8);
    }
}

TEST(Cgm, ConstantConductivityLinearSolution) {
  auto m = small_model(8, 8, 4);
  const auto r = cgm_forward(m, Eigen::VectorXd::Zero(16), {0, 0, 1, 1});
  const auto& mesh = *m.coarse_mesh();
  for (int n = 0; n < mesh.num_nodes(); ++n) EXPECT_NEAR(r.Y()[n], mesh.nodes[n][0], 1e-12);
}

TEST(Cgm, SinglePixel) {
  auto m = small_model(8, 4, 1);
  EXPECT_EQ(m.dim_X(), 1);
  const auto r = cgm_forward(m, Eigen::VectorXd::Constant(1, 0.7), {0.2, -0.3, 0.4, 0.1});
  ASSERT_EQ(r.Y().size(), 4);
  // all four nodes are Dirichlet nodes: node (0,0) -> a1, (1,0) -> a3, (0,1) -> a0, (1,1) -> a2
  EXPECT_DOUBLE_EQ(r.Y()[0], -0.3);
  EXPECT_DOUBLE_EQ(r.Y()[1], 0.1);
  EXPECT_DOUBLE_EQ(r.Y()[2], 0.2);
  EXPECT_DOUBLE_EQ(r.Y()[3], 0.4);
}

TEST(Cgm, GradientFiniteDifferences) {
  auto m = small_model(9, 8, 4);
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd X(16), c(25);
    for (int i = 0; i < 16; ++i) X[i] = 0.5 * standard_normal(rng);
    for (int i = 0; i < 25; ++i) c[i] = standard_normal(rng);
    const field::BoundaryCoeffs bc = field::sample_bc(rng);
    const auto r = cgm_forward(m, X, bc);
    const Eigen::VectorXd g = cgm_vjp(r, c);
    const double h = 1e-6;
    Eigen::VectorXd fd(16);
    for (int i = 0; i < 16; ++i) {
      Eigen::VectorXd xp = X, xm = X;
      xp[i] += h;
      xm[i] -= h;
      fd[i] = (c.dot(cgm_forward(m, xp, bc).Y()) - c.dot(cgm_forward(m, xm, bc).Y())) / (2 * h);
    }
    EXPECT_LT((g - fd).norm() / fd.norm(), 1e-5);
  }
}

TEST(OutputMap, ExactForLinearFields) {
  auto m = small_model(10, 8, 2);
  const auto& cm = *m.coarse_mesh();
  const auto& fm = *m.fine_mesh();
  Eigen::VectorXd Y(cm.num_nodes());
  for (int n = 0; n < Y.size(); ++n) Y[n] = 0.3 * cm.nodes[n][0] - 1.2 * cm.nodes[n][1] + 0.05;
  m.w_h().setOnes();
  m.b_h().setZero();
  const auto o = output_map(Y, m);
  for (int i = 0; i < fm.num_free(); ++i) {
    const auto& s = fm.nodes[fm.free_nodes[i]];
    EXPECT_NEAR(o.mean[i], 0.3 * s[0] - 1.2 * s[1] + 0.05, 1e-14);
  }
  m.b_h().setConstant(0.7);
  const auto c = output_map(Eigen::VectorXd::Zero(cm.num_nodes()), m);
  EXPECT_LT((c.mean.array() - 0.7).abs().maxCoeff(), 1e-15);
  const Eigen::VectorXd one = m.prolongation_free() * Eigen::VectorXd::Ones(cm.num_nodes());
  EXPECT_LT((one.array() - 1.0).abs().maxCoeff(), 1e-15);
  EXPECT_TRUE((output_map(Y, m).var.array() > 0).all());
}

TEST(OutputMap, FullVectorCarriesBoundaryData) {
  auto m = small_model(10, 8, 2);
  const field::BoundaryCoeffs bc{0.1, -0.2, 0.3, 0.4};
  const auto r = cgm_forward(m, Eigen::VectorXd::Zero(4), bc);
  const auto o = output_map_full(r.Y(), m, bc);
  const Eigen::VectorXd lift = fem::dirichlet_lift(*m.fine_mesh(), bc);
  for (int n : m.fine_mesh()->dirichlet_nodes) EXPECT_DOUBLE_EQ(o.mean[n], lift[n]);
}

TEST(Joint, DegenerateNoiseIsDeterministicComposition) {
  auto m = small_model(11);
  m.decoder_params().tail(m.dim_x()).setConstant(-1000.0);  // clamped to the floor
  m.log_S_X().setConstant(-1000.0);
  m.log_S_y().setConstant(-1000.0);
  const field::BoundaryCoeffs bc{0.1, 0.2, -0.1, 0.3};
  Rng rng(4);
  const auto s = sample_joint(m, bc, rng);
  EXPECT_LT((s.x - decode_x(s.z, m).mean).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT((s.X - coarse_map(s.z, m).mean).cwiseAbs().maxCoeff(), 1e-3);
  const auto y_det = output_map(cgm_forward(m, coarse_map(s.z, m).mean, bc).Y(), m).mean;
  EXPECT_LT((s.y - y_det).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Joint, Reproducible) {
  auto m = small_model(12);
  Rng a(9), b(9);
  const auto s1 = sample_joint(m, {}, a);
  const auto s2 = sample_joint(m, {}, b);
  EXPECT_EQ(s1.y, s2.y);
  EXPECT_EQ(s1.x, s2.x);
}

TEST(Joint, MonteCarloMeanOfX) {
  auto m = small_model(13);
  const Eigen::VectorXd z = Eigen::VectorXd::Constant(m.dim_z(), 0.3);
  const auto d = decode_x(z, m);
  Rng rng(5);
  const int n = 10000;
  Eigen::VectorXd s = Eigen::VectorXd::Zero(m.dim_x());
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < m.dim_x(); ++i) s[i] += d.mean[i] + std::sqrt(d.var[i]) * standard_normal(rng);
  s /= n;
  for (int i = 0; i < m.dim_x(); ++i) EXPECT_NEAR(s[i], d.mean[i], 3.5 * std::sqrt(d.var[i] / n));
}

TEST(Joint, LogDensityMatchesIndependentEvaluation) {
  auto m = small_model(14);
  const field::BoundaryCoeffs bc{0.1, 0.2, -0.1, 0.3};
  Rng rng(6);
  const auto s = sample_joint(m, bc, rng);
  auto lg = [](const Eigen::VectorXd& v, const Eigen::VectorXd& mu, const Eigen::VectorXd& var) {
    double r = 0;
    for (int i = 0; i < v.size(); ++i)
      r += -0.5 * (v[i] - mu[i]) * (v[i] - mu[i]) / var[i] - 0.5 * std::log(2 * M_PI * var[i]);
    return r;
  };
  const auto d = decode_x(s.z, m);
  const Eigen::VectorXd Xmean = m.W_g() * s.z + m.b_g();
  const Eigen::VectorXd Xvar = m.log_S_X().array().exp();
  const auto om = output_map(cgm_forward(m, s.X, bc).Y(), m);
  const double expect = lg(s.z, Eigen::VectorXd::Zero(m.dim_z()), Eigen::VectorXd::Ones(m.dim_z())) +
                        lg(s.x, d.mean, d.var) + lg(s.X, Xmean, Xvar) + lg(s.y, om.mean, om.var);
  EXPECT_NEAR(joint_logpdf(m, s, bc), expect, 1e-9 * std::abs(expect));
}

TEST(Joint, EndToEndGradientThroughCgm) {
  // d/dW_g of c^T h(Y(W_g z + b_g)) via the chain rule
  auto m = small_model(15, 8, 4);
  Rng rng(7);
  const Eigen::VectorXd z = prior_sample(m.dim_z(), rng);
  Eigen::VectorXd c(m.dim_y());
  for (int i = 0; i < c.size(); ++i) c[i] = standard_normal(rng);
  const field::BoundaryCoeffs bc = field::sample_bc(rng);
  auto loss = [&](const ModelParams& mm) {
    return c.dot(output_map(cgm_forward(mm, coarse_map(z, mm).mean, bc).Y(), mm).mean);
  };
  const auto r = cgm_forward(m, coarse_map(z, m).mean, bc);
  const Eigen::VectorXd dY = m.prolongation_free().transpose() * c.cwiseProduct(m.w_h());
  const Eigen::VectorXd dX = cgm_vjp(r, dY);
  const Eigen::MatrixXd dW = dX * z.transpose();
  const double h = 1e-6;
  for (int i = 0; i < m.dim_X(); ++i)
    for (int j = 0; j < m.dim_z(); j += 3) {
      ModelParams mp = m, mm = m;
      mp.W_g()(i, j) += h;
      mm.W_g()(i, j) -= h;
      const double fd = (loss(mp) - loss(mm)) / (2 * h);
      EXPECT_LT(std::abs(fd - dW(i, j)), 1e-4 * std::max(std::abs(fd), 1e-3));
    }
}
