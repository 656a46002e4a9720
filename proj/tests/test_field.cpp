#include <gtest/gtest.h>

#include <cmath>

#include "cgsur/field.hpp"

using namespace cgsur;
using namespace cgsur::field;

TEST(Covariance, DiagonalIsVariance) {
  GrfSpec spec;
  spec.grid_size = 4;
  const Eigen::MatrixXd c = covariance_matrix(spec);
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(c(i, i), 0.64, 1e-15);
}

TEST(Covariance, TwoByTwoEntry) {
  GrfSpec spec;
  spec.grid_size = 2;
  const Eigen::MatrixXd c = covariance_matrix(spec);
  // centroids (0.25,0.25) and (0.75,0.25)
  const double expect = 0.64 * std::exp(-0.25 / (2.0 * 0.0225));
  EXPECT_NEAR(c(0, 1), expect, 1e-15);
  EXPECT_NEAR(c(1, 0), expect, 1e-15);
  EXPECT_NEAR((c - c.transpose()).norm(), 0.0, 0.0);
}

TEST(Covariance, DecaysWithDistance) {
  EXPECT_LT(se_kernel({0, 0}, {10, 10}, 0.8, 0.15), 1e-300);
}

TEST(Covariance, CentroidOrdering) {
  const Eigen::Vector2d s = pixel_centroid(5, 4);  // row 1, col 1
  EXPECT_DOUBLE_EQ(s[0], 0.375);
  EXPECT_DOUBLE_EQ(s[1], 0.375);
  const Eigen::Vector2d t = pixel_centroid(3, 4);  // row 0, col 3
  EXPECT_DOUBLE_EQ(t[0], 0.875);
  EXPECT_DOUBLE_EQ(t[1], 0.125);
}

TEST(Grf, Deterministic) {
  GrfSpec spec;
  spec.grid_size = 8;
  const auto a = sample_grf(spec, 42);
  const auto b = sample_grf(spec, 42);
  EXPECT_EQ(a.lambda, b.lambda);
  const auto c = sample_grf(spec, 43);
  EXPECT_NE(a.lambda, c.lambda);
}

TEST(Grf, KappaIsExpLambda) {
  GrfSpec spec;
  spec.grid_size = 8;
  const auto a = sample_grf(spec, 7);
  for (int i = 0; i < a.lambda.size(); ++i) {
    EXPECT_GT(a.kappa[i], 0.0);
    EXPECT_NEAR(std::log(a.kappa[i]), a.lambda[i], 1e-14);
  }
}

TEST(Grf, TinyStddevGivesConstantMean) {
  GrfSpec spec;
  spec.grid_size = 4;
  spec.stddev = 1e-12;
  const auto a = sample_grf(spec, 1);
  for (int i = 0; i < a.lambda.size(); ++i) EXPECT_NEAR(a.lambda[i], spec.mean, 1e-9);
}

TEST(Grf, InvalidSpecRejected) {
  GrfSpec spec;
  spec.grid_size = 0;
  EXPECT_THROW(spec.validate(), InvalidSize);
  spec.grid_size = 4;
  spec.stddev = 0.0;
  EXPECT_THROW(spec.validate(), input_error);
}

TEST(Grf, MomentsMatchCovariance) {
  GrfSpec spec;
  spec.grid_size = 4;
  GrfSampler sampler(spec);
  const Eigen::MatrixXd c = covariance_matrix(spec);
  Rng rng(2024);
  const int n = 20000;
  double sum0 = 0, sum05 = 0, sum0sq = 0, sumprod = 0;
  std::vector<double> prods;
  prods.reserve(n);
  for (int k = 0; k < n; ++k) {
    const auto s = sampler.sample(rng);
    const double a = s.lambda[0] - spec.mean;
    const double b = s.lambda[5] - spec.mean;
    sum0 += s.lambda[0];
    sum0sq += a * a;
    sumprod += a * b;
    prods.push_back(a * b);
    sum05 += s.lambda[5];
  }
  const double mean0 = sum0 / n;
  EXPECT_NEAR(mean0, spec.mean, 3.0 * spec.stddev / std::sqrt(n));
  const double cov = sumprod / n;
  double var_prod = 0;
  for (double p : prods) var_prod += (p - cov) * (p - cov);
  var_prod /= (n - 1);
  EXPECT_NEAR(cov, c(0, 5), 5.0 * std::sqrt(var_prod / n));
}

TEST(Grf, CoefficientOfVariation) {
  GrfSpec spec;
  spec.grid_size = 8;
  GrfSampler sampler(spec);
  Rng rng(11);
  double s = 0, s2 = 0;
  const int n = 40000;
  for (int k = 0; k < n; ++k) {
    const double v = sampler.sample(rng).kappa[27];
    s += v;
    s2 += v * v;
  }
  const double m = s / n;
  const double sd = std::sqrt(s2 / n - m * m);
  EXPECT_NEAR(sd / m, std::sqrt(std::exp(0.64) - 1.0), 0.03);
}

TEST(Bc, Scenarios) {
  Rng rng(3);
  const auto a = sample_bc(rng, BcScenario::A);
  EXPECT_EQ(a.as_vector(), Eigen::Vector4d(0, 0, 1, 1));
  const auto b = sample_bc(rng, BcScenario::B);
  EXPECT_EQ(b.as_vector(), Eigen::Vector4d(1, 1, 0, 0));
  for (int k = 0; k < 1000; ++k) {
    const auto u = sample_bc(rng);
    EXPECT_LE(u.as_vector().cwiseAbs().maxCoeff(), 0.5);
    const auto c = sample_bc(rng, BcScenario::C);
    EXPECT_EQ(c.a1, 0.0);
    EXPECT_EQ(c.a2, 0.0);
    const auto d = sample_bc(rng, BcScenario::D);
    EXPECT_GT(d.a1, 0.0);
    EXPECT_LT(d.a2, 0.0);
    EXPECT_EQ(d.a0, 0.0);
  }
  EXPECT_EQ(parse_bc_scenario("C"), BcScenario::C);
  EXPECT_EQ(to_string(BcScenario::D), "D");
}
