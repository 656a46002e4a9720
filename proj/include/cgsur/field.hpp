#pragma once

// Lognormal conductivity fields on the fine pixel grid and randomized
// Dirichlet boundary data.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "cgsur/errors.hpp"
#include "cgsur/rng.hpp"

namespace cgsur::field {

struct GrfSpec {
  int grid_size = 32;         // pixels per side
  double mean = 0.4;          // of log-conductivity
  double stddev = 0.8;        // of log-conductivity
  double length_scale = 0.15; // fraction of the unit square

  void validate() const {
    if (grid_size < 1) throw InvalidSize("GrfSpec: grid_size must be >= 1");
    if (!(stddev > 0.0)) throw input_error("GrfSpec: stddev must be > 0");
    if (!(length_scale > 0.0)) throw input_error("GrfSpec: length_scale must be > 0");
  }
};

struct FieldSample {
  Eigen::VectorXd lambda;  // log-conductivity at pixel centroids
  Eigen::VectorXd kappa;   // exp(lambda)

  static FieldSample from_log(Eigen::VectorXd log_conductivity) {
    FieldSample s;
    s.kappa = log_conductivity.array().exp().matrix();
    s.lambda = std::move(log_conductivity);
    return s;
  }
};

struct BoundaryCoeffs {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;

  Eigen::Vector4d as_vector() const { return {a0, a1, a2, a3}; }
  static BoundaryCoeffs from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
    return {v[0], v[1], v[2], v[3]};
  }
  bool finite() const {
    return std::isfinite(a0) && std::isfinite(a1) && std::isfinite(a2) && std::isfinite(a3);
  }
};

/// Boundary-condition families. UniformDefault draws every coefficient from
/// U[-0.5, 0.5]; A-D follow the cross-BC study layout.
enum class BcScenario { UniformDefault, A, B, C, D };

inline std::string_view to_string(BcScenario s) {
  switch (s) {
    case BcScenario::UniformDefault: return "uniform";
    case BcScenario::A: return "A";
    case BcScenario::B: return "B";
    case BcScenario::C: return "C";
    case BcScenario::D: return "D";
  }
  return "uniform";
}

inline BcScenario parse_bc_scenario(std::string_view s) {
  if (s == "uniform" || s == "default" || s.empty()) return BcScenario::UniformDefault;
  if (s == "A") return BcScenario::A;
  if (s == "B") return BcScenario::B;
  if (s == "C") return BcScenario::C;
  if (s == "D") return BcScenario::D;
  throw input_error("unknown BC scenario '" + std::string(s) + "'");
}

/// Centroid of pixel `index` in row-major order (row = index / d).
inline Eigen::Vector2d pixel_centroid(int index, int d) {
  const int row = index / d;
  const int col = index % d;
  return {(col + 0.5) / d, (row + 0.5) / d};
}

inline double se_kernel(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double stddev,
                        double length_scale) {
  return stddev * stddev * std::exp(-0.5 * (a - b).squaredNorm() / (length_scale * length_scale));
}

/// Dense squared-exponential covariance between all pixel centroids.
inline Eigen::MatrixXd covariance_matrix(const GrfSpec& spec) {
  spec.validate();
  const int d = spec.grid_size;
  const int n = d * d;
  Eigen::MatrixXd c(n, n);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d si = pixel_centroid(i, d);
    c(i, i) = spec.stddev * spec.stddev;
    for (int j = 0; j < i; ++j) {
      c(i, j) = c(j, i) = se_kernel(si, pixel_centroid(j, d), spec.stddev, spec.length_scale);
    }
  }
  return c;
}

/// Holds the Cholesky factor of the centroid covariance so that many fields
/// can be drawn from one factorization. Immutable after construction.
class GrfSampler {
 public:
  explicit GrfSampler(const GrfSpec& spec) : spec_(spec) {
    Eigen::MatrixXd c = covariance_matrix(spec);
    const double var = spec.stddev * spec.stddev;
    const Eigen::Index n = c.rows();
    for (double jitter = 1e-10 * var; jitter <= 1e-6 * var * (1.0 + 1e-12); jitter *= 2.0) {
      Eigen::MatrixXd cj = c;
      cj.diagonal().array() += jitter;
      Eigen::LLT<Eigen::MatrixXd> llt(cj);
      if (llt.info() == Eigen::Success) {
        factor_ = llt.matrixL();
        jitter_ = jitter;
        return;
      }
    }
    throw FactorizationError("GrfSampler: covariance Cholesky failed at maximum jitter (n=" +
                             std::to_string(n) + ")");
  }

  const GrfSpec& spec() const { return spec_; }
  double jitter() const { return jitter_; }
  const Eigen::MatrixXd& factor() const { return factor_; }

  FieldSample sample(Rng& rng) const {
    const Eigen::Index n = factor_.rows();
    Eigen::VectorXd eps(n);
    for (Eigen::Index i = 0; i < n; ++i) eps[i] = standard_normal(rng);
    Eigen::VectorXd lambda = factor_.triangularView<Eigen::Lower>() * eps;
    lambda.array() += spec_.mean;
    return FieldSample::from_log(std::move(lambda));
  }

 private:
  GrfSpec spec_;
  Eigen::MatrixXd factor_;
  double jitter_ = 0.0;
};

inline FieldSample sample_grf(const GrfSpec& spec, std::uint64_t seed) {
  GrfSampler sampler(spec);
  Rng rng(seed);
  return sampler.sample(rng);
}

namespace detail {
inline double beta25(Rng& rng) {
  std::gamma_distribution<double> ga(2.0, 1.0), gb(5.0, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}
}  // namespace detail

inline BoundaryCoeffs sample_bc(Rng& rng, BcScenario scenario = BcScenario::UniformDefault) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  switch (scenario) {
    case BcScenario::A: return {0.0, 0.0, 1.0, 1.0};
    case BcScenario::B: return {1.0, 1.0, 0.0, 0.0};
    case BcScenario::C: {
      const double a0 = u(rng);
      const double a3 = u(rng);
      return {a0, 0.0, 0.0, a3};
    }
    case BcScenario::D: {
      const double a1 = detail::beta25(rng);
      const double a2 = -detail::beta25(rng);
      return {0.0, a1, a2, 0.0};
    }
    case BcScenario::UniformDefault:
    default: {
      BoundaryCoeffs bc;
      bc.a0 = u(rng);
      bc.a1 = u(rng);
      bc.a2 = u(rng);
      bc.a3 = u(rng);
      return bc;
    }
  }
}

}  // namespace cgsur::field
