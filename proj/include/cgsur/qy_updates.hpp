#pragma once

// Updates of the Gaussian factor q(y) for virtual observables, and of the
// Gamma posteriors of learned constraint precisions.
//
// All vectors here live on the free fine nodes.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "cgsur/errors.hpp"
#include "cgsur/fem.hpp"
#include "cgsur/rng.hpp"
#include "cgsur/vobs.hpp"

namespace cgsur::inference {

/// q(y) = N(mean, Sigma) with Sigma = S - S G^T Xi^{-1} G S, Xi = G S G^T + Lambda^{-1}.
/// Sigma is never formed unless asked for.
struct ConstrainedGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd prior_var;   // S, diagonal
  Eigen::MatrixXd gamma;       // M x d
  Eigen::VectorXd alpha;       // M
  Eigen::VectorXd lambda_inv;  // M, zero for exact rows
  Eigen::MatrixXd A;           // G S G^T
  Eigen::LLT<Eigen::MatrixXd> xi;
  double jitter = 0.0;

  int rows() const { return static_cast<int>(gamma.rows()); }
  int dim() const { return static_cast<int>(mean.size()); }

  Eigen::VectorXd diag_cov() const {
    Eigen::VectorXd d = prior_var;
    if (rows() == 0) return d;
    const Eigen::MatrixXd z = xi.matrixL().solve(gamma);  // L^{-1} G
    for (int i = 0; i < dim(); ++i) d[i] -= prior_var[i] * prior_var[i] * z.col(i).squaredNorm();
    return d.cwiseMax(0.0);
  }

  Eigen::MatrixXd covariance() const {
    Eigen::MatrixXd s = prior_var.asDiagonal();
    if (rows() == 0) return s;
    const Eigen::MatrixXd gs = gamma * prior_var.asDiagonal();
    return s - gs.transpose() * xi.solve(gs);
  }

  Eigen::VectorXd residual() const { return gamma * mean - alpha; }

  /// G Sigma G^T = A - A Xi^{-1} A.
  Eigen::MatrixXd residual_cov() const {
    if (rows() == 0) return Eigen::MatrixXd(0, 0);
    return A - A * xi.solve(A);
  }

  double log_det_xi() const {
    if (rows() == 0) return 0.0;
    return 2.0 * Eigen::MatrixXd(xi.matrixL()).diagonal().array().log().sum();
  }

  double trace_A_xi_inv() const {
    if (rows() == 0) return 0.0;
    return xi.solve(A).trace();
  }
};

/// Conditions N(h_mean, diag(1 / sy_inv)) on Gamma y = alpha observed with
/// noise precision 1 / lambda_inv (0 entries are enforced exactly).
inline ConstrainedGaussian update_qy_closedform(const Eigen::Ref<const Eigen::MatrixXd>& gamma,
                                                const Eigen::Ref<const Eigen::VectorXd>& alpha,
                                                const Eigen::Ref<const Eigen::VectorXd>& lambda_inv,
                                                const Eigen::Ref<const Eigen::VectorXd>& sy_inv,
                                                const Eigen::Ref<const Eigen::VectorXd>& h_mean, int max_rows = 1024) {
  const Eigen::Index d = h_mean.size(), m = gamma.rows();
  if (sy_inv.size() != d || (m > 0 && gamma.cols() != d) || alpha.size() != m || lambda_inv.size() != m)
    throw DimensionMismatch("update_qy_closedform: inconsistent sizes");
  if (m > max_rows) throw InvalidSize("update_qy_closedform: too many constraints");
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(sy_inv[i] > 0.0)) throw NonPositiveVariance("update_qy_closedform: precision must be > 0");
  ConstrainedGaussian q;
  q.prior_var = sy_inv.cwiseInverse();
  q.gamma = gamma;
  q.alpha = alpha;
  q.lambda_inv = lambda_inv;
  q.mean = h_mean;
  if (m == 0) return q;
  const Eigen::MatrixXd gs = gamma * q.prior_var.asDiagonal();
  q.A = gs * gamma.transpose();
  Eigen::MatrixXd xi = q.A;
  xi.diagonal() += lambda_inv;
  q.xi.compute(xi);
  if (q.xi.info() != Eigen::Success) {
    const double scale = xi.diagonal().cwiseAbs().maxCoeff();
    if (!(scale > 0.0)) throw IllConditioned("update_qy_closedform: constraint Gram matrix is zero");
    for (double j = 1e-14 * scale; j <= 1e-8 * scale; j *= 10.0) {
      Eigen::MatrixXd xj = xi;
      xj.diagonal().array() += j;
      q.xi.compute(xj);
      if (q.xi.info() == Eigen::Success) {
        q.jitter = j;
        break;
      }
    }
    if (q.xi.info() != Eigen::Success) throw IllConditioned("update_qy_closedform: constraint Gram matrix is singular");
  }
  q.mean = h_mean + gs.transpose() * q.xi.solve(alpha - gamma * h_mean);
  return q;
}

/// Restricts the rows of a constraint set to the free fine nodes.
inline Eigen::MatrixXd free_columns(const fem::Mesh& mesh, const Eigen::MatrixXd& gamma) {
  Eigen::MatrixXd g(gamma.rows(), mesh.num_free());
  for (int i = 0; i < mesh.num_free(); ++i) g.col(i) = gamma.col(mesh.free_nodes[i]);
  return g;
}

/// Shape alpha = N M / 2 + alpha0, rate beta = sum(E|o|^2) / 2 + beta0.
inline vobs::GammaPosterior update_precision_gamma(const std::vector<double>& second_moments, int rows_per_query,
                                                   double alpha0 = 1e-6, double beta0 = 1e-6) {
  vobs::GammaPosterior g;
  double s = 0.0;
  for (double v : second_moments) {
    if (v < 0.0) throw input_error("update_precision_gamma: negative second moment");
    s += v;
  }
  g.alpha = 0.5 * static_cast<double>(second_moments.size()) * rows_per_query + alpha0;
  g.beta = 0.5 * s + beta0;
  return g;
}

/// E|G y - alpha|^2 under a Gaussian q(y) with diagonal or full covariance.
inline double residual_second_moment(const Eigen::Ref<const Eigen::MatrixXd>& gamma,
                                     const Eigen::Ref<const Eigen::VectorXd>& alpha,
                                     const Eigen::Ref<const Eigen::VectorXd>& mean,
                                     const Eigen::Ref<const Eigen::MatrixXd>& cov) {
  return (gamma * mean - alpha).squaredNorm() + (gamma * cov * gamma.transpose()).trace();
}

struct EnergyUpdateOptions {
  int block = 64;
  int max_sweeps = 500;
  double tol = 1e-11;
};

struct DiagGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  int sweeps = 0;
  std::vector<double> objective;  // after each sweep
};

/// Precision operator tau K_ff + diag(sy_inv) and linear term
/// tau (f_f - K_fc y_c) + sy_inv .* h for the energy observable.
inline std::pair<fem::SpMat, Eigen::VectorXd> energy_system(const vobs::EnergyObservable& obs,
                                                            const Eigen::Ref<const Eigen::VectorXd>& sy_inv,
                                                            const Eigen::Ref<const Eigen::VectorXd>& h_mean) {
  const fem::Mesh& mesh = *obs.system.mesh;
  const int nf = mesh.num_free();
  if (sy_inv.size() != nf || h_mean.size() != nf) throw DimensionMismatch("energy_system: sizes");
  std::vector<Eigen::Triplet<double>> trip;
  const fem::SpMat& K = obs.system.K;
  for (int col = 0; col < K.outerSize(); ++col) {
    const int fc = mesh.free_position[col];
    if (fc < 0) continue;
    for (fem::SpMat::InnerIterator it(K, col); it; ++it) {
      const int fr = mesh.free_position[it.row()];
      if (fr >= 0) trip.emplace_back(fr, fc, obs.tau * it.value());
    }
  }
  for (int i = 0; i < nf; ++i) trip.emplace_back(i, i, sy_inv[i]);
  fem::SpMat a(nf, nf);
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  Eigen::VectorXd b = obs.tau * obs.system.reduced_rhs() + sy_inv.cwiseProduct(h_mean);
  return {std::move(a), std::move(b)};
}

/// Diagonal Gaussian q(y) for the energy observable. The mean minimizes
/// 0.5 m^T A m - b^T m by randomized block Newton sweeps (each sweep visits a
/// random partition into blocks and solves every block subsystem exactly);
/// the variances are 1 / A_ii.
inline DiagGaussian update_qy_energy(const vobs::EnergyObservable& obs, const Eigen::Ref<const Eigen::VectorXd>& sy_inv,
                                     const Eigen::Ref<const Eigen::VectorXd>& h_mean,
                                     const Eigen::Ref<const Eigen::VectorXd>& mean_init, Rng& rng,
                                     const EnergyUpdateOptions& opt = {}) {
  if (!(obs.tau > 0.0)) throw input_error("update_qy_energy: tau must be > 0");
  auto [a, b] = energy_system(obs, sy_inv, h_mean);
  const int n = static_cast<int>(b.size());
  if (mean_init.size() != n) throw DimensionMismatch("update_qy_energy: initial mean size");
  DiagGaussian q;
  q.mean = mean_init;
  q.var = a.diagonal().cwiseInverse();
  if (n == 0) return q;
  auto objective = [&](const Eigen::VectorXd& m) { return 0.5 * m.dot(a * m) - b.dot(m); };
  const double bnorm = std::max(b.norm(), 1e-300);
  double prev = objective(q.mean);
  std::vector<int> perm(n), pos(n, -1);
  std::iota(perm.begin(), perm.end(), 0);
  const int bs = std::max(1, std::min(opt.block, n));
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int start = 0; start < n; start += bs) {
      const int len = std::min(bs, n - start);
      Eigen::MatrixXd abb = Eigen::MatrixXd::Zero(len, len);
      Eigen::VectorXd rb(len);
      for (int k = 0; k < len; ++k) pos[perm[start + k]] = k;
      for (int k = 0; k < len; ++k) {
        const int j = perm[start + k];
        double aj = 0.0;  // (A m)_j using symmetry: row j == column j
        for (fem::SpMat::InnerIterator it(a, j); it; ++it) {
          aj += it.value() * q.mean[it.row()];
          const int p = pos[it.row()];
          if (p >= 0) abb(p, k) = it.value();
        }
        rb[k] = b[j] - aj;
      }
      const Eigen::VectorXd delta = abb.llt().solve(rb);
      for (int k = 0; k < len; ++k) {
        q.mean[perm[start + k]] += delta[k];
        pos[perm[start + k]] = -1;
      }
    }
    ++q.sweeps;
    const double cur = objective(q.mean);
    q.objective.push_back(cur);
    if (!std::isfinite(cur) || cur > prev + 1e-12 * std::max(1.0, std::abs(prev)))
      throw Divergence("update_qy_energy: objective increased during a sweep");
    prev = cur;
    if ((b - a * q.mean).norm() <= opt.tol * bnorm) break;
  }
  return q;
}

}  // namespace cgsur::inference
