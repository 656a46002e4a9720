#pragma once

// Virtual observables: linear constraints Gamma y = alpha built from weighted
// residuals and subdomain flux balances of the fine FE system, and the
// potential-energy observable.
//
// Linear constraints use the applied-boundary form: the columns of Gamma at
// Dirichlet nodes are zero and the Dirichlet contribution is moved into alpha,
// so Gamma y - alpha only depends on the free entries of y.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cgsur/errors.hpp"
#include "cgsur/fem.hpp"
#include "cgsur/field.hpp"
#include "cgsur/rng.hpp"

namespace cgsur::vobs {

enum class Precision { Exact, Learned, Fixed };

inline std::string to_string(Precision p) {
  switch (p) {
    case Precision::Exact: return "exact";
    case Precision::Learned: return "learned";
    case Precision::Fixed: return "fixed";
  }
  return "exact";
}

inline Precision parse_precision(const std::string& s) {
  if (s == "exact") return Precision::Exact;
  if (s == "learned") return Precision::Learned;
  if (s == "fixed") return Precision::Fixed;
  throw input_error("unknown precision '" + s + "'");
}

/// Shape alpha_g, rate beta_g.
struct GammaPosterior {
  double alpha = 1e-6;
  double beta = 1e-6;
  double mean() const { return alpha / beta; }
};

struct LinearConstraintSet {
  std::string kind;          // cgr | randomized | flux
  Eigen::MatrixXd gamma;     // M x (d+1)^2
  Eigen::VectorXd alpha;     // M
  Precision precision = Precision::Exact;
  Eigen::VectorXd lambda;    // per-row precision when Fixed

  int rows() const { return static_cast<int>(gamma.rows()); }
};

struct EnergyObservable {
  fem::FemSystem system;
  double tau = 1.0;
};

/// Gamma y - alpha.
inline Eigen::VectorXd eval_residual(const LinearConstraintSet& cs, const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (y.size() != cs.gamma.cols()) throw DimensionMismatch("eval_residual: y size");
  return cs.gamma * y - cs.alpha;
}

namespace detail {

// Rows w^T (K y - f) in applied-boundary form for weights W (nodes x M).
inline LinearConstraintSet residual_rows(const fem::FemSystem& sys, const Eigen::MatrixXd& weights,
                                         std::string kind) {
  const fem::Mesh& mesh = *sys.mesh;
  Eigen::MatrixXd w = weights;
  for (int n : mesh.dirichlet_nodes) w.row(n).setZero();
  std::vector<int> keep;
  for (Eigen::Index m = 0; m < w.cols(); ++m)
    if (w.col(m).cwiseAbs().maxCoeff() > 0.0) keep.push_back(static_cast<int>(m));
  LinearConstraintSet cs;
  cs.kind = std::move(kind);
  const int nn = mesh.num_nodes();
  cs.gamma.resize(static_cast<Eigen::Index>(keep.size()), nn);
  cs.alpha.resize(static_cast<Eigen::Index>(keep.size()));
  const Eigen::VectorXd rhs = sys.load - sys.K * sys.lift;
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const Eigen::VectorXd wk = w.col(keep[r]);
    cs.gamma.row(static_cast<Eigen::Index>(r)) = (sys.K.transpose() * wk).transpose();
    cs.alpha[static_cast<Eigen::Index>(r)] = wk.dot(rhs);
  }
  for (int n : mesh.dirichlet_nodes) cs.gamma.col(n).setZero();
  cs.precision = Precision::Exact;
  return cs;
}

inline void check_nested(const fem::Mesh& fine, const fem::Mesh& coarse) {
  if (fine.d % coarse.d != 0) throw GridMismatch("fine grid must be a multiple of the coarse grid");
}

}  // namespace detail

/// Coarse-grained residuals: weights are the coarse hat functions interpolated
/// on the fine mesh.
inline LinearConstraintSet build_cgr(const fem::FemSystem& fine_sys, const fem::Mesh& coarse) {
  const fem::Mesh& fine = *fine_sys.mesh;
  detail::check_nested(fine, coarse);
  const Eigen::MatrixXd w = Eigen::MatrixXd(fem::prolongation(fine, coarse));
  return detail::residual_rows(fine_sys, w, "cgr");
}

/// Residuals weighted by Gaussian radial basis functions exp(-|s - s0|^2 / l^2)
/// with centres drawn uniformly on the unit square.
inline LinearConstraintSet build_randomized(const fem::FemSystem& fine_sys, int count, double scale, Rng& rng) {
  if (!(scale > 0.0)) throw input_error("build_randomized: scale must be > 0");
  if (count < 1) throw InvalidSize("build_randomized: count must be >= 1");
  const fem::Mesh& fine = *fine_sys.mesh;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd w(fine.num_nodes(), count);
  for (int m = 0; m < count; ++m) {
    const double c0 = u(rng);
    const double c1 = u(rng);
    for (int n = 0; n < fine.num_nodes(); ++n) {
      const double d0 = fine.nodes[n][0] - c0, d1 = fine.nodes[n][1] - c1;
      w(n, m) = std::exp(-(d0 * d0 + d1 * d1) / (scale * scale));
    }
  }
  return detail::residual_rows(fine_sys, w, "randomized");
}

/// Net outward flux -kappa grad(u) . n through the boundary of each coarse cell,
/// from the element-wise constant fine flux, balanced against the integrated
/// source. One row per coarse cell (row-major).
inline LinearConstraintSet build_flux(const fem::FemSystem& fine_sys, const fem::Mesh& coarse,
                                      const Eigen::Ref<const Eigen::VectorXd>& source) {
  const fem::Mesh& fine = *fine_sys.mesh;
  detail::check_nested(fine, coarse);
  if (source.size() != fine.num_pixels()) throw DimensionMismatch("build_flux: source size");
  const int r = fine.d / coarse.d;
  const int nc = coarse.num_pixels();
  LinearConstraintSet cs;
  cs.kind = "flux";
  cs.gamma = Eigen::MatrixXd::Zero(nc, fine.num_nodes());
  cs.alpha = Eigen::VectorXd::Zero(nc);
  const Eigen::VectorXd& kappa = fine_sys.kappa;

  // Outward flux through one edge of element e with outward normal n:
  // h * n . (-kappa / h * G y_e) = -kappa * n^T G y_e.
  auto add_edge = [&](int row, int e, double n0, double n1) {
    const auto& g = fine.ref_grad[e & 1];
    const double k = kappa[fine.pixel_of_element[e]];
    for (int a = 0; a < 3; ++a) cs.gamma(row, fine.elements[e][a]) += -k * (n0 * g(0, a) + n1 * g(1, a));
  };

  for (int cr = 0; cr < coarse.d; ++cr) {
    for (int cc = 0; cc < coarse.d; ++cc) {
      const int row = cr * coarse.d + cc;
      const int r0 = cr * r, c0 = cc * r;
      for (int i = 0; i < r; ++i) {
        const int bottom = r0 * fine.d + (c0 + i);           // bottom edge -> lower triangle
        const int top = (r0 + r - 1) * fine.d + (c0 + i);    // top edge -> upper triangle
        const int left = (r0 + i) * fine.d + c0;             // left edge -> upper triangle
        const int right = (r0 + i) * fine.d + (c0 + r - 1);  // right edge -> lower triangle
        add_edge(row, 2 * bottom, 0.0, -1.0);
        add_edge(row, 2 * top + 1, 0.0, 1.0);
        add_edge(row, 2 * left + 1, -1.0, 0.0);
        add_edge(row, 2 * right, 1.0, 0.0);
      }
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) cs.alpha[row] += source[(r0 + i) * fine.d + (c0 + j)] * fine.h * fine.h;
    }
  }
  cs.alpha -= cs.gamma * fine_sys.lift;
  for (int n : fine.dirichlet_nodes) cs.gamma.col(n).setZero();
  cs.precision = Precision::Learned;
  return cs;
}

inline LinearConstraintSet build_flux(const fem::FemSystem& fine_sys, const fem::Mesh& coarse, double source = 0.0) {
  return build_flux(fine_sys, coarse, Eigen::VectorXd::Constant(fine_sys.mesh->num_pixels(), source));
}

/// -tau * V(y); the y-independent normalization is dropped.
inline double energy_logpdf(const EnergyObservable& obs, const Eigen::Ref<const Eigen::VectorXd>& y) {
  return -obs.tau * fem::energy(obs.system, y);
}

inline Eigen::VectorXd energy_logpdf_gradient(const EnergyObservable& obs, const Eigen::Ref<const Eigen::VectorXd>& y) {
  return -obs.tau * (obs.system.K * y - obs.system.load);
}

/// Which constraint families make up a virtual observable at one query point.
enum class VoType { None, Cgr, Randomized, Flux, Hybrid, Energy };

inline std::string to_string(VoType t) {
  switch (t) {
    case VoType::None: return "none";
    case VoType::Cgr: return "cgr";
    case VoType::Randomized: return "randomized";
    case VoType::Flux: return "flux";
    case VoType::Hybrid: return "hybrid";
    case VoType::Energy: return "energy";
  }
  return "none";
}

inline VoType parse_vo_type(const std::string& s) {
  if (s == "none" || s.empty()) return VoType::None;
  if (s == "cgr") return VoType::Cgr;
  if (s == "randomized") return VoType::Randomized;
  if (s == "flux") return VoType::Flux;
  if (s == "hybrid") return VoType::Hybrid;
  if (s == "energy") return VoType::Energy;
  throw input_error("unknown virtual observable type '" + s + "'");
}

struct VoSpec {
  VoType type = VoType::Cgr;
  int randomized_count = 60;
  double randomized_scale = 0.1;
  double source = 0.0;
};

/// All virtual observables attached to one query input.
struct QueryObservables {
  std::vector<LinearConstraintSet> sets;
  bool energy = false;
  int total_rows() const {
    int m = 0;
    for (const auto& s : sets) m += s.rows();
    return m;
  }
};

/// Builds the constraint sets for one query. The fine system must already be
/// assembled for the query's conductivity and boundary data.
inline QueryObservables build_query(const VoSpec& spec, const fem::FemSystem& fine_sys, const fem::Mesh& coarse,
                                    Rng& rng) {
  QueryObservables q;
  switch (spec.type) {
    case VoType::None: break;
    case VoType::Cgr: q.sets.push_back(build_cgr(fine_sys, coarse)); break;
    case VoType::Randomized:
      q.sets.push_back(build_randomized(fine_sys, spec.randomized_count, spec.randomized_scale, rng));
      break;
    case VoType::Flux: q.sets.push_back(build_flux(fine_sys, coarse, spec.source)); break;
    case VoType::Hybrid:
      q.sets.push_back(build_cgr(fine_sys, coarse));
      q.sets.push_back(build_randomized(fine_sys, spec.randomized_count, spec.randomized_scale, rng));
      q.sets.push_back(build_flux(fine_sys, coarse, spec.source));
      break;
    case VoType::Energy: q.energy = true; break;
  }
  return q;
}

}  // namespace cgsur::vobs
