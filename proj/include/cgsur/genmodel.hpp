#pragma once

// Generative surrogate p(x, X, y | z):
//   z ~ N(0, I)
//   x | z ~ N(f(z), diag v_x(z))          decoder network
//   X | z ~ N(W_g z + b_g, diag S_X)      X is the log conductivity of the coarse model
//   y | X ~ N(w_h .* (P Y(X)) + b_h, diag S_y)
// where Y(X) solves the coarse FE problem with conductivity exp(X) and the
// boundary data of the datum, and P is the nodal prolongation to the fine mesh.
//
// y is modelled on the free (non-Dirichlet) fine nodes. Dirichlet entries are
// known from the boundary data and are filled in when full nodal vectors are
// requested.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "cgsur/approximators.hpp"
#include "cgsur/errors.hpp"
#include "cgsur/fem.hpp"
#include "cgsur/field.hpp"
#include "cgsur/rng.hpp"

namespace cgsur::model {

inline constexpr double kMinVar = 1e-8;
inline constexpr double kMaxVar = 1e4;
inline const double kLogMinVar = std::log(kMinVar);
inline const double kLogMaxVar = std::log(kMaxVar);
inline const double kLog2Pi = std::log(2.0 * M_PI);

inline double clamp_logvar(double r) { return std::min(std::max(r, kLogMinVar), kLogMaxVar); }
inline bool logvar_in_range(double r) { return r > kLogMinVar && r < kLogMaxVar; }

inline Eigen::VectorXd variance_from_log(const Eigen::Ref<const Eigen::VectorXd>& raw) {
  Eigen::VectorXd v(raw.size());
  for (Eigen::Index i = 0; i < raw.size(); ++i) v[i] = std::exp(clamp_logvar(raw[i]));
  return v;
}

struct ModelDims {
  int fine_grid = 32;
  int coarse_grid = 4;
  int dim_z = 8;
  std::vector<int> hidden{128, 256};
  nn::Activation activation = nn::Activation::Tanh;

  int dim_x() const { return fine_grid * fine_grid; }
  int dim_X() const { return coarse_grid * coarse_grid; }

  static int default_dim_z(int coarse_grid) {
    return std::max(1, static_cast<int>(std::lround(0.5 * coarse_grid * coarse_grid)));
  }

  void validate() const {
    if (fine_grid < 1 || coarse_grid < 1) throw InvalidSize("grid sizes must be >= 1");
    if (dim_z < 1) throw InvalidSize("dim_z must be >= 1");
    if (fine_grid % coarse_grid != 0) throw GridMismatch("fine grid must be a multiple of the coarse grid");
  }
};

/// Structure and flat parameter vector theta of the generative model.
///
/// theta layout: [decoder | W_g (col-major) | b_g | log S_X | w_h | b_h | log S_y]
class ModelParams {
 public:
  ModelParams() = default;

  explicit ModelParams(const ModelDims& dims) : dims_(dims) {
    dims_.validate();
    fine_ = fem::build_mesh(dims_.fine_grid);
    coarse_ = fem::build_mesh(dims_.coarse_grid);
    const fem::SpMat p = fem::prolongation(*fine_, *coarse_);
    std::vector<Eigen::Triplet<double>> trip;
    const fem::SpMat pr = fem::SpMat(p.transpose());  // column n of pr is fine node n
    for (int i = 0; i < fine_->num_free(); ++i)
      for (fem::SpMat::InnerIterator it(pr, fine_->free_nodes[i]); it; ++it) trip.emplace_back(i, it.row(), it.value());
    prolong_free_.resize(fine_->num_free(), coarse_->num_nodes());
    prolong_free_.setFromTriplets(trip.begin(), trip.end());
    prolong_free_.makeCompressed();

    decoder_ = nn::Network(nn::Architecture::mlp(dims_.dim_z, dims_.hidden, 2 * dims_.dim_x(), dims_.activation));
    const int dz = dims_.dim_z, dX = dims_.dim_X(), dy = dim_y();
    off_dec_ = 0;
    off_wg_ = decoder_.num_params();
    off_bg_ = off_wg_ + dX * dz;
    off_sx_ = off_bg_ + dX;
    off_wh_ = off_sx_ + dX;
    off_bh_ = off_wh_ + dy;
    off_sy_ = off_bh_ + dy;
    theta_ = Eigen::VectorXd::Zero(off_sy_ + dy);
  }

  const ModelDims& dims() const { return dims_; }
  const fem::MeshPtr& fine_mesh() const { return fine_; }
  const fem::MeshPtr& coarse_mesh() const { return coarse_; }
  const nn::Network& decoder() const { return decoder_; }
  /// Prolongation restricted to the free fine nodes (dim_y x coarse nodes).
  const fem::SpMat& prolongation_free() const { return prolong_free_; }

  int dim_z() const { return dims_.dim_z; }
  int dim_x() const { return dims_.dim_x(); }
  int dim_X() const { return dims_.dim_X(); }
  int dim_y() const { return fine_->num_free(); }
  int num_params() const { return static_cast<int>(theta_.size()); }

  Eigen::VectorXd& theta() { return theta_; }
  const Eigen::VectorXd& theta() const { return theta_; }

#define CGSUR_SEGMENT(name, off, len)                                                    \
  auto name() { return theta_.segment(off, len); }                                     \
  auto name() const { return theta_.segment(off, len); }                               \
  template <class V>                                                                   \
  auto name##_in(V& v) const {                                                         \
    return v.segment(off, len);                                                        \
  }
  CGSUR_SEGMENT(decoder_params, off_dec_, decoder_.num_params())
  CGSUR_SEGMENT(b_g, off_bg_, dim_X())
  CGSUR_SEGMENT(log_S_X, off_sx_, dim_X())
  CGSUR_SEGMENT(w_h, off_wh_, dim_y())
  CGSUR_SEGMENT(b_h, off_bh_, dim_y())
  CGSUR_SEGMENT(log_S_y, off_sy_, dim_y())
#undef CGSUR_SEGMENT

  Eigen::Map<Eigen::MatrixXd> W_g() { return {theta_.data() + off_wg_, dim_X(), dim_z()}; }
  Eigen::Map<const Eigen::MatrixXd> W_g() const { return {theta_.data() + off_wg_, dim_X(), dim_z()}; }
  Eigen::Map<Eigen::MatrixXd> W_g_in(Eigen::VectorXd& v) const { return {v.data() + off_wg_, dim_X(), dim_z()}; }

  Eigen::VectorXd S_X() const { return variance_from_log(log_S_X()); }
  Eigen::VectorXd S_y() const { return variance_from_log(log_S_y()); }

  /// Default initialization: Glorot decoder, small W_g, unit output scale.
  void initialize(Rng& rng, double x_mean = 0.0, double x_var = 1.0, double X_mean = 0.0,
                  double S_X0 = 0.1, double S_y0 = 1e-2, double wg_scale = 0.01) {
    decoder_.initialize(decoder_params(), rng);
    auto out_bias = decoder_params().tail(2 * dim_x());
    out_bias.head(dim_x()).setConstant(x_mean);
    out_bias.tail(dim_x()).setConstant(std::log(x_var));
    std::normal_distribution<double> n(0.0, wg_scale);
    for (int i = 0; i < dim_X() * dim_z(); ++i) theta_[off_wg_ + i] = n(rng);
    b_g().setConstant(X_mean);
    log_S_X().setConstant(std::log(S_X0));
    w_h().setOnes();
    b_h().setZero();
    log_S_y().setConstant(std::log(S_y0));
  }

 private:
  ModelDims dims_;
  fem::MeshPtr fine_, coarse_;
  fem::SpMat prolong_free_;
  nn::Network decoder_;
  Eigen::VectorXd theta_;
  int off_dec_ = 0, off_wg_ = 0, off_bg_ = 0, off_sx_ = 0, off_wh_ = 0, off_bh_ = 0, off_sy_ = 0;
};

// ----- prior -------------------------------------------------------------

inline double prior_logpdf(const Eigen::Ref<const Eigen::VectorXd>& z) {
  return -0.5 * z.squaredNorm() - 0.5 * static_cast<double>(z.size()) * kLog2Pi;
}

inline Eigen::VectorXd prior_sample(int dim_z, Rng& rng) {
  Eigen::VectorXd z(dim_z);
  for (int i = 0; i < dim_z; ++i) z[i] = standard_normal(rng);
  return z;
}

// ----- diagonal Gaussians -------------------------------------------------

inline double diag_gaussian_logpdf(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const Eigen::Ref<const Eigen::VectorXd>& mean,
                                   const Eigen::Ref<const Eigen::VectorXd>& var) {
  if (x.size() != mean.size() || x.size() != var.size()) throw DimensionMismatch("diag_gaussian_logpdf");
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!(var[i] > 0.0)) throw NonPositiveVariance("diag_gaussian_logpdf: variance must be > 0");
    const double r = x[i] - mean[i];
    s += r * r / var[i] + std::log(var[i]) + kLog2Pi;
  }
  return -0.5 * s;
}

// ----- decoder ------------------------------------------------------------

struct Decoded {
  Eigen::MatrixXd mean;    // dim_x x batch
  Eigen::MatrixXd raw;     // unclamped log-variance
  Eigen::MatrixXd var;     // clamped variance
  nn::Tape tape;
};

inline Decoded decode_x_batch(const ModelParams& m, const Eigen::MatrixXd& z) {
  Decoded d;
  d.tape = m.decoder().forward(m.decoder_params(), z);
  const Eigen::MatrixXd& out = d.tape.output();
  d.mean = out.topRows(m.dim_x());
  d.raw = out.bottomRows(m.dim_x());
  d.var = d.raw.unaryExpr([](double r) { return std::exp(clamp_logvar(r)); });
  return d;
}

struct DecodedX {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

inline DecodedX decode_x(const Eigen::Ref<const Eigen::VectorXd>& z, const ModelParams& m) {
  if (!z.allFinite()) throw input_error("decode_x: z must be finite");
  auto d = decode_x_batch(m, Eigen::MatrixXd(z));
  return {d.mean.col(0), d.var.col(0)};
}

/// log N(x | mean, diag var) per column, plus (optionally) the cotangents
/// with respect to the decoder's mean and raw log-variance outputs.
inline double x_loglik_and_cotangent(const Eigen::Ref<const Eigen::VectorXd>& x, const Decoded& d, int col,
                                     double weight, Eigen::MatrixXd* cot) {
  double s = 0.0;
  const int n = static_cast<int>(x.size());
  for (int i = 0; i < n; ++i) {
    const double v = d.var(i, col);
    const double r = x[i] - d.mean(i, col);
    const double q = r * r / v;
    s += q + std::log(v) + kLog2Pi;
    if (cot) {
      (*cot)(i, col) += weight * r / v;
      if (logvar_in_range(d.raw(i, col))) (*cot)(n + i, col) += weight * 0.5 * (q - 1.0);
    }
  }
  return -0.5 * s;
}

// ----- coarse map -----------------------------------------------------------

struct CoarseMapped {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

inline CoarseMapped coarse_map(const Eigen::Ref<const Eigen::VectorXd>& z, const ModelParams& m) {
  if (z.size() != m.dim_z()) throw DimensionMismatch("coarse_map: z size");
  return {m.W_g() * z + m.b_g(), m.S_X()};
}

// ----- coarse-grained model -----------------------------------------------

struct CgmResult {
  fem::FemSystem system;
  fem::Solution solution;
  const Eigen::VectorXd& Y() const { return solution.y; }
};

/// Solves the coarse model with conductivity exp(X) and the datum's boundary data.
inline CgmResult cgm_forward(const ModelParams& m, const Eigen::Ref<const Eigen::VectorXd>& X,
                             const field::BoundaryCoeffs& bc) {
  if (X.size() != m.dim_X()) throw DimensionMismatch("cgm_forward: X size");
  CgmResult r;
  const Eigen::VectorXd kappa = X.array().exp().matrix();
  r.system = fem::assemble(m.coarse_mesh(), kappa, bc, 0.0);
  r.solution = fem::solve(r.system);
  return r;
}

/// Gradient with respect to X of cotangent^T Y(X).
inline Eigen::VectorXd cgm_vjp(const CgmResult& r, const Eigen::Ref<const Eigen::VectorXd>& cotangent) {
  return fem::solve_vjp(r.system, r.solution, cotangent).cwiseProduct(r.system.kappa);
}

// ----- output map -----------------------------------------------------------

struct OutputMapped {
  Eigen::VectorXd prolonged;  // P Y on free fine nodes
  Eigen::VectorXd mean;       // w_h .* P Y + b_h
  Eigen::VectorXd var;        // S_y
};

inline OutputMapped output_map(const Eigen::Ref<const Eigen::VectorXd>& Y, const ModelParams& m) {
  if (Y.size() != m.coarse_mesh()->num_nodes()) throw DimensionMismatch("output_map: Y size");
  OutputMapped o;
  o.prolonged = m.prolongation_free() * Y;
  o.mean = m.w_h().cwiseProduct(o.prolonged) + m.b_h();
  o.var = m.S_y();
  return o;
}

/// Embeds a vector over free fine nodes into a full nodal vector whose
/// Dirichlet entries come from the boundary data.
inline Eigen::VectorXd to_full(const fem::Mesh& fine, const Eigen::Ref<const Eigen::VectorXd>& free_values,
                               const field::BoundaryCoeffs& bc) {
  Eigen::VectorXd y = fem::dirichlet_lift(fine, bc);
  for (int i = 0; i < fine.num_free(); ++i) y[fine.free_nodes[i]] = free_values[i];
  return y;
}

inline Eigen::VectorXd to_free(const fem::Mesh& fine, const Eigen::Ref<const Eigen::VectorXd>& full) {
  if (full.size() != fine.num_nodes()) throw DimensionMismatch("to_free: nodal vector size");
  Eigen::VectorXd f(fine.num_free());
  for (int i = 0; i < fine.num_free(); ++i) f[i] = full[fine.free_nodes[i]];
  return f;
}

/// Output map over all fine nodes. Dirichlet entries carry the prescribed
/// value and the variance floor.
inline OutputMapped output_map_full(const Eigen::Ref<const Eigen::VectorXd>& Y, const ModelParams& m,
                                    const field::BoundaryCoeffs& bc) {
  OutputMapped f = output_map(Y, m);
  const auto& fine = *m.fine_mesh();
  OutputMapped o;
  o.prolonged = to_full(fine, f.prolonged, bc);
  o.mean = to_full(fine, f.mean, bc);
  o.var = Eigen::VectorXd::Constant(fine.num_nodes(), kMinVar);
  for (int i = 0; i < fine.num_free(); ++i) o.var[fine.free_nodes[i]] = f.var[i];
  return o;
}

// ----- ancestral sampling -------------------------------------------------

struct JointSample {
  Eigen::VectorXd z, x, X, Y, y;  // y over free fine nodes
};

inline JointSample sample_joint(const ModelParams& m, const field::BoundaryCoeffs& bc, Rng& rng) {
  JointSample s;
  s.z = prior_sample(m.dim_z(), rng);
  const DecodedX dx = decode_x(s.z, m);
  s.x.resize(m.dim_x());
  for (int i = 0; i < m.dim_x(); ++i) s.x[i] = dx.mean[i] + std::sqrt(dx.var[i]) * standard_normal(rng);
  const CoarseMapped cm = coarse_map(s.z, m);
  s.X.resize(m.dim_X());
  for (int i = 0; i < m.dim_X(); ++i) s.X[i] = cm.mean[i] + std::sqrt(cm.var[i]) * standard_normal(rng);
  s.Y = cgm_forward(m, s.X, bc).Y();
  const OutputMapped om = output_map(s.Y, m);
  s.y.resize(m.dim_y());
  for (int i = 0; i < m.dim_y(); ++i) s.y[i] = om.mean[i] + std::sqrt(om.var[i]) * standard_normal(rng);
  return s;
}

/// log p(x, X, y | z) + log p(z) for a joint sample.
inline double joint_logpdf(const ModelParams& m, const JointSample& s, const field::BoundaryCoeffs& bc) {
  const DecodedX dx = decode_x(s.z, m);
  const CoarseMapped cm = coarse_map(s.z, m);
  const OutputMapped om = output_map(cgm_forward(m, s.X, bc).Y(), m);
  return prior_logpdf(s.z) + diag_gaussian_logpdf(s.x, dx.mean, dx.var) +
         diag_gaussian_logpdf(s.X, cm.mean, cm.var) + diag_gaussian_logpdf(s.y, om.mean, om.var);
}

}  // namespace cgsur::model
