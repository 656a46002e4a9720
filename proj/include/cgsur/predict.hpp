#pragma once

// Predictions for new inputs from a trained surrogate, accuracy metrics and
// forward uncertainty propagation.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "cgsur/elbo.hpp"
#include "cgsur/errors.hpp"
#include "cgsur/field.hpp"
#include "cgsur/genmodel.hpp"
#include "cgsur/rng.hpp"
#include "cgsur/train.hpp"

namespace cgsur::predict {

using inference::VariationalState;

enum class InferMode { Amortized, Optimize };

struct InferOptions {
  InferMode mode = InferMode::Optimize;
  int steps = 300;
  double lr = 0.05;
  int mc_samples = 1;
  double init_logvar = std::log(0.1);
  std::uint64_t seed = 0;
};

/// Diagonal Gaussians q*(z) for a set of inputs, one column per input.
struct LatentPosterior {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd logvar;
  Eigen::VectorXd mean_of(int i) const { return mean.col(i); }
};

/// E_q[log p(x | z)] - KL(q(z) || p(z)) per column with fixed noise, and the
/// gradients with respect to the q(z) parameters.
inline Eigen::VectorXd unlabeled_objective(const model::ModelParams& m, const Eigen::MatrixXd& x,
                                           const Eigen::MatrixXd& mu, const Eigen::MatrixXd& lv,
                                           const std::vector<Eigen::MatrixXd>& eps, Eigen::MatrixXd* g_mu,
                                           Eigen::MatrixXd* g_lv) {
  const int n = static_cast<int>(x.cols()), dz = m.dim_z();
  const int K = static_cast<int>(eps.size());
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  const Eigen::MatrixXd sd = (0.5 * lv.array()).exp();
  Eigen::MatrixXd zs(dz, n * K);
  for (int k = 0; k < K; ++k)
    zs.middleCols(k * n, n) = mu + sd.cwiseProduct(eps[k]);
  model::Decoded dec = model::decode_x_batch(m, zs);
  Eigen::MatrixXd cot = Eigen::MatrixXd::Zero(2 * m.dim_x(), n * K);
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < n; ++i)
      f[i] += model::x_loglik_and_cotangent(x.col(i), dec, k * n + i, 1.0 / K, g_mu ? &cot : nullptr) / K;
  for (int i = 0; i < n; ++i) f[i] += inference::neg_kl_standard(mu.col(i), lv.col(i));
  if (g_mu) {
    Eigen::VectorXd dummy = Eigen::VectorXd::Zero(m.decoder().num_params());
    const Eigen::MatrixXd gz = m.decoder().backward(m.decoder_params(), dec.tape, cot, dummy);
    *g_mu = -mu;
    *g_lv = -0.5 * (lv.array().exp() - 1.0).matrix();
    for (int k = 0; k < K; ++k) {
      const Eigen::MatrixXd gk = gz.middleCols(k * n, n);
      *g_mu += gk;
      *g_lv += (gk.array() * eps[k].array() * 0.5 * sd.array()).matrix();
    }
  }
  return f;
}

/// q*(z | x): the amortized encoder output, or the maximizer of the unlabeled
/// ELBO found by Adam (started from the encoder output when available).
/// Only the decoder is evaluated; no PDE solves are involved.
inline LatentPosterior infer_z(const VariationalState& s, const std::vector<Eigen::VectorXd>& xs,
                               const InferOptions& opt) {
  const model::ModelParams& m = s.model;
  const int n = static_cast<int>(xs.size()), dz = m.dim_z();
  Eigen::MatrixXd x(m.dim_x(), n);
  for (int i = 0; i < n; ++i) {
    if (xs[i].size() != m.dim_x()) throw DimensionMismatch("infer_z: input size");
    x.col(i) = xs[i];
  }
  LatentPosterior q;
  if (s.amortized) {
    const Eigen::MatrixXd out = s.encoder.evaluate(s.phi, x);
    q.mean = out.topRows(dz);
    q.logvar = out.bottomRows(dz);
  } else {
    if (opt.mode == InferMode::Amortized) throw input_error("infer_z: state has no amortized encoder");
    q.mean = Eigen::MatrixXd::Zero(dz, n);
    q.logvar = Eigen::MatrixXd::Constant(dz, n, opt.init_logvar);
  }
  if (opt.mode == InferMode::Amortized || n == 0) return q;

  Rng rng = make_rng(opt.seed, stream::evaluation);
  Eigen::VectorXd params(2 * dz * n);
  inference::Adam adam(params.size());
  for (int step = 0; step < opt.steps; ++step) {
    std::vector<Eigen::MatrixXd> eps(opt.mc_samples, Eigen::MatrixXd(dz, n));
    for (auto& e : eps)
      for (int k = 0; k < e.size(); ++k) e.data()[k] = standard_normal(rng);
    Eigen::MatrixXd gm, gl;
    unlabeled_objective(m, x, q.mean, q.logvar, eps, &gm, &gl);
    params << q.mean.reshaped(), q.logvar.reshaped();
    Eigen::VectorXd grad(params.size());
    grad << gm.reshaped(), gl.reshaped();
    inference::AdamOptions ao;
    // cosine decay to a tenth of the initial rate reduces the final noise
    const double t = static_cast<double>(step) / std::max(1, opt.steps - 1);
    ao.lr = opt.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * t)));
    adam.ascend(params, grad, ao);
    q.mean = params.head(dz * n).reshaped(dz, n);
    q.logvar = params.tail(dz * n).reshaped(dz, n);
  }
  return q;
}

struct PredictiveSamples {
  Eigen::MatrixXd samples;  // full nodal vectors, one column per sample
  Eigen::VectorXd mean;
  Eigen::VectorXd var;      // zero on Dirichlet nodes
};

/// z ~ q*(z), X ~ p(X | z), Y = CGM(X), y ~ N(h(Y), S_y): K coarse solves.
inline PredictiveSamples predictive_posterior(const VariationalState& s, const Eigen::Ref<const Eigen::VectorXd>& qz_mean,
                                              const Eigen::Ref<const Eigen::VectorXd>& qz_logvar,
                                              const field::BoundaryCoeffs& bc, int K, Rng& rng) {
  if (K < 1) throw input_error("predictive_posterior: K must be >= 1");
  const model::ModelParams& m = s.model;
  const fem::Mesh& fine = *m.fine_mesh();
  const int dz = m.dim_z(), dX = m.dim_X(), dy = m.dim_y();
  const Eigen::VectorXd sd_z = (0.5 * qz_logvar.array()).exp();
  const Eigen::VectorXd sd_X = m.S_X().cwiseSqrt();
  const Eigen::VectorXd sd_y = m.S_y().cwiseSqrt();
  PredictiveSamples out;
  out.samples.resize(fine.num_nodes(), K);
  const Eigen::VectorXd lift = fem::dirichlet_lift(fine, bc);
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd z(dz);
    for (int j = 0; j < dz; ++j) z[j] = qz_mean[j] + sd_z[j] * standard_normal(rng);
    Eigen::VectorXd X = m.W_g() * z + m.b_g();
    for (int j = 0; j < dX; ++j) X[j] += sd_X[j] * standard_normal(rng);
    const Eigen::VectorXd h = model::output_map(model::cgm_forward(m, X, bc).Y(), m).mean;
    Eigen::VectorXd y = lift;
    for (int j = 0; j < dy; ++j) y[fine.free_nodes[j]] = h[j] + sd_y[j] * standard_normal(rng);
    out.samples.col(k) = y;
  }
  out.mean = out.samples.rowwise().mean();
  if (K >= 2) {
    out.var = (out.samples.colwise() - out.mean).rowwise().squaredNorm() / (K - 1);
  } else {
    out.var = Eigen::VectorXd::Zero(fine.num_nodes());
  }
  for (int n : fine.dirichlet_nodes) {
    out.mean[n] = lift[n];
    out.var[n] = 0.0;
  }
  return out;
}

// ----- metrics ----------------------------------------------------------------

/// 1 - sum |y_i - mu_i|^2 / sum |y_i - ybar|^2.
inline double r2_score(const std::vector<Eigen::VectorXd>& y, const std::vector<Eigen::VectorXd>& mu) {
  if (y.size() != mu.size()) throw DimensionMismatch("r2_score: sizes");
  if (y.size() < 2) throw DegenerateValidation("r2_score: need at least two validation points");
  Eigen::VectorXd ybar = Eigen::VectorXd::Zero(y[0].size());
  for (const auto& v : y) ybar += v;
  ybar /= static_cast<double>(y.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i].size() != ybar.size() || mu[i].size() != ybar.size()) throw DimensionMismatch("r2_score: vector sizes");
    num += (y[i] - mu[i]).squaredNorm();
    den += (y[i] - ybar).squaredNorm();
  }
  if (!(den > 0.0)) throw DegenerateValidation("r2_score: validation outputs have zero spread");
  return 1.0 - num / den;
}

/// Average log N(y_i | mu_i, diag var_i).
inline double logscore(const std::vector<Eigen::VectorXd>& y, const std::vector<Eigen::VectorXd>& mu,
                       const std::vector<Eigen::VectorXd>& var) {
  if (y.size() != mu.size() || y.size() != var.size()) throw DimensionMismatch("logscore: sizes");
  if (y.empty()) throw DegenerateValidation("logscore: empty validation set");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += model::diag_gaussian_logpdf(y[i], mu[i], var[i]);
  return s / static_cast<double>(y.size());
}

// ----- densities of scalar samples ---------------------------------------------

struct Histogram {
  double lo = 0.0, hi = 1.0;
  std::vector<double> density;  // per bin, integrates to 1
};

inline Histogram histogram(const std::vector<double>& v, double lo, double hi, int bins = 64) {
  if (bins < 1) throw InvalidSize("histogram: bins must be >= 1");
  Histogram h;
  h.lo = lo;
  h.hi = hi > lo ? hi : lo + 1.0;
  h.density.assign(bins, 0.0);
  const double w = (h.hi - h.lo) / bins;
  for (double x : v) {
    int b = static_cast<int>(std::floor((x - h.lo) / w));
    if (b < 0 || b > bins) continue;
    h.density[std::min(b, bins - 1)] += 1.0;
  }
  if (!v.empty())
    for (double& d : h.density) d /= (static_cast<double>(v.size()) * w);
  return h;
}

inline double silverman_bandwidth(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  if (n < 2) return 1.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / (n - 1));
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  auto quantile = [&](double q) {
    const double pos = q * (n - 1);
    const std::size_t i = static_cast<std::size_t>(std::floor(pos));
    const double f = pos - i;
    return i + 1 < s.size() ? s[i] * (1 - f) + s[i + 1] * f : s[i];
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double a = std::min(sd, iqr / 1.34);
  if (!(a > 0.0)) a = sd > 0.0 ? sd : 1.0;
  return 0.9 * a * std::pow(n, -0.2);
}

/// Gaussian kernel density on a grid.
inline std::vector<double> kde(const std::vector<double>& v, const std::vector<double>& grid, double bandwidth) {
  std::vector<double> d(grid.size(), 0.0);
  if (v.empty()) return d;
  const double c = 1.0 / (static_cast<double>(v.size()) * bandwidth * std::sqrt(2.0 * M_PI));
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0.0;
    for (double x : v) {
      const double u = (grid[g] - x) / bandwidth;
      s += std::exp(-0.5 * u * u);
    }
    d[g] = c * s;
  }
  return d;
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw input_error("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  return d;
}

// ----- batch prediction and uncertainty propagation -------------------------

struct PredictOptions {
  int samples = 256;
  InferOptions infer;
  std::uint64_t seed = 0;
};

struct BatchPrediction {
  std::vector<Eigen::VectorXd> mean;  // full nodal vectors
  std::vector<Eigen::VectorXd> var;
};

inline BatchPrediction predict_batch(const VariationalState& s, const std::vector<Eigen::VectorXd>& xs,
                                     const std::vector<field::BoundaryCoeffs>& bcs, const PredictOptions& opt) {
  if (xs.size() != bcs.size()) throw DimensionMismatch("predict_batch: sizes");
  const LatentPosterior q = infer_z(s, xs, opt.infer);
  BatchPrediction out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Rng rng = make_rng(split_seed(opt.seed, stream::evaluation), i);
    const auto p = predictive_posterior(s, q.mean.col(i), q.logvar.col(i), bcs[i], opt.samples, rng);
    out.mean.push_back(p.mean);
    out.var.push_back(p.var);
  }
  return out;
}

struct Metrics {
  double r2 = 0.0;
  double ls = 0.0;
};

/// R2 and LS over the free (non-Dirichlet) fine nodes.
inline Metrics evaluate_metrics(const fem::Mesh& fine, const std::vector<Eigen::VectorXd>& y_true,
                                const BatchPrediction& pred) {
  std::vector<Eigen::VectorXd> y, mu, var;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    y.push_back(model::to_free(fine, y_true[i]));
    mu.push_back(model::to_free(fine, pred.mean[i]));
    var.push_back(model::to_free(fine, pred.var[i]));
  }
  return {r2_score(y, mu), logscore(y, mu, var)};
}

struct UqResult {
  std::vector<double> surrogate;
  std::vector<double> reference;  // empty unless requested
  Histogram hist_surrogate, hist_reference;
  std::vector<double> grid, kde_surrogate, kde_reference;
  double ks = std::numeric_limits<double>::quiet_NaN();
};

struct UqOptions {
  int samples = 1024;
  bool reference = true;
  int bins = 64;
  int grid_points = 200;
  InferOptions infer;
  field::BcScenario bc_scenario = field::BcScenario::UniformDefault;
  std::uint64_t seed = 0;
  int chunk = 256;  // inputs per batched latent inference
};

/// Pushes p(x) (and the boundary-data distribution) through the surrogate and
/// records the solution at the domain centre; optionally also through the
/// fine model for reference.
inline UqResult propagate_uq(const field::GrfSampler& sampler, const VariationalState& s, const UqOptions& opt) {
  const model::ModelParams& m = s.model;
  const fem::MeshPtr& fine = m.fine_mesh();
  const int qoi = fine->center_node();
  Rng rng = make_rng(opt.seed, stream::uq);
  UqResult r;
  for (int start = 0; start < opt.samples; start += opt.chunk) {
    const int n = std::min(opt.chunk, opt.samples - start);
    std::vector<Eigen::VectorXd> xs;
    std::vector<field::FieldSample> fields;
    std::vector<field::BoundaryCoeffs> bcs;
    for (int i = 0; i < n; ++i) {
      fields.push_back(sampler.sample(rng));
      bcs.push_back(field::sample_bc(rng, opt.bc_scenario));
      xs.push_back(fields.back().lambda);
    }
    InferOptions io = opt.infer;
    io.seed = split_seed(opt.infer.seed, static_cast<std::uint64_t>(start));
    const LatentPosterior q = infer_z(s, xs, io);
    for (int i = 0; i < n; ++i) {
      Rng local = make_rng(split_seed(opt.seed, stream::uq), static_cast<std::uint64_t>(start + i));
      const auto p = predictive_posterior(s, q.mean.col(i), q.logvar.col(i), bcs[i], 1, local);
      r.surrogate.push_back(p.samples(qoi, 0));
      if (opt.reference) {
        const auto sol = fem::solve(fem::assemble(fine, fields[i].kappa, bcs[i], 0.0));
        r.reference.push_back(sol.y[qoi]);
      }
    }
  }
  double lo = *std::min_element(r.surrogate.begin(), r.surrogate.end());
  double hi = *std::max_element(r.surrogate.begin(), r.surrogate.end());
  if (!r.reference.empty()) {
    lo = std::min(lo, *std::min_element(r.reference.begin(), r.reference.end()));
    hi = std::max(hi, *std::max_element(r.reference.begin(), r.reference.end()));
  }
  r.hist_surrogate = histogram(r.surrogate, lo, hi, opt.bins);
  for (int g = 0; g < opt.grid_points; ++g)
    r.grid.push_back(lo + (hi - lo) * g / std::max(1, opt.grid_points - 1));
  r.kde_surrogate = kde(r.surrogate, r.grid, silverman_bandwidth(r.surrogate));
  if (!r.reference.empty()) {
    r.hist_reference = histogram(r.reference, lo, hi, opt.bins);
    r.kde_reference = kde(r.reference, r.grid, silverman_bandwidth(r.reference));
    r.ks = ks_statistic(r.surrogate, r.reference);
  }
  return r;
}

}  // namespace cgsur::predict
