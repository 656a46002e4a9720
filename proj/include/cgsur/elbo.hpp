#pragma once

// Evidence lower bound for semi-supervised training with labeled pairs,
// unlabeled inputs and virtual observables, with reparametrized gradients.
//
// Variational family (mean field):
//   unlabeled i : q(z_i)                       per-datum or amortized q(z | x)
//   labeled i   : q(z_i) q(X_i)
//   virtual i   : q(z_i) q(X_i) q(y_i)         q(y_i) updated in closed form
// Per-datum factors are flat vectors [mu_z, logvar_z] or
// [mu_z, logvar_z, mu_X, logvar_X].

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>

#include "cgsur/approximators.hpp"
#include "cgsur/errors.hpp"
#include "cgsur/fem.hpp"
#include "cgsur/field.hpp"
#include "cgsur/genmodel.hpp"
#include "cgsur/qy_updates.hpp"
#include "cgsur/rng.hpp"
#include "cgsur/vobs.hpp"

namespace cgsur::inference {

using field::BoundaryCoeffs;
using model::ModelParams;

struct LabeledDatum {
  Eigen::VectorXd x;  // log-conductivity on fine pixels
  BoundaryCoeffs bc;
  Eigen::VectorXd y;  // full fine nodal solution
};

struct UnlabeledDatum {
  Eigen::VectorXd x;
  BoundaryCoeffs bc;
};

/// Row precision class of a stacked constraint block.
enum class RowKind { Exact, Learned, Fixed };

struct VirtualDatum {
  Eigen::VectorXd x;
  BoundaryCoeffs bc;
  vobs::QueryObservables obs;
  fem::FemSystem fine_system;  // K(x), load and lift on the fine mesh

  // Stacked rows restricted to the free fine nodes.
  Eigen::MatrixXd gamma_free;
  Eigen::VectorXd alpha;
  std::vector<RowKind> row_kind;
  std::vector<int> row_group;   // learned-precision group of each row, or -1
  Eigen::VectorXd fixed_lambda;  // per row, used for Fixed rows
};

/// Assembles the fine system for a query input and attaches its observables.
inline VirtualDatum make_virtual(const fem::MeshPtr& fine, const fem::Mesh& coarse, const Eigen::VectorXd& x,
                                 const BoundaryCoeffs& bc, const vobs::VoSpec& spec, Rng& rng) {
  VirtualDatum v;
  v.x = x;
  v.bc = bc;
  v.fine_system = fem::assemble(fine, x.array().exp().matrix(), bc, spec.source);
  v.obs = vobs::build_query(spec, v.fine_system, coarse, rng);
  return v;
}

struct Problem {
  std::vector<LabeledDatum> labeled;
  std::vector<UnlabeledDatum> unlabeled;
  std::vector<VirtualDatum> queries;
  std::vector<std::string> learned_groups;  // names of learned-precision groups

  /// Stacks the constraint sets of every query and assigns learned groups by
  /// set kind.
  void prepare_queries() {
    learned_groups.clear();
    for (auto& q : queries) {
      const fem::Mesh& mesh = *q.fine_system.mesh;
      const int m = q.obs.total_rows();
      q.gamma_free.resize(m, mesh.num_free());
      q.alpha.resize(m);
      q.row_kind.assign(m, RowKind::Exact);
      q.row_group.assign(m, -1);
      q.fixed_lambda = Eigen::VectorXd::Zero(m);
      int r = 0;
      for (const auto& set : q.obs.sets) {
        const int rows = set.rows();
        q.gamma_free.middleRows(r, rows) = free_columns(mesh, set.gamma);
        q.alpha.segment(r, rows) = set.alpha;
        int group = -1;
        if (set.precision == vobs::Precision::Learned) {
          auto it = std::find(learned_groups.begin(), learned_groups.end(), set.kind);
          group = static_cast<int>(it - learned_groups.begin());
          if (it == learned_groups.end()) learned_groups.push_back(set.kind);
        }
        for (int k = 0; k < rows; ++k) {
          switch (set.precision) {
            case vobs::Precision::Exact: q.row_kind[r + k] = RowKind::Exact; break;
            case vobs::Precision::Learned:
              q.row_kind[r + k] = RowKind::Learned;
              q.row_group[r + k] = group;
              break;
            case vobs::Precision::Fixed:
              q.row_kind[r + k] = RowKind::Fixed;
              q.fixed_lambda[r + k] = set.lambda[k];
              break;
          }
        }
        r += rows;
      }
    }
  }

  bool empty() const { return labeled.empty() && unlabeled.empty() && queries.empty(); }
};

/// q(y) for one query on the free fine nodes, with the theta-independent part
/// of the ELBO (virtual likelihood plus entropy of q(y)) it implies.
struct QyFactor {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;  // marginal variances
  double const_term = 0.0;
  std::vector<double> group_moments;  // E|o_g|^2 per learned group
};

struct VariationalState {
  ModelParams model;
  bool amortized = false;
  nn::Network encoder;
  Eigen::VectorXd phi;
  std::vector<Eigen::VectorXd> q_unlabeled;  // [mu_z, logvar_z], per-datum mode only
  std::vector<Eigen::VectorXd> q_labeled;    // [mu_z, logvar_z, mu_X, logvar_X]
  std::vector<Eigen::VectorXd> q_virtual;
  std::vector<QyFactor> q_y;
  std::vector<vobs::GammaPosterior> gammas;  // per learned group
  double tau = 1.0;                          // current energy temper
  long iteration = 0;

  int dz() const { return model.dim_z(); }
  int dX() const { return model.dim_X(); }
};

enum class ItemKind { Unlabeled, Labeled, Virtual };

struct BatchItem {
  ItemKind kind;
  int index;
  double weight;  // multiplies the item's ELBO term in F
};

/// Standard-normal noise for one item: dim_z x K and dim_X x K.
struct ItemNoise {
  Eigen::MatrixXd eps_z;
  Eigen::MatrixXd eps_X;
};

struct ElboOptions {
  double prior_scale = 10.0;  // std of the isotropic Gaussian prior on theta
  bool include_prior = true;
  vobs::GammaPosterior gamma_prior{1e-6, 1e-6};
};

struct ElboResult {
  double F = 0.0, F_u = 0.0, F_l = 0.0, F_O = 0.0, log_prior = 0.0;
  Eigen::VectorXd grad_theta;
  Eigen::VectorXd grad_phi;
  std::vector<Eigen::VectorXd> grad_item;  // dF_i / d(factor_i), unweighted
};

inline std::vector<ItemNoise> draw_noise(const VariationalState& s, const std::vector<BatchItem>& batch, int K,
                                         Rng& rng) {
  std::vector<ItemNoise> noise(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    noise[i].eps_z.resize(s.dz(), K);
    for (int k = 0; k < noise[i].eps_z.size(); ++k) noise[i].eps_z.data()[k] = standard_normal(rng);
    if (batch[i].kind != ItemKind::Unlabeled) {
      noise[i].eps_X.resize(s.dX(), K);
      for (int k = 0; k < noise[i].eps_X.size(); ++k) noise[i].eps_X.data()[k] = standard_normal(rng);
    }
  }
  return noise;
}

/// Isotropic Gaussian log prior on theta, up to its normalizing constant.
inline double prior_logpdf_theta(const Eigen::Ref<const Eigen::VectorXd>& theta, double scale) {
  if (!std::isfinite(scale)) return 0.0;
  return -0.5 * theta.squaredNorm() / (scale * scale);
}

/// -KL(N(mu, diag exp(lv)) || N(0, I)), i.e. E[log p(z)] + H[q(z)].
inline double neg_kl_standard(const Eigen::Ref<const Eigen::VectorXd>& mu, const Eigen::Ref<const Eigen::VectorXd>& lv) {
  return -0.5 * (mu.squaredNorm() + lv.array().exp().sum() - lv.sum() - static_cast<double>(mu.size()));
}

inline double gaussian_entropy(const Eigen::Ref<const Eigen::VectorXd>& lv) {
  return 0.5 * (lv.array() + 1.0 + model::kLog2Pi).sum();
}

/// KL(Gamma(a, b) || Gamma(a0, b0)) in shape/rate form.
inline double gamma_kl(const vobs::GammaPosterior& q, const vobs::GammaPosterior& p) {
  using boost::math::digamma;
  return (q.alpha - p.alpha) * digamma(q.alpha) - std::lgamma(q.alpha) + std::lgamma(p.alpha) +
         p.alpha * (std::log(q.beta) - std::log(p.beta)) + q.alpha * (p.beta - q.beta) / q.beta;
}

namespace detail {

// Gaussian likelihood of target (with optional extra variance) under
// h = w .* PY + b and S_y; accumulates theta gradients into g and returns the
// cotangent with respect to Y.
inline double y_term(const ModelParams& m, const Eigen::VectorXd& Y, const Eigen::Ref<const Eigen::VectorXd>& target,
                     const Eigen::VectorXd* extra_var, double weight, Eigen::VectorXd& g, Eigen::VectorXd& dY) {
  const model::OutputMapped o = model::output_map(Y, m);
  const Eigen::VectorXd lsy = m.log_S_y();
  const int n = m.dim_y();
  Eigen::VectorXd dh(n);
  double s = 0.0;
  auto gw = m.w_h_in(g);
  auto gb = m.b_h_in(g);
  auto gs = m.log_S_y_in(g);
  for (int i = 0; i < n; ++i) {
    const double r = target[i] - o.mean[i];
    const double q = r * r + (extra_var ? (*extra_var)[i] : 0.0);
    const double v = o.var[i];
    s += q / v + std::log(v) + model::kLog2Pi;
    dh[i] = r / v;
    if (model::logvar_in_range(lsy[i])) gs[i] += weight * 0.5 * (q / v - 1.0);
  }
  gw += weight * dh.cwiseProduct(o.prolonged);
  gb += weight * dh;
  dY = m.prolongation_free().transpose() * dh.cwiseProduct(m.w_h());
  return -0.5 * s;
}

}  // namespace detail

/// Monte Carlo ELBO over a batch with fixed noise, and its gradients.
inline ElboResult evaluate_elbo(const VariationalState& s, const Problem& p, const std::vector<BatchItem>& batch,
                                const std::vector<ItemNoise>& noise, const ElboOptions& opt = {}) {
  const ModelParams& m = s.model;
  const int dz = s.dz(), dX = s.dX(), dx = m.dim_x();
  if (noise.size() != batch.size()) throw DimensionMismatch("evaluate_elbo: noise/batch size");
  const int K = batch.empty() ? 1 : static_cast<int>(noise[0].eps_z.cols());

  ElboResult res;
  res.grad_theta = Eigen::VectorXd::Zero(m.num_params());
  res.grad_phi = Eigen::VectorXd::Zero(s.phi.size());
  res.grad_item.resize(batch.size());

  auto x_of = [&](const BatchItem& b) -> const Eigen::VectorXd& {
    switch (b.kind) {
      case ItemKind::Unlabeled: return p.unlabeled[b.index].x;
      case ItemKind::Labeled: return p.labeled[b.index].x;
      case ItemKind::Virtual: return p.queries[b.index].x;
    }
    throw std::logic_error("bad item kind");
  };
  auto factor_of = [&](const BatchItem& b) -> const Eigen::VectorXd* {
    switch (b.kind) {
      case ItemKind::Unlabeled: return s.amortized ? nullptr : &s.q_unlabeled[b.index];
      case ItemKind::Labeled: return &s.q_labeled[b.index];
      case ItemKind::Virtual: return &s.q_virtual[b.index];
    }
    return nullptr;
  };

  // q(z) parameters per item; amortized items go through the encoder in one batch.
  const int nb = static_cast<int>(batch.size());
  Eigen::MatrixXd mu_z(dz, nb), lv_z(dz, nb);
  std::vector<int> amortized_items;
  for (int i = 0; i < nb; ++i) {
    const Eigen::VectorXd* f = factor_of(batch[i]);
    if (f) {
      mu_z.col(i) = f->head(dz);
      lv_z.col(i) = f->segment(dz, dz);
      res.grad_item[i] = Eigen::VectorXd::Zero(f->size());
    } else {
      amortized_items.push_back(i);
    }
  }
  nn::Tape enc_tape;
  if (!amortized_items.empty()) {
    Eigen::MatrixXd xin(dx, static_cast<Eigen::Index>(amortized_items.size()));
    for (std::size_t k = 0; k < amortized_items.size(); ++k) xin.col(k) = x_of(batch[amortized_items[k]]);
    enc_tape = s.encoder.forward(s.phi, xin);
    for (std::size_t k = 0; k < amortized_items.size(); ++k) {
      mu_z.col(amortized_items[k]) = enc_tape.output().col(k).head(dz);
      lv_z.col(amortized_items[k]) = enc_tape.output().col(k).tail(dz);
    }
  }
  Eigen::MatrixXd d_mu_z = Eigen::MatrixXd::Zero(dz, nb), d_lv_z = Eigen::MatrixXd::Zero(dz, nb);

  // Reparametrized latent samples, one decoder pass for the whole batch.
  Eigen::MatrixXd zs(dz, nb * K);
  for (int i = 0; i < nb; ++i) {
    const Eigen::ArrayXd sd = (0.5 * lv_z.col(i).array()).exp();
    for (int k = 0; k < K; ++k) zs.col(i * K + k) = mu_z.col(i).array() + sd * noise[i].eps_z.col(k).array();
  }
  model::Decoded dec = model::decode_x_batch(m, zs);
  Eigen::MatrixXd dec_cot = Eigen::MatrixXd::Zero(2 * dx, nb * K);
  Eigen::MatrixXd dz_direct = Eigen::MatrixXd::Zero(dz, nb * K);  // unweighted non-decoder dF_i/dz

  const Eigen::VectorXd s_X = m.S_X();
  const Eigen::VectorXd lsX = m.log_S_X();
  auto Wg = m.W_g();
  auto gW = m.W_g_in(res.grad_theta);
  auto gbg = m.b_g_in(res.grad_theta);
  auto gsX = m.log_S_X_in(res.grad_theta);
  const double invK = 1.0 / K;

  for (int i = 0; i < nb; ++i) {
    const BatchItem& b = batch[i];
    const double w = b.weight;
    const Eigen::VectorXd& x = x_of(b);
    double Fi = 0.0;
    for (int k = 0; k < K; ++k) Fi += invK * model::x_loglik_and_cotangent(x, dec, i * K + k, w * invK, &dec_cot);
    const double nkl = neg_kl_standard(mu_z.col(i), lv_z.col(i));
    Fi += nkl;
    d_mu_z.col(i) -= mu_z.col(i);
    d_lv_z.col(i).array() -= 0.5 * (lv_z.col(i).array().exp() - 1.0);

    if (b.kind != ItemKind::Unlabeled) {
      const Eigen::VectorXd& f = *factor_of(b);
      const Eigen::VectorXd mu_X = f.segment(2 * dz, dX);
      const Eigen::VectorXd lv_X = f.segment(2 * dz + dX, dX);
      const Eigen::VectorXd var_X = lv_X.array().exp();
      const Eigen::VectorXd sd_X = (0.5 * lv_X.array()).exp();
      Eigen::VectorXd& gi = res.grad_item[i];
      auto g_mu_X = gi.segment(2 * dz, dX);
      auto g_lv_X = gi.segment(2 * dz + dX, dX);
      Fi += gaussian_entropy(lv_X);
      g_lv_X.array() += 0.5;

      const BoundaryCoeffs& bc = b.kind == ItemKind::Labeled ? p.labeled[b.index].bc : p.queries[b.index].bc;
      for (int k = 0; k < K; ++k) {
        const Eigen::VectorXd z = zs.col(i * K + k);
        // E_q(X) log p(X | z), exact in X
        const Eigen::VectorXd r = mu_X - (Wg * z + m.b_g());
        double t = 0.0;
        Eigen::VectorXd dg(dX);
        for (int j = 0; j < dX; ++j) {
          const double q = r[j] * r[j] + var_X[j];
          t += q / s_X[j] + std::log(s_X[j]) + model::kLog2Pi;
          dg[j] = r[j] / s_X[j];
          g_mu_X[j] -= invK * r[j] / s_X[j];
          g_lv_X[j] -= invK * 0.5 * var_X[j] / s_X[j];
          if (model::logvar_in_range(lsX[j])) gsX[j] += w * invK * 0.5 * (q / s_X[j] - 1.0);
        }
        Fi += invK * (-0.5 * t);
        gW += (w * invK) * dg * z.transpose();
        gbg += (w * invK) * dg;
        dz_direct.col(i * K + k) += invK * (Wg.transpose() * dg);

        // output likelihood through the coarse model at a sample of q(X)
        const Eigen::VectorXd eX = noise[i].eps_X.col(k);
        const Eigen::VectorXd X = mu_X + sd_X.cwiseProduct(eX);
        const model::CgmResult cg = model::cgm_forward(m, X, bc);
        Eigen::VectorXd dY;
        double ty;
        if (b.kind == ItemKind::Labeled) {
          const Eigen::VectorXd yf = model::to_free(*m.fine_mesh(), p.labeled[b.index].y);
          ty = detail::y_term(m, cg.Y(), yf, nullptr, w * invK, res.grad_theta, dY);
        } else {
          const QyFactor& qy = s.q_y[b.index];
          ty = detail::y_term(m, cg.Y(), qy.mean, &qy.var, w * invK, res.grad_theta, dY);
        }
        Fi += invK * ty;
        const Eigen::VectorXd dX_ = model::cgm_vjp(cg, dY);
        g_mu_X += invK * dX_;
        g_lv_X += invK * dX_.cwiseProduct(eX).cwiseProduct(0.5 * sd_X);
      }
      if (b.kind == ItemKind::Virtual) Fi += s.q_y[b.index].const_term;
    }
    switch (b.kind) {
      case ItemKind::Unlabeled: res.F_u += w * Fi; break;
      case ItemKind::Labeled: res.F_l += w * Fi; break;
      case ItemKind::Virtual: res.F_O += w * Fi; break;
    }
  }

  // Decoder backward: theta gradient is weighted, z gradient is converted back
  // to the unweighted per-item scale.
  if (nb > 0) {
    const Eigen::MatrixXd gz = m.decoder().backward(m.decoder_params(), dec.tape, dec_cot, m.decoder_params_in(res.grad_theta));
    for (int i = 0; i < nb; ++i) {
      const double w = batch[i].weight;
      const Eigen::ArrayXd sd = (0.5 * lv_z.col(i).array()).exp();
      for (int k = 0; k < K; ++k) {
        const Eigen::VectorXd dzk = (w != 0.0 ? Eigen::VectorXd(gz.col(i * K + k) / w) : Eigen::VectorXd::Zero(dz)) +
                                    dz_direct.col(i * K + k);
        d_mu_z.col(i) += dzk;
        d_lv_z.col(i).array() += dzk.array() * noise[i].eps_z.col(k).array() * 0.5 * sd;
      }
      if (batch[i].kind != ItemKind::Labeled && batch[i].kind != ItemKind::Virtual && s.amortized) continue;
      res.grad_item[i].head(dz) += d_mu_z.col(i);
      res.grad_item[i].segment(dz, dz) += d_lv_z.col(i);
    }
  }
  if (!amortized_items.empty()) {
    Eigen::MatrixXd cot(2 * dz, static_cast<Eigen::Index>(amortized_items.size()));
    for (std::size_t k = 0; k < amortized_items.size(); ++k) {
      const int i = amortized_items[k];
      cot.col(k) << batch[i].weight * d_mu_z.col(i), batch[i].weight * d_lv_z.col(i);
    }
    s.encoder.backward(s.phi, enc_tape, cot, res.grad_phi);
  }

  bool has_virtual = false;
  for (const auto& b : batch) has_virtual |= b.kind == ItemKind::Virtual;
  if (has_virtual)
    for (const auto& g : s.gammas) res.F_O -= gamma_kl(g, opt.gamma_prior);

  if (opt.include_prior) {
    res.log_prior = prior_logpdf_theta(m.theta(), opt.prior_scale);
    if (std::isfinite(opt.prior_scale)) res.grad_theta -= m.theta() / (opt.prior_scale * opt.prior_scale);
  }
  res.F = res.F_u + res.F_l + res.F_O + res.log_prior;
  return res;
}

// ----- q(y) updates ---------------------------------------------------------

/// MC estimate of E_q(X)[h(Y(X))] for one query.
inline Eigen::VectorXd expected_output(const VariationalState& s, const VirtualDatum& q,
                                       const Eigen::VectorXd& factor, int samples, Rng& rng) {
  const int dz = s.dz(), dX = s.dX();
  const Eigen::VectorXd mu_X = factor.segment(2 * dz, dX);
  const Eigen::VectorXd sd_X = (0.5 * factor.segment(2 * dz + dX, dX).array()).exp();
  Eigen::VectorXd h = Eigen::VectorXd::Zero(s.model.dim_y());
  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd X = mu_X;
    for (int j = 0; j < dX; ++j) X[j] += sd_X[j] * standard_normal(rng);
    h += model::output_map(model::cgm_forward(s.model, X, q.bc).Y(), s.model).mean;
  }
  return h / samples;
}

/// Closed-form q(y) for a query with linear constraints, and the
/// theta-independent ELBO part it implies.
inline QyFactor linear_qy(const VariationalState& s, const VirtualDatum& q, const Eigen::VectorXd& h_mean,
                          int max_rows = 1024) {
  const Eigen::VectorXd sy = s.model.S_y();
  const int M = static_cast<int>(q.alpha.size());
  Eigen::VectorXd lam(M), lam_inv(M);
  for (int r = 0; r < M; ++r) {
    switch (q.row_kind[r]) {
      case RowKind::Exact: lam[r] = 0.0; lam_inv[r] = 0.0; break;
      case RowKind::Learned: lam[r] = s.gammas.at(q.row_group[r]).mean(); lam_inv[r] = 1.0 / lam[r]; break;
      case RowKind::Fixed: lam[r] = q.fixed_lambda[r]; lam_inv[r] = 1.0 / lam[r]; break;
    }
  }
  const ConstrainedGaussian cg = update_qy_closedform(q.gamma_free, q.alpha, lam_inv, sy.cwiseInverse(), h_mean, max_rows);
  QyFactor f;
  f.mean = cg.mean;
  f.var = cg.diag_cov();
  const int d = static_cast<int>(sy.size());
  const Eigen::VectorXd r = cg.residual();
  double quad = 0.0, digamma_corr = 0.0;
  for (int k = 0; k < M; ++k) {
    if (q.row_kind[k] == RowKind::Exact) continue;
    quad += lam[k] * r[k] * r[k];
    if (q.row_kind[k] == RowKind::Learned) {
      const auto& g = s.gammas[q.row_group[k]];
      digamma_corr += boost::math::digamma(g.alpha) - std::log(g.alpha);
    }
  }
  f.const_term = -0.5 * M * model::kLog2Pi - 0.5 * quad - 0.5 * cg.trace_A_xi_inv() +
                 0.5 * d * (model::kLog2Pi + 1.0) + 0.5 * sy.array().log().sum() - 0.5 * cg.log_det_xi() +
                 0.5 * digamma_corr;
  f.group_moments.assign(s.gammas.size(), 0.0);
  if (!s.gammas.empty() && M > 0) {
    const Eigen::MatrixXd rc = cg.residual_cov();
    for (int k = 0; k < M; ++k)
      if (q.row_group[k] >= 0) f.group_moments[q.row_group[k]] += r[k] * r[k] + rc(k, k);
  }
  return f;
}

/// Diagonal q(y) for an energy query, and the theta-independent ELBO part
/// -tau E[V(y)] + H[q(y)].
inline QyFactor energy_qy(const VariationalState& s, const VirtualDatum& q, const Eigen::VectorXd& h_mean,
                          const Eigen::VectorXd& warm_start, Rng& rng, const EnergyUpdateOptions& opt = {}) {
  const vobs::EnergyObservable obs{q.fine_system, s.tau};
  const DiagGaussian g = update_qy_energy(obs, s.model.S_y().cwiseInverse(), h_mean, warm_start, rng, opt);
  QyFactor f;
  f.mean = g.mean;
  f.var = g.var;
  const fem::Mesh& mesh = *q.fine_system.mesh;
  const Eigen::VectorXd full = model::to_full(mesh, g.mean, q.bc);
  double trace = 0.0;
  const Eigen::VectorXd kd = q.fine_system.K.diagonal();
  for (int i = 0; i < mesh.num_free(); ++i) trace += kd[mesh.free_nodes[i]] * g.var[i];
  f.const_term = -s.tau * (fem::energy(q.fine_system, full) + 0.5 * trace) +
                 0.5 * (g.var.array().log() + model::kLog2Pi + 1.0).sum();
  return f;
}

}  // namespace cgsur::inference
