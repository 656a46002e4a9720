#pragma once

// Stochastic variational training loop: Adam ascent on theta, the amortized
// encoder and the per-datum factors, interleaved with closed-form q(y) and
// Gamma precision updates.

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cgsur/elbo.hpp"
#include "cgsur/errors.hpp"
#include "cgsur/genmodel.hpp"
#include "cgsur/rng.hpp"

namespace cgsur::inference {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments for one parameter block. Steps maximize.
class Adam {
 public:
  Adam() = default;
  explicit Adam(Eigen::Index n) : m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

  void ascend(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad, const AdamOptions& o) {
    if (m_.size() != params.size()) {
      m_ = Eigen::VectorXd::Zero(params.size());
      v_ = Eigen::VectorXd::Zero(params.size());
      t_ = 0;
    }
    ++t_;
    m_ = o.beta1 * m_ + (1.0 - o.beta1) * grad;
    v_ = o.beta2 * v_ + (1.0 - o.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t_));
    params.array() += o.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + o.eps);
  }

  long steps() const { return t_; }

 private:
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

struct TrainConfig {
  AdamOptions adam;                // theta and encoder
  AdamOptions factor_adam{1e-2};   // per-datum factors
  int mc_samples = 1;
  long iterations = 20000;
  int labeled_batch = 0;    // 0: all
  int unlabeled_batch = 64; // 0: all
  int virtual_batch = 0;    // 0: all
  double prior_scale = 10.0;
  double labeled_weight = 1.0;
  double unlabeled_weight = -1.0;  // < 0: scale so unlabeled and labeled data weigh equally
  double virtual_weight = 1.0;
  int update_every = 50;
  int qy_samples = 16;
  double tau_start = 1.0;
  double tau_end = 1e4;
  long tau_iterations = 0;  // 0: the whole budget
  int energy_block = 64;
  int max_constraints = 1024;
  int plateau_window = 500;
  double plateau_tol = 1e-4;
  long min_iterations = 2000;
  bool amortized = false;
  std::vector<int> encoder_hidden{128};
  double init_logvar_z = std::log(0.1);
  double init_logvar_X = std::log(0.01);
  double init_S_X = 0.05;
  vobs::GammaPosterior gamma_prior{1e-6, 1e-6};
  int log_every = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(adam.lr > 0.0) || !(factor_adam.lr > 0.0)) throw input_error("learning rates must be > 0");
    if (mc_samples < 1) throw input_error("mc_samples must be >= 1");
    if (iterations < 0) throw input_error("iterations must be >= 0");
    if (update_every < 1) throw input_error("update_every must be >= 1");
    if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw input_error("tau must be > 0");
  }
};

struct LogRow {
  long iter;
  double F, F_u, F_l, F_O;
  double wallclock;
};

struct TrainResult {
  std::vector<LogRow> log;
  long iterations = 0;
  double final_F = 0.0;
  bool plateaued = false;
};

/// Per-item weights so that each data type contributes its full-data sum.
struct DataWeights {
  double labeled = 1.0, unlabeled = 1.0, virtual_ = 1.0;
};

inline DataWeights data_weights(const Problem& p, const TrainConfig& c) {
  DataWeights w;
  w.labeled = c.labeled_weight;
  w.virtual_ = c.virtual_weight;
  if (c.unlabeled_weight >= 0.0) {
    w.unlabeled = c.unlabeled_weight;
  } else if (!p.labeled.empty() && !p.unlabeled.empty()) {
    w.unlabeled = static_cast<double>(p.labeled.size()) / static_cast<double>(p.unlabeled.size());
  }
  return w;
}

inline double tau_at(const TrainConfig& c, long iter) {
  const long span = c.tau_iterations > 0 ? c.tau_iterations : std::max<long>(c.iterations, 1);
  const double t = std::min(1.0, static_cast<double>(iter) / static_cast<double>(span));
  return c.tau_start * std::pow(c.tau_end / c.tau_start, t);
}

/// Builds an initial state: data-driven output biases, q(X) centred on b_g.
inline VariationalState init_state(const Problem& p, const model::ModelDims& dims, const TrainConfig& c, Rng& rng) {
  if (p.empty()) throw input_error("train: no data");
  VariationalState s;
  s.model = model::ModelParams(dims);
  double sum = 0.0, sum2 = 0.0;
  long n = 0;
  auto acc = [&](const Eigen::VectorXd& x) {
    if (x.size() != dims.dim_x()) throw DimensionMismatch("input size does not match the fine grid");
    sum += x.sum();
    sum2 += x.squaredNorm();
    n += x.size();
  };
  for (const auto& d : p.labeled) acc(d.x);
  for (const auto& d : p.unlabeled) acc(d.x);
  for (const auto& d : p.queries) acc(d.x);
  const double mean = sum / n;
  const double var = std::max(sum2 / n - mean * mean, 1e-6);
  s.model.initialize(rng, mean, var, mean, c.init_S_X, 1e-2, 0.01);

  // output noise from the residual of the initial coarse model on labeled data
  if (!p.labeled.empty()) {
    double r2 = 0.0;
    long cnt = 0;
    const Eigen::VectorXd X = s.model.b_g();
    for (const auto& d : p.labeled) {
      const Eigen::VectorXd h = model::output_map(model::cgm_forward(s.model, X, d.bc).Y(), s.model).mean;
      r2 += (model::to_free(*s.model.fine_mesh(), d.y) - h).squaredNorm();
      cnt += h.size();
    }
    s.model.log_S_y().setConstant(std::log(std::max(r2 / cnt, 1e-6)));
  }

  const int dz = s.dz(), dX = s.dX();
  auto factor = [&](bool with_X) {
    Eigen::VectorXd f(with_X ? 2 * dz + 2 * dX : 2 * dz);
    f.head(dz).setZero();
    f.segment(dz, dz).setConstant(c.init_logvar_z);
    if (with_X) {
      f.segment(2 * dz, dX) = s.model.b_g();
      f.segment(2 * dz + dX, dX).setConstant(c.init_logvar_X);
    }
    return f;
  };
  s.amortized = c.amortized;
  if (c.amortized) {
    s.encoder = nn::Network(nn::Architecture::mlp(dims.dim_x(), c.encoder_hidden, 2 * dz));
    s.phi = Eigen::VectorXd::Zero(s.encoder.num_params());
    s.encoder.initialize(s.phi, rng);
    s.phi.tail(dz).setConstant(c.init_logvar_z);  // output bias of the log-variance head
  } else {
    s.q_unlabeled.assign(p.unlabeled.size(), factor(false));
  }
  s.q_labeled.assign(p.labeled.size(), factor(true));
  s.q_virtual.assign(p.queries.size(), factor(true));
  s.gammas.assign(p.learned_groups.size(), vobs::GammaPosterior{1.0, 1.0});
  s.tau = c.tau_start;
  s.q_y.resize(p.queries.size());
  for (std::size_t i = 0; i < p.queries.size(); ++i) {
    s.q_y[i].mean = Eigen::VectorXd::Zero(s.model.dim_y());
    s.q_y[i].var = s.model.S_y();
  }
  return s;
}

/// Recomputes every q(y) from the current model and q(X), then the Gamma
/// posteriors of learned precision groups.
inline void update_virtual_factors(VariationalState& s, const Problem& p, const TrainConfig& c, Rng& rng) {
  if (p.queries.empty()) return;
  std::vector<std::vector<double>> moments(s.gammas.size());
  for (std::size_t i = 0; i < p.queries.size(); ++i) {
    const VirtualDatum& q = p.queries[i];
    const Eigen::VectorXd h = expected_output(s, q, s.q_virtual[i], c.qy_samples, rng);
    if (q.obs.energy) {
      EnergyUpdateOptions eo;
      eo.block = c.energy_block;
      const Eigen::VectorXd warm = s.q_y[i].mean.size() == h.size() && s.q_y[i].mean.allFinite() ? s.q_y[i].mean : h;
      s.q_y[i] = energy_qy(s, q, h, warm, rng, eo);
    } else {
      s.q_y[i] = linear_qy(s, q, h, c.max_constraints);
      for (std::size_t g = 0; g < s.gammas.size(); ++g) moments[g].push_back(s.q_y[i].group_moments[g]);
    }
  }
  for (std::size_t g = 0; g < s.gammas.size(); ++g) {
    int rows = 0;
    const auto& q0 = p.queries.front();
    for (int r = 0; r < static_cast<int>(q0.row_group.size()); ++r) rows += q0.row_group[r] == static_cast<int>(g);
    s.gammas[g] = update_precision_gamma(moments[g], rows, c.gamma_prior.alpha, c.gamma_prior.beta);
  }
}

/// Optimizer state that survives across calls to train().
struct TrainerMemory {
  Adam theta, phi;
  std::vector<Adam> unlabeled, labeled, virtual_;
};

namespace detail {
inline std::vector<int> subsample(int n, int batch, Rng& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (batch <= 0 || batch >= n) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(batch);
  std::sort(idx.begin(), idx.end());
  return idx;
}
}  // namespace detail

using LogCallback = std::function<void(const LogRow&)>;

/// Runs SVI from the given state for up to config.iterations further steps.
inline TrainResult train(VariationalState& s, const Problem& p, const TrainConfig& c, TrainerMemory* memory = nullptr,
                         const LogCallback& on_log = {}) {
  c.validate();
  TrainerMemory local;
  TrainerMemory& mem = memory ? *memory : local;
  mem.unlabeled.resize(s.q_unlabeled.size());
  mem.labeled.resize(s.q_labeled.size());
  mem.virtual_.resize(s.q_virtual.size());

  Rng rng = make_rng(c.seed, stream::training + static_cast<std::uint64_t>(s.iteration) * 1315423911ULL);
  const DataWeights dw = data_weights(p, c);
  ElboOptions eo;
  eo.prior_scale = c.prior_scale;
  eo.gamma_prior = c.gamma_prior;

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::deque<double> window, previous;
  double window_sum = 0.0, previous_sum = 0.0;

  s.tau = tau_at(c, s.iteration);
  update_virtual_factors(s, p, c, rng);

  const long start = s.iteration;
  const long end = start + c.iterations;
  for (long it = start; it < end; ++it) {
    std::vector<BatchItem> batch;
    const int nl = static_cast<int>(p.labeled.size());
    const int nu = static_cast<int>(p.unlabeled.size());
    const int no = static_cast<int>(p.queries.size());
    auto add = [&](ItemKind kind, int n, int bsize, double w) {
      const auto idx = detail::subsample(n, bsize, rng);
      const double scale = n > 0 ? w * static_cast<double>(n) / static_cast<double>(idx.size()) : 0.0;
      for (int i : idx) batch.push_back({kind, i, scale});
    };
    if (nl > 0) add(ItemKind::Labeled, nl, c.labeled_batch, dw.labeled);
    if (nu > 0) add(ItemKind::Unlabeled, nu, c.unlabeled_batch, dw.unlabeled);
    if (no > 0) add(ItemKind::Virtual, no, c.virtual_batch, dw.virtual_);

    const auto noise = draw_noise(s, batch, c.mc_samples, rng);
    const ElboResult r = evaluate_elbo(s, p, batch, noise, eo);
    if (!std::isfinite(r.F) || !r.grad_theta.allFinite()) {
      std::ostringstream msg;
      msg << "non-finite ELBO at iteration " << it << " (F_u=" << r.F_u << ", F_l=" << r.F_l << ", F_O=" << r.F_O
          << ", log_prior=" << r.log_prior << ")";
      throw NonFiniteLoss(msg.str());
    }

    mem.theta.ascend(s.model.theta(), r.grad_theta, c.adam);
    if (s.amortized && r.grad_phi.size() > 0) mem.phi.ascend(s.phi, r.grad_phi, c.adam);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const BatchItem& b = batch[i];
      if (r.grad_item[i].size() == 0) continue;
      switch (b.kind) {
        case ItemKind::Unlabeled: mem.unlabeled[b.index].ascend(s.q_unlabeled[b.index], r.grad_item[i], c.factor_adam); break;
        case ItemKind::Labeled: mem.labeled[b.index].ascend(s.q_labeled[b.index], r.grad_item[i], c.factor_adam); break;
        case ItemKind::Virtual: mem.virtual_[b.index].ascend(s.q_virtual[b.index], r.grad_item[i], c.factor_adam); break;
      }
    }
    s.iteration = it + 1;

    if (no > 0 && s.iteration % c.update_every == 0) {
      s.tau = tau_at(c, s.iteration);
      update_virtual_factors(s, p, c, rng);
    }

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.log_every > 0 && (it % c.log_every == 0 || it + 1 == end)) {
      LogRow row{it, r.F, r.F_u, r.F_l, r.F_O, wall};
      result.log.push_back(row);
      if (on_log) on_log(row);
    }
    result.final_F = r.F;
    result.iterations = it + 1 - start;

    // plateau on the moving average of F
    const int W = c.plateau_window;
    if (W > 0) {
      window.push_back(r.F);
      window_sum += r.F;
      if (static_cast<int>(window.size()) > W) {
        previous.push_back(window.front());
        previous_sum += window.front();
        window_sum -= window.front();
        window.pop_front();
        if (static_cast<int>(previous.size()) > W) {
          previous_sum -= previous.front();
          previous.pop_front();
        }
      }
      if (static_cast<int>(previous.size()) == W && it + 1 - start >= c.min_iterations) {
        const double a = window_sum / W, b = previous_sum / W;
        if (std::abs(a - b) < c.plateau_tol * std::abs(a)) {
          result.plateaued = true;
          if (c.log_every > 0 && it % c.log_every != 0) {
            LogRow row{it, r.F, r.F_u, r.F_l, r.F_O, wall};
            result.log.push_back(row);
            if (on_log) on_log(row);
          }
          break;
        }
      }
    }
  }
  return result;
}

}  // namespace cgsur::inference
