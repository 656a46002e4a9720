#pragma once

// End-to-end pipelines shared by the CLI and the acceptance suite: dataset
// generation, problem assembly, training, evaluation and UQ.

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "cgsur/config.hpp"
#include "cgsur/elbo.hpp"
#include "cgsur/fem.hpp"
#include "cgsur/field.hpp"
#include "cgsur/io.hpp"
#include "cgsur/predict.hpp"
#include "cgsur/rng.hpp"
#include "cgsur/train.hpp"

namespace cgsur::experiment {

/// Runs fn(i) for i in [0, n) on `workers` threads; the first exception wins.
template <class Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

/// n draws of (x, bc), with fine solves when `solve` is set. Sample i uses its
/// own stream, so results do not depend on the worker count.
inline io::DataSet sample_set(const std::string& name, const field::GrfSampler& sampler, field::BcScenario bc,
                              int n, std::uint64_t seed, std::uint64_t stream_id, bool solve, double source,
                              int workers) {
  io::DataSet d;
  d.name = name;
  d.x.resize(n);
  d.bc.resize(n);
  if (solve) d.y.resize(n);
  const fem::MeshPtr mesh = fem::build_mesh(sampler.spec().grid_size);
  const std::uint64_t base = split_seed(seed, stream_id);
  parallel_for(n, workers, [&](int i) {
    Rng rng = make_rng(base, static_cast<std::uint64_t>(i));
    const field::FieldSample x = sampler.sample(rng);
    d.x[i] = x.lambda;
    d.bc[i] = field::sample_bc(rng, bc);
    if (solve) d.y[i] = fem::solve(fem::assemble(mesh, x.kappa, d.bc[i], source)).y;
  });
  return d;
}

struct Datasets {
  io::DataSet labeled, unlabeled, virtual_, validation;
  std::vector<vobs::QueryObservables> observables;
};

inline std::vector<vobs::QueryObservables> build_observables(const ExperimentConfig& c, const io::DataSet& queries) {
  const fem::MeshPtr fine = fem::build_mesh(c.dims.fine_grid);
  const fem::MeshPtr coarse = fem::build_mesh(c.dims.coarse_grid);
  std::vector<vobs::QueryObservables> out(queries.size());
  const std::uint64_t base = split_seed(c.seed, stream::constraints);
  parallel_for(static_cast<int>(queries.size()), c.workers, [&](int i) {
    Rng rng = make_rng(base, static_cast<std::uint64_t>(i));
    const auto sys = fem::assemble(fine, queries.x[i].array().exp().matrix(), queries.bc[i], c.source);
    out[i] = vobs::build_query(c.vo, sys, *coarse, rng);
  });
  return out;
}

inline Datasets generate(const ExperimentConfig& c) {
  const field::GrfSampler sampler(c.field);
  Datasets d;
  d.labeled = sample_set("labeled", sampler, c.bc, c.data.labeled, c.seed, stream::labeled, true, c.source, c.workers);
  d.unlabeled =
      sample_set("unlabeled", sampler, c.bc, c.data.unlabeled, c.seed, stream::unlabeled, false, c.source, c.workers);
  d.virtual_ = sample_set("virtual", sampler, c.bc, c.data.virtual_, c.seed, stream::virtual_queries, false, c.source,
                          c.workers);
  d.validation =
      sample_set("validation", sampler, c.bc, c.data.validation, c.seed, stream::validation, true, c.source, c.workers);
  d.observables = build_observables(c, d.virtual_);
  return d;
}

inline io::json save_datasets(const io::fs::path& dir, const Datasets& d) {
  io::fs::create_directories(dir);
  io::json files = io::json::object();
  for (const auto* s : {&d.labeled, &d.unlabeled, &d.virtual_, &d.validation}) files.update(io::save_dataset(dir, *s));
  files.update(io::save_observables(dir, d.observables));
  return files;
}

inline Datasets load_datasets(const io::fs::path& dir) {
  Datasets d;
  d.labeled = io::load_dataset(dir, "labeled");
  d.unlabeled = io::load_dataset(dir, "unlabeled");
  d.virtual_ = io::load_dataset(dir, "virtual");
  d.validation = io::load_dataset(dir, "validation");
  d.observables = io::load_observables(dir);
  if (d.observables.size() != d.virtual_.size()) throw IoError("virtual observables do not match the query set");
  return d;
}

inline inference::Problem build_problem(const ExperimentConfig& c, const Datasets& d) {
  inference::Problem p;
  const fem::MeshPtr fine = fem::build_mesh(c.dims.fine_grid);
  for (std::size_t i = 0; i < d.labeled.size(); ++i) p.labeled.push_back({d.labeled.x[i], d.labeled.bc[i], d.labeled.y[i]});
  for (std::size_t i = 0; i < d.unlabeled.size(); ++i) p.unlabeled.push_back({d.unlabeled.x[i], d.unlabeled.bc[i]});
  for (std::size_t i = 0; i < d.virtual_.size(); ++i) {
    inference::VirtualDatum v;
    v.x = d.virtual_.x[i];
    v.bc = d.virtual_.bc[i];
    v.fine_system = fem::assemble(fine, v.x.array().exp().matrix(), v.bc, c.source);
    v.obs = d.observables[i];
    p.queries.push_back(std::move(v));
  }
  p.prepare_queries();
  return p;
}

struct Trained {
  inference::VariationalState state;
  inference::TrainResult result;
};

inline Trained train_model(const ExperimentConfig& c, const inference::Problem& p,
                           const inference::LogCallback& on_log = {}) {
  inference::TrainConfig tc = c.train;
  tc.seed = c.seed;
  Rng rng = make_rng(c.seed, stream::training);
  Trained t;
  t.state = inference::init_state(p, c.dims, tc, rng);
  t.result = inference::train(t.state, p, tc, nullptr, on_log);
  return t;
}

struct Evaluation {
  predict::Metrics metrics;
  std::vector<double> sq_error;  // per validation datum, free nodes
  std::vector<double> logscore;
  std::uint64_t fine_solves = 0;
  std::uint64_t coarse_solves = 0;
};

/// Predictions for a validation set and their R2/LS over free nodes. Counts
/// the linear solves performed on each grid while predicting.
inline Evaluation evaluate(const ExperimentConfig& c, const inference::VariationalState& s, const io::DataSet& val) {
  if (!val.labeled()) throw input_error("evaluate: validation set has no outputs");
  predict::PredictOptions po = c.predict;
  po.seed = c.seed;
  po.infer.seed = split_seed(c.seed, stream::evaluation);
  const std::uint64_t f0 = fem::solve_count(c.dims.fine_grid), c0 = fem::solve_count(c.dims.coarse_grid);
  const predict::BatchPrediction pred = predict::predict_batch(s, val.x, val.bc, po);
  Evaluation e;
  e.fine_solves = fem::solve_count(c.dims.fine_grid) - f0;
  e.coarse_solves = fem::solve_count(c.dims.coarse_grid) - c0;
  const fem::Mesh& fine = *s.model.fine_mesh();
  e.metrics = predict::evaluate_metrics(fine, val.y, pred);
  for (std::size_t i = 0; i < val.size(); ++i) {
    const Eigen::VectorXd y = model::to_free(fine, val.y[i]);
    const Eigen::VectorXd mu = model::to_free(fine, pred.mean[i]);
    e.sq_error.push_back((y - mu).squaredNorm());
    e.logscore.push_back(model::diag_gaussian_logpdf(y, mu, model::to_free(fine, pred.var[i])));
  }
  return e;
}

inline predict::UqResult run_uq(const ExperimentConfig& c, const inference::VariationalState& s) {
  predict::UqOptions uo = c.uq;
  uo.seed = c.seed;
  uo.bc_scenario = c.bc;
  uo.infer = c.predict.infer;
  uo.infer.seed = split_seed(c.seed, stream::uq);
  return predict::propagate_uq(field::GrfSampler(c.field), s, uo);
}

struct PipelineResult {
  Trained trained;
  Evaluation eval;
};

/// Generate, train and evaluate in memory.
inline PipelineResult run_pipeline(const ExperimentConfig& c) {
  const Datasets d = generate(c);
  const inference::Problem p = build_problem(c, d);
  PipelineResult r;
  r.trained = train_model(c, p);
  r.eval = evaluate(c, r.trained.state, d.validation);
  return r;
}

}  // namespace cgsur::experiment
