#pragma once

// Small shared problem for inference and prediction tests.

#include "cgsur/train.hpp"

namespace cgsur::testing {

using namespace cgsur::inference;


struct Fixture {
  model::ModelDims dims;
  Problem problem;
  VariationalState state;
  TrainConfig config;
};

// d_f = 8, d_c = 2, small decoder; labeled, unlabeled and two kinds of queries.
inline Fixture tiny(bool amortized, vobs::VoType vo = vobs::VoType::Hybrid, int nl = 3, int nu = 3, int nq = 2,
             std::uint64_t seed = 11) {
  Fixture f;
  f.dims.fine_grid = 8;
  f.dims.coarse_grid = 2;
  f.dims.dim_z = 2;
  f.dims.hidden = {6};
  Rng rng(seed);
  field::GrfSpec spec;
  spec.grid_size = 8;
  spec.length_scale = 0.3;
  field::GrfSampler sampler(spec);
  const auto fine = fem::build_mesh(8);
  const auto coarse = fem::build_mesh(2);
  for (int i = 0; i < nl; ++i) {
    const auto x = sampler.sample(rng);
    const auto bc = field::sample_bc(rng);
    f.problem.labeled.push_back({x.lambda, bc, fem::solve(fem::assemble(fine, x.kappa, bc)).y});
  }
  for (int i = 0; i < nu; ++i) f.problem.unlabeled.push_back({sampler.sample(rng).lambda, field::sample_bc(rng)});
  vobs::VoSpec vs;
  vs.type = vo;
  vs.randomized_count = 5;
  for (int i = 0; i < nq; ++i) {
    if (vo == vobs::VoType::Hybrid && i % 2 == 1) vs.type = vobs::VoType::Flux;
    f.problem.queries.push_back(make_virtual(fine, *coarse, sampler.sample(rng).lambda, field::sample_bc(rng), vs, rng));
  }
  f.problem.prepare_queries();
  f.config.amortized = amortized;
  f.config.encoder_hidden = {5};
  f.config.qy_samples = 2;
  f.state = init_state(f.problem, f.dims, f.config, rng);
  // move away from the symmetric initialization so every gradient block is exercised
  for (int i = 0; i < f.state.model.num_params(); ++i) f.state.model.theta()[i] += 0.05 * standard_normal(rng);
  f.state.model.log_S_y().setConstant(std::log(0.05));
  f.state.model.log_S_X().setConstant(std::log(0.2));
  for (auto* qs : {&f.state.q_unlabeled, &f.state.q_labeled, &f.state.q_virtual})
    for (auto& v : *qs)
      for (int i = 0; i < v.size(); ++i) v[i] += 0.1 * standard_normal(rng);
  for (int i = 0; i < f.state.phi.size(); ++i) f.state.phi[i] += 0.05 * standard_normal(rng);
  update_virtual_factors(f.state, f.problem, f.config, rng);
  return f;
}

}  // namespace cgsur::testing
