// cgsur: dataset generation, training, evaluation and UQ for the
// coarse-grained probabilistic surrogate.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cgsur/config.hpp"
#include "cgsur/experiment.hpp"
#include "cgsur/io.hpp"

namespace fs = std::filesystem;
using namespace cgsur;
using io::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
};

ExperimentConfig resolve(const CommonArgs& a) {
  ExperimentConfig c = load_config(a.config);
  if (a.seed) c.seed = *a.seed;
  if (a.workers) c.workers = *a.workers;
  if (!a.out.empty()) c.out = a.out;
  c.validate();
  return c;
}

/// Loads out/manifest.json, or starts one. A manifest written for another
/// configuration aborts the command.
json open_manifest(const ExperimentConfig& c) {
  const fs::path p = fs::path(c.out) / "manifest.json";
  const std::string hash = config_hash(c);
  if (fs::exists(p)) {
    json m = io::read_json(p);
    if (m.value("config_hash", std::string()) != hash)
      throw ConfigError("config hash " + hash + " does not match " + p.string() + " (" +
                        m.value("config_hash", std::string("?")) + "); use a fresh --out directory");
    return m;
  }
  fs::create_directories(c.out);
  json m;
  m["config_hash"] = hash;
  m["data_hash"] = data_hash(c);
  m["seed"] = c.seed;
  m["seeds"] = {{"labeled", split_seed(c.seed, stream::labeled)},
                {"unlabeled", split_seed(c.seed, stream::unlabeled)},
                {"virtual_queries", split_seed(c.seed, stream::virtual_queries)},
                {"validation", split_seed(c.seed, stream::validation)},
                {"training", split_seed(c.seed, stream::training)},
                {"evaluation", split_seed(c.seed, stream::evaluation)},
                {"uq", split_seed(c.seed, stream::uq)},
                {"constraints", split_seed(c.seed, stream::constraints)}};
  m["config"] = canonical_json(c);
  m["commands"] = json::object();
  return m;
}

void save_manifest(const ExperimentConfig& c, const json& m) { io::write_json(fs::path(c.out) / "manifest.json", m); }

fs::path data_dir(const ExperimentConfig& c) { return fs::path(c.out) / "data"; }

inference::VariationalState load_trained(const ExperimentConfig& c) {
  io::CheckpointMeta meta;
  auto s = io::load_checkpoint(c.out, &meta);
  if (meta.config_hash != config_hash(c)) throw ConfigError("checkpoint was written for a different configuration");
  return s;
}

int cmd_gen(const CommonArgs& a) {
  const ExperimentConfig c = resolve(a);
  json m = open_manifest(c);
  std::cerr << "generating " << c.data.labeled << " labeled, " << c.data.unlabeled << " unlabeled, "
            << c.data.virtual_ << " virtual, " << c.data.validation << " validation (d_f=" << c.dims.fine_grid
            << ")\n";
  const auto d = experiment::generate(c);
  const json files = experiment::save_datasets(data_dir(c), d);
  m["commands"]["gen"] = {{"files", files},
                          {"counts",
                           {{"labeled", d.labeled.size()},
                            {"unlabeled", d.unlabeled.size()},
                            {"virtual", d.virtual_.size()},
                            {"validation", d.validation.size()}}},
                          {"fine_solves", d.labeled.size() + d.validation.size()}};
  save_manifest(c, m);
  return kExitOk;
}

int cmd_train(const CommonArgs& a, bool resume) {
  const ExperimentConfig c = resolve(a);
  json m = open_manifest(c);
  if (!m["commands"].contains("gen")) throw ConfigError("no datasets under " + data_dir(c).string() + "; run gen first");
  const auto d = experiment::load_datasets(data_dir(c));
  const auto p = experiment::build_problem(c, d);
  inference::TrainConfig tc = c.train;
  tc.seed = c.seed;
  inference::VariationalState s;
  const bool resuming = resume && fs::exists(fs::path(c.out) / "checkpoint.json");
  if (resuming) {
    s = load_trained(c);
    std::cerr << "resuming at iteration " << s.iteration << "\n";
  } else {
    Rng rng = make_rng(c.seed, stream::training);
    s = inference::init_state(p, c.dims, tc, rng);
  }
  io::TrainingLog log(fs::path(c.out) / "training_log.csv", resuming);
  const auto r = inference::train(s, p, tc, nullptr, [&](const inference::LogRow& row) {
    log.write(row);
    if (tc.log_every > 0 && row.iter % (100 * tc.log_every) == 0)
      std::cerr << "iter " << row.iter << "  F=" << row.F << "\n";
  });
  io::save_checkpoint(c.out, s, {config_hash(c), r.final_F, c.train.encoder_hidden});
  m["commands"]["train"] = {{"iterations", s.iteration}, {"final_F", r.final_F}, {"plateaued", r.plateaued}};
  save_manifest(c, m);
  std::cerr << "trained " << r.iterations << " iterations, final F=" << r.final_F << "\n";
  return kExitOk;
}

void write_eval(const ExperimentConfig& c, const experiment::Evaluation& e, const fs::path& dir) {
  json j = {{"R2", e.metrics.r2},
            {"LS", e.metrics.ls},
            {"N_v", e.sq_error.size()},
            {"K", c.predict.samples},
            {"config_hash", config_hash(c)},
            {"fine_solves", e.fine_solves},
            {"coarse_solves", e.coarse_solves}};
  io::write_json(dir / "eval.json", j);
  std::ofstream csv(dir / "eval_errors.csv");
  csv.precision(17);
  csv << "index,squared_error,logscore\n";
  for (std::size_t i = 0; i < e.sq_error.size(); ++i) csv << i << ',' << e.sq_error[i] << ',' << e.logscore[i] << '\n';
  std::cout << "R2 " << e.metrics.r2 << "\nLS " << e.metrics.ls << "\n";
}

struct Summary {
  double mean = 0.0, sd = 0.0;
};

Summary summarize(const std::vector<double>& v) {
  Summary s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.sd += (x - s.mean) * (x - s.mean);
  s.sd = v.size() > 1 ? std::sqrt(s.sd / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

ExperimentConfig repeat_config(const ExperimentConfig& c, int r) {
  ExperimentConfig cr = c;
  cr.seed = split_seed(c.seed, 1000 + static_cast<std::uint64_t>(r));
  return cr;
}

// Retrains on freshly sampled data for every repeat and averages the metrics.
int cmd_eval_resampled(const ExperimentConfig& c, json& m, int repeats) {
  std::vector<double> r2, ls;
  std::ofstream csv(fs::path(c.out) / "eval_repeats.csv");
  csv.precision(17);
  csv << "repeat,seed,R2,LS,final_F\n";
  for (int r = 0; r < repeats; ++r) {
    const ExperimentConfig cr = repeat_config(c, r);
    const auto res = experiment::run_pipeline(cr);
    r2.push_back(res.eval.metrics.r2);
    ls.push_back(res.eval.metrics.ls);
    csv << r << ',' << cr.seed << ',' << r2.back() << ',' << ls.back() << ',' << res.trained.result.final_F << '\n';
    std::cerr << "repeat " << r << ": R2=" << r2.back() << " LS=" << ls.back() << "\n";
  }
  const Summary a = summarize(r2), b = summarize(ls);
  json j = {{"repeats", repeats}, {"R2_mean", a.mean}, {"R2_sd", a.sd}, {"LS_mean", b.mean}, {"LS_sd", b.sd},
            {"config_hash", config_hash(c)}};
  io::write_json(fs::path(c.out) / "eval_repeats.json", j);
  m["commands"]["eval_repeats"] = j;
  std::cout << "R2 " << a.mean << " +- " << a.sd << "\nLS " << b.mean << " +- " << b.sd << "\n";
  return kExitOk;
}

// Train under each boundary scenario A-D, evaluate under each.
int cmd_eval_cross_bc(const ExperimentConfig& c, json& m, int repeats) {
  const std::vector<field::BcScenario> sc{field::BcScenario::A, field::BcScenario::B, field::BcScenario::C,
                                          field::BcScenario::D};
  const field::GrfSampler sampler(c.field);
  std::vector<std::vector<std::vector<double>>> r2(4, std::vector<std::vector<double>>(4)), ls = r2;
  for (int r = 0; r < repeats; ++r) {
    for (int t = 0; t < 4; ++t) {
      ExperimentConfig ct = repeat_config(c, r);
      ct.bc = sc[t];
      const auto d = experiment::generate(ct);
      const auto tr = experiment::train_model(ct, experiment::build_problem(ct, d));
      for (int e = 0; e < 4; ++e) {
        const io::DataSet val = experiment::sample_set("validation", sampler, sc[e], c.data.validation, ct.seed,
                                                       stream::validation, true, c.source, c.workers);
        const auto ev = experiment::evaluate(ct, tr.state, val);
        r2[t][e].push_back(ev.metrics.r2);
        ls[t][e].push_back(ev.metrics.ls);
        std::cerr << "repeat " << r << " train " << field::to_string(sc[t]) << " eval " << field::to_string(sc[e])
                  << ": R2=" << ev.metrics.r2 << " LS=" << ev.metrics.ls << "\n";
      }
    }
  }
  std::ofstream csv(fs::path(c.out) / "cross_bc.csv");
  csv.precision(17);
  csv << "train_bc,eval_bc,R2_mean,R2_sd,LS_mean,LS_sd\n";
  json grid = json::array();
  for (int t = 0; t < 4; ++t)
    for (int e = 0; e < 4; ++e) {
      const Summary a = summarize(r2[t][e]), b = summarize(ls[t][e]);
      csv << field::to_string(sc[t]) << ',' << field::to_string(sc[e]) << ',' << a.mean << ',' << a.sd << ','
          << b.mean << ',' << b.sd << '\n';
      grid.push_back({{"train", field::to_string(sc[t])},
                      {"eval", field::to_string(sc[e])},
                      {"R2", a.mean},
                      {"LS", b.mean}});
    }
  json j = {{"repeats", repeats}, {"grid", grid}, {"config_hash", config_hash(c)}};
  io::write_json(fs::path(c.out) / "cross_bc.json", j);
  m["commands"]["eval_cross_bc"] = {{"repeats", repeats}, {"entries", grid.size()}};
  std::cout << "cross-BC grid written to " << (fs::path(c.out) / "cross_bc.csv").string() << "\n";
  return kExitOk;
}

int cmd_eval(const CommonArgs& a, bool cross_bc, bool resample, int repeats) {
  const ExperimentConfig c = resolve(a);
  if (repeats < 1) throw ConfigError("--repeats must be >= 1");
  json m = open_manifest(c);
  int rc = kExitOk;
  if (cross_bc) {
    rc = cmd_eval_cross_bc(c, m, repeats);
  } else if (resample) {
    rc = cmd_eval_resampled(c, m, repeats);
  } else {
    const auto s = load_trained(c);
    const auto val = io::load_dataset(data_dir(c), "validation");
    const auto e = experiment::evaluate(c, s, val);
    write_eval(c, e, c.out);
    m["commands"]["eval"] = {{"R2", e.metrics.r2}, {"LS", e.metrics.ls}, {"fine_solves", e.fine_solves}};
  }
  save_manifest(c, m);
  return rc;
}

int cmd_uq(const CommonArgs& a, bool full, std::optional<int> samples, bool no_reference) {
  const ExperimentConfig base = resolve(a);
  json m = open_manifest(base);
  const auto s = load_trained(base);
  // sample-count switches select a run mode and are not part of the config hash
  ExperimentConfig c = base;
  if (full) c.uq.samples = 8192;
  if (samples) c.uq.samples = *samples;
  if (no_reference) c.uq.reference = false;
  if (c.uq.samples < 1) throw ConfigError("uq samples must be >= 1");
  const auto r = experiment::run_uq(c, s);
  const fs::path out = c.out;
  {
    std::ofstream csv(out / "uq_samples.csv");
    csv.precision(17);
    csv << "index,surrogate" << (r.reference.empty() ? "" : ",reference") << "\n";
    for (std::size_t i = 0; i < r.surrogate.size(); ++i) {
      csv << i << ',' << r.surrogate[i];
      if (!r.reference.empty()) csv << ',' << r.reference[i];
      csv << '\n';
    }
  }
  {
    std::ofstream csv(out / "uq_density.csv");
    csv.precision(17);
    csv << "bin_lo,bin_hi,surrogate" << (r.reference.empty() ? "" : ",reference") << "\n";
    const int bins = static_cast<int>(r.hist_surrogate.density.size());
    const double w = (r.hist_surrogate.hi - r.hist_surrogate.lo) / bins;
    for (int b = 0; b < bins; ++b) {
      csv << r.hist_surrogate.lo + b * w << ',' << r.hist_surrogate.lo + (b + 1) * w << ','
          << r.hist_surrogate.density[b];
      if (!r.reference.empty()) csv << ',' << r.hist_reference.density[b];
      csv << '\n';
    }
  }
  {
    std::ofstream csv(out / "uq_kde.csv");
    csv.precision(17);
    csv << "qoi,surrogate" << (r.reference.empty() ? "" : ",reference") << "\n";
    for (std::size_t g = 0; g < r.grid.size(); ++g) {
      csv << r.grid[g] << ',' << r.kde_surrogate[g];
      if (!r.reference.empty()) csv << ',' << r.kde_reference[g];
      csv << '\n';
    }
  }
  json j = {{"N", r.surrogate.size()}, {"reference", !r.reference.empty()}, {"config_hash", config_hash(base)}};
  if (!r.reference.empty()) j["KS"] = r.ks;
  io::write_json(out / "uq.json", j);
  m["commands"]["uq"] = j;
  save_manifest(base, m);
  std::cout << "N " << r.surrogate.size() << "\n";
  if (!r.reference.empty()) std::cout << "KS " << r.ks << "\n";
  return kExitOk;
}

void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("--config", a.config, "experiment config (TOML)")->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", a.seed, "root seed, overrides [experiment].seed");
  sub->add_option("--workers", a.workers, "threads for fine-grid solves during generation");
  sub->add_option("--out", a.out, "output directory, overrides [experiment].out");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cgsur: physics-constrained coarse-grained surrogate for 2D elliptic problems"};
  app.require_subcommand(1);
  CommonArgs gen_a, train_a, eval_a, uq_a;
  auto* gen = app.add_subcommand("gen", "sample and solve the datasets");
  add_common(gen, gen_a);
  auto* train = app.add_subcommand("train", "fit the surrogate by stochastic variational inference");
  add_common(train, train_a);
  bool resume = false;
  train->add_flag("--resume", resume, "continue from the checkpoint in --out");
  auto* eval = app.add_subcommand("eval", "R2 and log score on the validation set");
  add_common(eval, eval_a);
  bool cross_bc = false, resample = false;
  int repeats = 3;
  eval->add_flag("--cross-bc", cross_bc, "train under each BC scenario A-D and evaluate under each");
  eval->add_flag("--resample", resample, "retrain on resampled data and average");
  eval->add_option("--repeats", repeats, "repeats for --resample and --cross-bc")->capture_default_str();
  auto* uq = app.add_subcommand("uq", "propagate input uncertainty to the centre value");
  add_common(uq, uq_a);
  bool full = false, no_reference = false;
  std::optional<int> samples;
  uq->add_flag("--full", full, "8192 samples");
  uq->add_option("--samples", samples, "number of input samples");
  uq->add_flag("--no-reference", no_reference, "skip the fine-grid Monte Carlo reference");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen(gen_a);
    if (*train) return cmd_train(train_a, resume);
    if (*eval) return cmd_eval(eval_a, cross_bc, resample, repeats);
    if (*uq) return cmd_uq(uq_a, full, samples, no_reference);
  } catch (const input_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const numerical_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
