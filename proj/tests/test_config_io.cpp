#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cgsur/config.hpp"
#include "cgsur/experiment.hpp"
#include "cgsur/io.hpp"
#include "tiny_problem.hpp"

using namespace cgsur;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cgsur_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kTiny = R"(
[experiment]
seed = 4
[field]
grid = 8
[model]
coarse_grid = 2
hidden = [8, 16]
[data]
labeled = 3
unlabeled = 2
virtual = 2
validation = 4
[vobs]
type = "hybrid"
randomized_count = 6
[train]
iterations = 40
plateau_window = 0
[predict]
samples = 8
infer_steps = 5
)";

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const ExperimentConfig c = parse_config(kTiny);
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.dims.fine_grid, 8);
  EXPECT_EQ(c.dims.coarse_grid, 2);
  EXPECT_EQ(c.dims.dim_z, 2);  // half the coarse cells
  EXPECT_EQ(c.dims.hidden, (std::vector<int>{8, 16}));
  EXPECT_EQ(c.vo.type, vobs::VoType::Hybrid);
  EXPECT_EQ(c.vo.randomized_count, 6);
  EXPECT_EQ(c.train.iterations, 40);
  EXPECT_DOUBLE_EQ(c.field.stddev, 0.8);
  EXPECT_EQ(parse_config("[data]\nlabeled = 1\n").data.validation, 256);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("[data]\nlabeled = 1\nbogus = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("[nosuch]\n"), ConfigError);
  EXPECT_THROW(parse_config("[data]\nlabeled = \"x\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[data]\nlabeled = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("[field]\ngrid = 10\n[model]\ncoarse_grid = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("[data]\nlabeled = 1\nvirtual = 3\n"), ConfigError);  // no vobs type
  EXPECT_THROW(parse_config("[vobs]\ntype = \"magic\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[field\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/cfg.toml"), ConfigError);
}

TEST(Config, HashIgnoresFormattingButNotValues) {
  const ExperimentConfig a = parse_config(kTiny);
  const ExperimentConfig b = parse_config(std::string("# comment\n") + kTiny);
  EXPECT_EQ(config_hash(a), config_hash(b));
  ExperimentConfig c = a;
  c.train.iterations = 41;
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(data_hash(a), data_hash(c));
  c.seed = 5;
  EXPECT_NE(data_hash(a), data_hash(c));
  c = a;
  c.out = "elsewhere";
  c.workers = 4;
  EXPECT_EQ(config_hash(a), config_hash(c));
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Io, DatasetRoundTripAndWorkerIndependence) {
  ExperimentConfig c = parse_config(kTiny);
  const auto d1 = experiment::generate(c);
  c.workers = 3;
  const auto d3 = experiment::generate(c);
  for (std::size_t i = 0; i < d1.labeled.size(); ++i) {
    EXPECT_EQ(d1.labeled.x[i], d3.labeled.x[i]);
    EXPECT_EQ(d1.labeled.y[i], d3.labeled.y[i]);
  }
  const fs::path dir = scratch("ds");
  const io::json files = experiment::save_datasets(dir, d1);
  for (const auto& [f, bytes] : files.items()) EXPECT_EQ(fs::file_size(dir / f), bytes.get<std::uintmax_t>());
  EXPECT_EQ(fs::file_size(dir / "labeled_y.f64"), 3u * 81u * 8u);
  const auto back = experiment::load_datasets(dir);
  EXPECT_EQ(back.labeled.x, d1.labeled.x);
  EXPECT_EQ(back.labeled.y, d1.labeled.y);
  EXPECT_EQ(back.unlabeled.x, d1.unlabeled.x);
  EXPECT_TRUE(back.unlabeled.y.empty());
  EXPECT_EQ(back.validation.bc[2].as_vector(), d1.validation.bc[2].as_vector());
  ASSERT_EQ(back.observables.size(), 2u);
  for (std::size_t q = 0; q < 2; ++q) {
    ASSERT_EQ(back.observables[q].sets.size(), d1.observables[q].sets.size());
    for (std::size_t s = 0; s < back.observables[q].sets.size(); ++s) {
      EXPECT_EQ(back.observables[q].sets[s].gamma, d1.observables[q].sets[s].gamma);
      EXPECT_EQ(back.observables[q].sets[s].alpha, d1.observables[q].sets[s].alpha);
      EXPECT_EQ(back.observables[q].sets[s].precision, d1.observables[q].sets[s].precision);
    }
  }
  // a truncated blob is detected
  fs::resize_file(dir / "labeled_y.f64", 100);
  EXPECT_THROW(io::load_dataset(dir, "labeled"), IoError);
}

TEST(Io, CheckpointRoundTrip) {
  for (bool amortized : {false, true}) {
    auto f = cgsur::testing::tiny(amortized, vobs::VoType::Hybrid, 2, 2, 2);
    f.state.iteration = 123;
    f.state.tau = 7.5;
    const fs::path dir = scratch(amortized ? "ckpt_a" : "ckpt_b");
    io::save_checkpoint(dir, f.state, {"abc", -4.25, f.config.encoder_hidden});
    io::CheckpointMeta meta;
    const auto s = io::load_checkpoint(dir, &meta);
    EXPECT_EQ(meta.config_hash, "abc");
    EXPECT_EQ(meta.final_F, -4.25);
    EXPECT_EQ(s.iteration, 123);
    EXPECT_EQ(s.tau, 7.5);
    EXPECT_EQ(s.model.theta(), f.state.model.theta());
    EXPECT_EQ(s.phi, f.state.phi);
    EXPECT_EQ(s.q_unlabeled, f.state.q_unlabeled);
    EXPECT_EQ(s.q_labeled, f.state.q_labeled);
    EXPECT_EQ(s.q_virtual, f.state.q_virtual);
    ASSERT_EQ(s.gammas.size(), f.state.gammas.size());
    for (std::size_t g = 0; g < s.gammas.size(); ++g) EXPECT_EQ(s.gammas[g].alpha, f.state.gammas[g].alpha);
    EXPECT_EQ(s.amortized, amortized);
  }
}

TEST(Experiment, EvaluationDoesNoFineSolves) {
  ExperimentConfig c = parse_config(kTiny);
  const auto r = experiment::run_pipeline(c);
  EXPECT_EQ(r.eval.fine_solves, 0u);
  EXPECT_EQ(r.eval.coarse_solves, 4u * 8u);
  EXPECT_EQ(r.eval.sq_error.size(), 4u);
  EXPECT_TRUE(std::isfinite(r.eval.metrics.r2));
}

// ----- the command-line driver ------------------------------------------------

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(CGSUR_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "cfg.toml";
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Cli, FullCycleResumeAndDeterminism) {
  const fs::path dir = scratch("cli");
  const fs::path cfg = write_config(dir, kTiny);
  const std::string base = "--config " + cfg.string() + " --out " + (dir / "run").string();
  ASSERT_EQ(run("gen " + base), 0);
  const std::string y1 = slurp(dir / "run/data/labeled_y.f64");
  const std::string m1 = slurp(dir / "run/manifest.json");
  ASSERT_EQ(run("gen " + base), 0);
  EXPECT_EQ(slurp(dir / "run/data/labeled_y.f64"), y1);
  EXPECT_EQ(slurp(dir / "run/manifest.json"), m1);

  ASSERT_EQ(run("train " + base), 0);
  auto ck = io::read_json(dir / "run/checkpoint.json");
  EXPECT_EQ(ck["iteration"].get<long>(), 40);
  // the last logged F equals the checkpoint's
  std::ifstream log(dir / "run/training_log.csv");
  std::string line, last;
  while (std::getline(log, line)) last = line;
  const double logged = std::stod(last.substr(last.find(',') + 1));
  EXPECT_DOUBLE_EQ(logged, ck["final_F"].get<double>());

  ASSERT_EQ(run("train --resume " + base), 0);
  EXPECT_EQ(io::read_json(dir / "run/checkpoint.json")["iteration"].get<long>(), 80);

  ASSERT_EQ(run("eval " + base), 0);
  const std::string e1 = slurp(dir / "run/eval.json");
  ASSERT_EQ(run("eval " + base), 0);
  EXPECT_EQ(slurp(dir / "run/eval.json"), e1);
  const auto ej = io::read_json(dir / "run/eval.json");
  EXPECT_EQ(ej["fine_solves"].get<int>(), 0);
  EXPECT_EQ(ej["N_v"].get<int>(), 4);
  EXPECT_EQ(ej["K"].get<int>(), 8);

  ASSERT_EQ(run("uq --samples 50 " + base), 0);
  const auto uj = io::read_json(dir / "run/uq.json");
  EXPECT_EQ(uj["N"].get<int>(), 50);
  EXPECT_GE(uj["KS"].get<double>(), 0.0);
  EXPECT_LE(uj["KS"].get<double>(), 1.0);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli_codes");
  const fs::path cfg = write_config(dir, kTiny);
  const std::string out = " --out " + (dir / "run").string();
  EXPECT_EQ(run("gen --config " + cfg.string() + out), 0);
  // same directory, different seed: hash mismatch
  EXPECT_EQ(run("gen --seed 99 --config " + cfg.string() + out), 2);
  // malformed config
  const fs::path bad = dir / "bad.toml";
  std::ofstream(bad) << "[data]\nlabeled = -3\n";
  EXPECT_EQ(run("gen --config " + bad.string() + " --out " + (dir / "bad").string()), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("gen"), 2);
  // train without data
  EXPECT_EQ(run("train --config " + cfg.string() + " --out " + (dir / "empty").string()), 2);
  // numerical failure: a zero initial coarse variance passes the parser but
  // makes the loss non-finite
  const fs::path nan_cfg = dir / "nan.toml";
  std::ofstream(nan_cfg) << kTiny << "\n[uq]\nsamples = 4\n";
  std::string text = slurp(nan_cfg);
  text.replace(text.find("iterations = 40"), 15, "iterations = 40\ninit_S_X = 0.0");
  std::ofstream(nan_cfg, std::ios::trunc) << text;
  const std::string nout = " --out " + (dir / "nan").string();
  ASSERT_EQ(run("gen --config " + nan_cfg.string() + nout), 0);
  EXPECT_EQ(run("train --config " + nan_cfg.string() + nout), 3);
}
