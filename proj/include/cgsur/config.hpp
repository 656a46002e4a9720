#pragma once

// Experiment configuration: TOML file with one table per module, a canonical
// JSON form and a stable hash of it.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#define TOML_EXCEPTIONS 1
#include <json.hpp>
#include <toml.hpp>

#include "cgsur/errors.hpp"
#include "cgsur/field.hpp"
#include "cgsur/genmodel.hpp"
#include "cgsur/predict.hpp"
#include "cgsur/train.hpp"
#include "cgsur/vobs.hpp"

namespace cgsur {

using json = nlohmann::ordered_json;

struct DataSizes {
  int labeled = 16;
  int unlabeled = 0;
  int virtual_ = 0;
  int validation = 256;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::string out = "runs/experiment";
  int workers = 1;

  field::GrfSpec field;
  field::BcScenario bc = field::BcScenario::UniformDefault;
  double source = 0.0;
  model::ModelDims dims;
  bool dim_z_set = false;
  DataSizes data;
  vobs::VoSpec vo{vobs::VoType::None};
  inference::TrainConfig train;
  predict::PredictOptions predict;
  predict::UqOptions uq;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    try {
      field.validate();
      dims.validate();
    } catch (const input_error& e) {
      fail(e.what());
    }
    if (field.grid_size != dims.fine_grid) fail("field.grid and model.fine_grid differ");
    if (data.labeled < 0 || data.unlabeled < 0 || data.virtual_ < 0 || data.validation < 0)
      fail("dataset sizes must be >= 0");
    if (data.labeled + data.unlabeled + data.virtual_ == 0) fail("at least one training datum is required");
    if (data.virtual_ > 0 && vo.type == vobs::VoType::None) fail("data.virtual > 0 needs vobs.type other than none");
    if (workers < 1) fail("workers must be >= 1");
    if (predict.samples < 1) fail("predict.samples must be >= 1");
    if (uq.samples < 1) fail("uq.samples must be >= 1");
    if (uq.bins < 1) fail("uq.bins must be >= 1");
    if (vo.randomized_count < 1) fail("vobs.randomized_count must be >= 1");
    if (!(vo.randomized_scale > 0.0)) fail("vobs.randomized_scale must be > 0");
    try {
      train.validate();
    } catch (const input_error& e) {
      fail(e.what());
    }
  }
};

namespace detail {

// Reads typed values out of a toml table and rejects keys nobody asked for.
class TableReader {
 public:
  TableReader(const toml::table* t, std::string name) : t_(t), name_(std::move(name)) {}

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!t_) return;
    const toml::node* n = t_->get(key);
    if (!n) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = n->value<bool>();
      if (!v) bad(key, "a boolean");
      out = *v;
    } else if constexpr (std::is_integral_v<T>) {
      auto v = n->value<std::int64_t>();
      if (!v || !n->is_integer()) bad(key, "an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (*v < 0) bad(key, "a non-negative integer");
      out = static_cast<T>(*v);
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = n->value<double>();
      if (!v) bad(key, "a number");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::string>) {
      auto v = n->value<std::string>();
      if (!v) bad(key, "a string");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      const toml::array* a = n->as_array();
      if (!a) bad(key, "an array of integers");
      out.clear();
      for (const auto& e : *a) {
        auto v = e.value<std::int64_t>();
        if (!v || !e.is_integer()) bad(key, "an array of integers");
        out.push_back(static_cast<int>(*v));
      }
    }
  }

  bool has(const char* key) const { return t_ && t_->contains(key); }

  void finish() const {
    if (!t_) return;
    for (const auto& [k, v] : *t_)
      if (!seen_.count(std::string(k.str()))) throw ConfigError("unknown key [" + name_ + "]." + std::string(k.str()));
  }

 private:
  [[noreturn]] void bad(const char* key, const char* what) const {
    throw ConfigError("[" + name_ + "]." + key + " must be " + what);
  }
  const toml::table* t_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text, const std::string& source_name = "config") {
  toml::table root;
  try {
    root = toml::parse(text, source_name);
  } catch (const toml::parse_error& e) {
    std::ostringstream m;
    m << source_name << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError(m.str());
  }
  static const std::set<std::string> sections{"experiment", "field", "model", "data", "vobs", "train", "predict", "uq"};
  for (const auto& [k, v] : root) {
    if (!sections.count(std::string(k.str()))) throw ConfigError("unknown section [" + std::string(k.str()) + "]");
    if (!v.is_table()) throw ConfigError("[" + std::string(k.str()) + "] must be a table");
  }
  auto table = [&](const char* n) { return root.get_as<toml::table>(n); };

  ExperimentConfig c;
  std::string s;
  try {
    detail::TableReader e(table("experiment"), "experiment");
    e.get("name", c.name);
    e.get("seed", c.seed);
    e.get("out", c.out);
    e.get("workers", c.workers);
    e.finish();

    detail::TableReader f(table("field"), "field");
    f.get("grid", c.field.grid_size);
    f.get("mean", c.field.mean);
    f.get("stddev", c.field.stddev);
    f.get("length_scale", c.field.length_scale);
    s = std::string(field::to_string(c.bc));
    f.get("bc", s);
    c.bc = field::parse_bc_scenario(s);
    f.get("source", c.source);
    f.finish();
    c.dims.fine_grid = c.field.grid_size;
    c.vo.source = c.source;

    detail::TableReader m(table("model"), "model");
    m.get("coarse_grid", c.dims.coarse_grid);
    c.dim_z_set = m.has("dim_z");
    c.dims.dim_z = model::ModelDims::default_dim_z(c.dims.coarse_grid);
    m.get("dim_z", c.dims.dim_z);
    m.get("hidden", c.dims.hidden);
    s = nn::to_string(c.dims.activation);
    m.get("activation", s);
    c.dims.activation = nn::parse_activation(s);
    m.finish();

    detail::TableReader d(table("data"), "data");
    d.get("labeled", c.data.labeled);
    d.get("unlabeled", c.data.unlabeled);
    d.get("virtual", c.data.virtual_);
    d.get("validation", c.data.validation);
    d.finish();

    detail::TableReader v(table("vobs"), "vobs");
    s = vobs::to_string(c.vo.type);
    v.get("type", s);
    c.vo.type = vobs::parse_vo_type(s);
    v.get("randomized_count", c.vo.randomized_count);
    v.get("randomized_scale", c.vo.randomized_scale);
    v.finish();

    auto& t = c.train;
    detail::TableReader r(table("train"), "train");
    r.get("lr", t.adam.lr);
    r.get("factor_lr", t.factor_adam.lr);
    r.get("mc_samples", t.mc_samples);
    r.get("iterations", t.iterations);
    r.get("labeled_batch", t.labeled_batch);
    r.get("unlabeled_batch", t.unlabeled_batch);
    r.get("virtual_batch", t.virtual_batch);
    r.get("prior_scale", t.prior_scale);
    r.get("labeled_weight", t.labeled_weight);
    r.get("unlabeled_weight", t.unlabeled_weight);
    r.get("virtual_weight", t.virtual_weight);
    r.get("update_every", t.update_every);
    r.get("qy_samples", t.qy_samples);
    r.get("tau_start", t.tau_start);
    r.get("tau_end", t.tau_end);
    r.get("tau_iterations", t.tau_iterations);
    r.get("energy_block", t.energy_block);
    r.get("max_constraints", t.max_constraints);
    r.get("plateau_window", t.plateau_window);
    r.get("plateau_tol", t.plateau_tol);
    r.get("min_iterations", t.min_iterations);
    r.get("amortized", t.amortized);
    r.get("encoder_hidden", t.encoder_hidden);
    r.get("init_logvar_z", t.init_logvar_z);
    r.get("init_logvar_X", t.init_logvar_X);
    r.get("init_S_X", t.init_S_X);
    r.get("gamma_a0", t.gamma_prior.alpha);
    r.get("gamma_b0", t.gamma_prior.beta);
    r.get("log_every", t.log_every);
    r.finish();

    auto& p = c.predict;
    detail::TableReader pr(table("predict"), "predict");
    pr.get("samples", p.samples);
    s = p.infer.mode == predict::InferMode::Amortized ? "amortized" : "optimize";
    pr.get("infer", s);
    if (s == "amortized") p.infer.mode = predict::InferMode::Amortized;
    else if (s == "optimize") p.infer.mode = predict::InferMode::Optimize;
    else throw ConfigError("[predict].infer must be amortized or optimize");
    pr.get("infer_steps", p.infer.steps);
    pr.get("infer_lr", p.infer.lr);
    pr.get("infer_mc", p.infer.mc_samples);
    pr.finish();

    detail::TableReader u(table("uq"), "uq");
    u.get("samples", c.uq.samples);
    u.get("reference", c.uq.reference);
    u.get("bins", c.uq.bins);
    u.get("grid_points", c.uq.grid_points);
    u.finish();
  } catch (const ConfigError&) {
    throw;
  } catch (const input_error& e) {
    throw ConfigError(e.what());
  }
  c.uq.infer = c.predict.infer;
  c.uq.bc_scenario = c.bc;
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

/// Every setting that affects results, in a fixed key order. Output paths and
/// the worker count are excluded.
inline json canonical_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  json j;
  j["experiment"] = {{"name", c.name}, {"seed", c.seed}};
  j["field"] = {{"grid", c.field.grid_size},           {"mean", c.field.mean},
                {"stddev", c.field.stddev},            {"length_scale", c.field.length_scale},
                {"bc", std::string(field::to_string(c.bc))}, {"source", c.source}};
  j["model"] = {{"coarse_grid", c.dims.coarse_grid},
                {"dim_z", c.dims.dim_z},
                {"hidden", c.dims.hidden},
                {"activation", nn::to_string(c.dims.activation)}};
  j["data"] = {{"labeled", c.data.labeled},
               {"unlabeled", c.data.unlabeled},
               {"virtual", c.data.virtual_},
               {"validation", c.data.validation}};
  j["vobs"] = {{"type", vobs::to_string(c.vo.type)},
               {"randomized_count", c.vo.randomized_count},
               {"randomized_scale", c.vo.randomized_scale}};
  j["train"] = {{"lr", t.adam.lr},
                {"factor_lr", t.factor_adam.lr},
                {"mc_samples", t.mc_samples},
                {"iterations", t.iterations},
                {"labeled_batch", t.labeled_batch},
                {"unlabeled_batch", t.unlabeled_batch},
                {"virtual_batch", t.virtual_batch},
                {"prior_scale", t.prior_scale},
                {"labeled_weight", t.labeled_weight},
                {"unlabeled_weight", t.unlabeled_weight},
                {"virtual_weight", t.virtual_weight},
                {"update_every", t.update_every},
                {"qy_samples", t.qy_samples},
                {"tau_start", t.tau_start},
                {"tau_end", t.tau_end},
                {"tau_iterations", t.tau_iterations},
                {"energy_block", t.energy_block},
                {"max_constraints", t.max_constraints},
                {"plateau_window", t.plateau_window},
                {"plateau_tol", t.plateau_tol},
                {"min_iterations", t.min_iterations},
                {"amortized", t.amortized},
                {"encoder_hidden", t.encoder_hidden},
                {"init_logvar_z", t.init_logvar_z},
                {"init_logvar_X", t.init_logvar_X},
                {"init_S_X", t.init_S_X},
                {"gamma_a0", t.gamma_prior.alpha},
                {"gamma_b0", t.gamma_prior.beta}};
  j["predict"] = {{"samples", c.predict.samples},
                  {"infer", c.predict.infer.mode == predict::InferMode::Amortized ? "amortized" : "optimize"},
                  {"infer_steps", c.predict.infer.steps},
                  {"infer_lr", c.predict.infer.lr},
                  {"infer_mc", c.predict.infer.mc_samples}};
  j["uq"] = {{"samples", c.uq.samples},
             {"reference", c.uq.reference},
             {"bins", c.uq.bins},
             {"grid_points", c.uq.grid_points}};
  return j;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex;
  o.width(16);
  o.fill('0');
  o << v;
  return o.str();
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(canonical_json(c).dump())); }

/// Hash of the settings that determine the generated datasets only.
inline std::string data_hash(const ExperimentConfig& c) {
  json j = canonical_json(c);
  json d;
  d["seed"] = c.seed;
  d["field"] = j["field"];
  d["coarse_grid"] = c.dims.coarse_grid;
  d["data"] = j["data"];
  d["vobs"] = j["vobs"];
  return hex64(fnv1a(d.dump()));
}

}  // namespace cgsur
