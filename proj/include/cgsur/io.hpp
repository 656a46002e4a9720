#pragma once

// On-disk formats: JSON metadata next to raw little-endian float64 blobs.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cgsur/elbo.hpp"
#include "cgsur/errors.hpp"
#include "cgsur/field.hpp"
#include "cgsur/train.hpp"
#include "cgsur/vobs.hpp"

namespace cgsur::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

inline json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

class BlobWriter {
 public:
  explicit BlobWriter(const fs::path& p) : path_(p), out_(p, std::ios::binary) {
    if (!out_) throw IoError("cannot write " + p.string());
  }
  void put(double v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(double));
    ++count_;
  }
  void put(const Eigen::Ref<const Eigen::VectorXd>& v) {
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    count_ += static_cast<std::size_t>(v.size());
  }
  std::size_t close() {
    out_.close();
    if (!out_) throw IoError("write failed: " + path_.string());
    return count_ * sizeof(double);
  }

 private:
  fs::path path_;
  std::ofstream out_;
  std::size_t count_ = 0;
};

class BlobReader {
 public:
  explicit BlobReader(const fs::path& p) : path_(p) {
    std::ifstream in(p, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot read " + p.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % sizeof(double) != 0) throw IoError(p.string() + ": size is not a multiple of 8");
    data_.resize(bytes / sizeof(double));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(data_.data()), static_cast<std::streamsize>(bytes));
  }
  double take() {
    need(1);
    return data_[pos_++];
  }
  Eigen::VectorXd take(std::size_t n) {
    need(n);
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(data_.data() + pos_, static_cast<Eigen::Index>(n));
    pos_ += n;
    return v;
  }
  void expect_end() const {
    if (pos_ != data_.size()) throw IoError(path_.string() + ": trailing data");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw IoError(path_.string() + ": truncated");
  }
  fs::path path_;
  std::vector<double> data_;
  std::size_t pos_ = 0;
};

// ----- datasets ---------------------------------------------------------------

struct DataSet {
  std::string name;
  std::vector<Eigen::VectorXd> x;                // log-conductivity
  std::vector<field::BoundaryCoeffs> bc;
  std::vector<Eigen::VectorXd> y;                // full nodal solutions, may be empty
  std::size_t size() const { return x.size(); }
  bool labeled() const { return !y.empty(); }
};

/// Writes <name>.json and one blob per array; returns file name -> bytes.
inline json save_dataset(const fs::path& dir, const DataSet& d) {
  const int dim_x = d.x.empty() ? 0 : static_cast<int>(d.x[0].size());
  const int dim_y = d.y.empty() ? 0 : static_cast<int>(d.y[0].size());
  json files;
  BlobWriter wx(dir / (d.name + "_lambda.f64"));
  for (const auto& v : d.x) wx.put(v);
  files[d.name + "_lambda.f64"] = wx.close();
  BlobWriter wb(dir / (d.name + "_bc.f64"));
  for (const auto& b : d.bc) wb.put(b.as_vector());
  files[d.name + "_bc.f64"] = wb.close();
  if (d.labeled()) {
    BlobWriter wy(dir / (d.name + "_y.f64"));
    for (const auto& v : d.y) wy.put(v);
    files[d.name + "_y.f64"] = wy.close();
  }
  json meta = {{"name", d.name}, {"count", d.size()}, {"dim_x", dim_x}, {"dim_y", dim_y}, {"files", files}};
  write_json(dir / (d.name + ".json"), meta);
  return files;
}

inline DataSet load_dataset(const fs::path& dir, const std::string& name) {
  const json meta = read_json(dir / (name + ".json"));
  DataSet d;
  d.name = name;
  const std::size_t n = meta.at("count").get<std::size_t>();
  const std::size_t dx = meta.at("dim_x").get<std::size_t>();
  const std::size_t dy = meta.at("dim_y").get<std::size_t>();
  for (const auto& [file, bytes] : meta.at("files").items()) {
    if (!fs::exists(dir / file)) throw IoError("missing dataset file " + (dir / file).string());
    if (fs::file_size(dir / file) != bytes.get<std::uintmax_t>())
      throw IoError("size of " + file + " does not match its manifest");
  }
  BlobReader rx(dir / (name + "_lambda.f64"));
  BlobReader rb(dir / (name + "_bc.f64"));
  for (std::size_t i = 0; i < n; ++i) {
    d.x.push_back(rx.take(dx));
    d.bc.push_back(field::BoundaryCoeffs::from_vector(rb.take(4)));
  }
  rx.expect_end();
  rb.expect_end();
  if (dy > 0) {
    BlobReader ry(dir / (name + "_y.f64"));
    for (std::size_t i = 0; i < n; ++i) d.y.push_back(ry.take(dy));
    ry.expect_end();
  }
  return d;
}

// ----- virtual observables ------------------------------------------------------

/// Sparse storage of the constraint rows of every query.
inline json save_observables(const fs::path& dir, const std::vector<vobs::QueryObservables>& qs) {
  json queries = json::array();
  BlobWriter w(dir / "virtual_obs.f64");
  for (const auto& q : qs) {
    json sets = json::array();
    for (const auto& s : q.sets) {
      std::vector<Eigen::Triplet<double>> nz;
      for (int r = 0; r < s.gamma.rows(); ++r)
        for (int c = 0; c < s.gamma.cols(); ++c)
          if (s.gamma(r, c) != 0.0) nz.emplace_back(r, c, s.gamma(r, c));
      sets.push_back({{"kind", s.kind},
                      {"precision", vobs::to_string(s.precision)},
                      {"rows", s.rows()},
                      {"cols", s.gamma.cols()},
                      {"nnz", nz.size()}});
      w.put(s.alpha);
      if (s.precision == vobs::Precision::Fixed) w.put(s.lambda);
      for (const auto& t : nz) {
        w.put(static_cast<double>(t.row()));
        w.put(static_cast<double>(t.col()));
        w.put(t.value());
      }
    }
    queries.push_back({{"energy", q.energy}, {"sets", sets}});
  }
  const std::size_t bytes = w.close();
  write_json(dir / "virtual_obs.json", {{"queries", queries}, {"bytes", bytes}});
  return {{"virtual_obs.f64", bytes}};
}

inline std::vector<vobs::QueryObservables> load_observables(const fs::path& dir) {
  const json meta = read_json(dir / "virtual_obs.json");
  BlobReader r(dir / "virtual_obs.f64");
  std::vector<vobs::QueryObservables> out;
  for (const auto& qj : meta.at("queries")) {
    vobs::QueryObservables q;
    q.energy = qj.at("energy").get<bool>();
    for (const auto& sj : qj.at("sets")) {
      vobs::LinearConstraintSet s;
      s.kind = sj.at("kind").get<std::string>();
      s.precision = vobs::parse_precision(sj.at("precision").get<std::string>());
      const int rows = sj.at("rows").get<int>(), cols = sj.at("cols").get<int>();
      s.gamma = Eigen::MatrixXd::Zero(rows, cols);
      s.alpha = r.take(static_cast<std::size_t>(rows));
      if (s.precision == vobs::Precision::Fixed) s.lambda = r.take(static_cast<std::size_t>(rows));
      const std::size_t nnz = sj.at("nnz").get<std::size_t>();
      for (std::size_t k = 0; k < nnz; ++k) {
        const auto i = static_cast<int>(r.take()), j = static_cast<int>(r.take());
        if (i < 0 || i >= rows || j < 0 || j >= cols) throw IoError("virtual_obs: index out of range");
        s.gamma(i, j) = r.take();
      }
      q.sets.push_back(std::move(s));
    }
    out.push_back(std::move(q));
  }
  r.expect_end();
  return out;
}

// ----- checkpoints --------------------------------------------------------------

struct CheckpointMeta {
  std::string config_hash;
  double final_F = 0.0;
  std::vector<int> encoder_hidden;
};

inline void save_checkpoint(const fs::path& dir, const inference::VariationalState& s, const CheckpointMeta& meta) {
  const auto& d = s.model.dims();
  BlobWriter w(dir / "checkpoint.f64");
  w.put(s.model.theta());
  w.put(s.phi);
  for (const auto* v : {&s.q_unlabeled, &s.q_labeled, &s.q_virtual})
    for (const auto& f : *v) w.put(f);
  for (const auto& q : s.q_y) {
    w.put(q.mean);
    w.put(q.var);
    w.put(q.const_term);
  }
  for (const auto& g : s.gammas) {
    w.put(g.alpha);
    w.put(g.beta);
  }
  const std::size_t bytes = w.close();
  json j = {{"config_hash", meta.config_hash},
            {"iteration", s.iteration},
            {"final_F", meta.final_F},
            {"tau", s.tau},
            {"model",
             {{"fine_grid", d.fine_grid},
              {"coarse_grid", d.coarse_grid},
              {"dim_z", d.dim_z},
              {"hidden", d.hidden},
              {"activation", nn::to_string(d.activation)}}},
            {"num_params", s.model.num_params()},
            {"amortized", s.amortized},
            {"encoder_hidden", meta.encoder_hidden},
            {"num_phi", s.phi.size()},
            {"unlabeled", s.q_unlabeled.size()},
            {"labeled", s.q_labeled.size()},
            {"virtual", s.q_virtual.size()},
            {"q_y", s.q_y.size()},
            {"gammas", s.gammas.size()},
            {"bytes", bytes}};
  write_json(dir / "checkpoint.json", j);
}

inline inference::VariationalState load_checkpoint(const fs::path& dir, CheckpointMeta* meta_out = nullptr) {
  if (!fs::exists(dir / "checkpoint.json")) throw IoError("no checkpoint in " + dir.string());
  const json j = read_json(dir / "checkpoint.json");
  model::ModelDims d;
  const json& mj = j.at("model");
  d.fine_grid = mj.at("fine_grid").get<int>();
  d.coarse_grid = mj.at("coarse_grid").get<int>();
  d.dim_z = mj.at("dim_z").get<int>();
  d.hidden = mj.at("hidden").get<std::vector<int>>();
  d.activation = nn::parse_activation(mj.at("activation").get<std::string>());
  inference::VariationalState s;
  s.model = model::ModelParams(d);
  if (s.model.num_params() != j.at("num_params").get<int>()) throw IoError("checkpoint: parameter count mismatch");
  BlobReader r(dir / "checkpoint.f64");
  s.model.theta() = r.take(static_cast<std::size_t>(s.model.num_params()));
  s.amortized = j.at("amortized").get<bool>();
  CheckpointMeta meta;
  meta.config_hash = j.at("config_hash").get<std::string>();
  meta.final_F = j.at("final_F").get<double>();
  meta.encoder_hidden = j.at("encoder_hidden").get<std::vector<int>>();
  if (s.amortized) s.encoder = nn::Network(nn::Architecture::mlp(d.dim_x(), meta.encoder_hidden, 2 * d.dim_z));
  s.phi = r.take(j.at("num_phi").get<std::size_t>());
  if (s.amortized && s.phi.size() != s.encoder.num_params()) throw IoError("checkpoint: encoder size mismatch");
  const int dz = d.dim_z, dX = d.dim_X();
  auto factors = [&](std::vector<Eigen::VectorXd>& v, const char* key, int len) {
    v.resize(j.at(key).get<std::size_t>());
    for (auto& f : v) f = r.take(static_cast<std::size_t>(len));
  };
  factors(s.q_unlabeled, "unlabeled", 2 * dz);
  factors(s.q_labeled, "labeled", 2 * dz + 2 * dX);
  factors(s.q_virtual, "virtual", 2 * dz + 2 * dX);
  s.q_y.resize(j.at("q_y").get<std::size_t>());
  for (auto& q : s.q_y) {
    q.mean = r.take(static_cast<std::size_t>(s.model.dim_y()));
    q.var = r.take(static_cast<std::size_t>(s.model.dim_y()));
    q.const_term = r.take();
  }
  s.gammas.resize(j.at("gammas").get<std::size_t>());
  for (auto& g : s.gammas) {
    g.alpha = r.take();
    g.beta = r.take();
  }
  r.expect_end();
  s.iteration = j.at("iteration").get<long>();
  s.tau = j.at("tau").get<double>();
  if (meta_out) *meta_out = meta;
  return s;
}

// ----- logs ---------------------------------------------------------------------

class TrainingLog {
 public:
  TrainingLog(const fs::path& p, bool append) : out_(p, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + p.string());
    if (!append) out_ << "iter,F,F_u,F_l,F_O,wallclock\n";
    out_.precision(17);
  }
  void write(const inference::LogRow& r) {
    out_ << r.iter << ',' << r.F << ',' << r.F_u << ',' << r.F_l << ',' << r.F_O << ',' << r.wallclock << '\n';
  }

 private:
  std::ofstream out_;
};

}  // namespace cgsur::io
