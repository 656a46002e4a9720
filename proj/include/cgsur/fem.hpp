#pragma once

// P1 finite elements on a regular triangulated grid of the unit square.
//
// Node (col, row) has index row * (d + 1) + col and sits at (col / d, row / d).
// Pixel p = row * d + col is split along its lower-left to upper-right diagonal
// into element 2p = (n00, n10, n11) and element 2p + 1 = (n00, n11, n01).
// Dirichlet data is prescribed on s1 = 0 and s1 = 1; the rest of the boundary
// carries the natural (zero-flux) condition.

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "cgsur/errors.hpp"
#include "cgsur/field.hpp"

namespace cgsur::fem {

using field::BoundaryCoeffs;
using SpMat = Eigen::SparseMatrix<double>;

struct Mesh {
  int d = 0;
  double h = 0.0;
  std::vector<Eigen::Vector2d> nodes;
  std::vector<std::array<int, 3>> elements;
  std::vector<int> pixel_of_element;
  std::vector<bool> is_dirichlet;
  std::vector<int> free_nodes;
  std::vector<int> dirichlet_nodes;
  std::vector<int> free_position;  // node -> index into free_nodes, or -1

  // Shape-function gradients on the reference pixel (multiply by 1/h) and the
  // unit-conductivity element stiffness, indexed by element parity.
  std::array<Eigen::Matrix<double, 2, 3>, 2> ref_grad;
  std::array<Eigen::Matrix3d, 2> unit_stiffness;

  // Fixed sparsity pattern of the global stiffness and, per element, the nine
  // offsets of its local entries into the pattern's value array.
  SpMat pattern;
  std::vector<std::array<int, 9>> value_slots;

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_elements() const { return static_cast<int>(elements.size()); }
  int num_pixels() const { return d * d; }
  int num_free() const { return static_cast<int>(free_nodes.size()); }
  int node(int col, int row) const { return row * (d + 1) + col; }
  double element_area() const { return 0.5 * h * h; }

  /// Node at (0.5, 0.5); only defined for even d.
  int center_node() const {
    if (d % 2 != 0) throw GridMismatch("center node requires an even grid size");
    return node(d / 2, d / 2);
  }
};

using MeshPtr = std::shared_ptr<const Mesh>;

inline MeshPtr build_mesh(int d) {
  if (d < 1) throw InvalidSize("build_mesh: grid size must be >= 1");
  auto m = std::make_shared<Mesh>();
  m->d = d;
  m->h = 1.0 / d;
  const int nn = (d + 1) * (d + 1);
  m->nodes.resize(nn);
  m->is_dirichlet.assign(nn, false);
  m->free_position.assign(nn, -1);
  for (int row = 0; row <= d; ++row) {
    for (int col = 0; col <= d; ++col) {
      const int n = m->node(col, row);
      m->nodes[n] = Eigen::Vector2d(static_cast<double>(col) / d, static_cast<double>(row) / d);
      if (col == 0 || col == d) m->is_dirichlet[n] = true;
    }
  }
  for (int n = 0; n < nn; ++n) {
    if (m->is_dirichlet[n]) {
      m->dirichlet_nodes.push_back(n);
    } else {
      m->free_position[n] = static_cast<int>(m->free_nodes.size());
      m->free_nodes.push_back(n);
    }
  }
  m->elements.reserve(2 * d * d);
  m->pixel_of_element.reserve(2 * d * d);
  for (int row = 0; row < d; ++row) {
    for (int col = 0; col < d; ++col) {
      const int p = row * d + col;
      const int n00 = m->node(col, row), n10 = n00 + 1;
      const int n01 = m->node(col, row + 1), n11 = n01 + 1;
      m->elements.push_back({n00, n10, n11});
      m->elements.push_back({n00, n11, n01});
      m->pixel_of_element.push_back(p);
      m->pixel_of_element.push_back(p);
    }
  }
  m->ref_grad[0] << -1.0, 1.0, 0.0,  //
                     0.0, -1.0, 1.0;
  m->ref_grad[1] << 0.0, 1.0, -1.0,  //
                   -1.0, 0.0, 1.0;
  for (int t = 0; t < 2; ++t) {
    // area h^2/2 times (1/h)^2 from the gradients
    m->unit_stiffness[t] = 0.5 * m->ref_grad[t].transpose() * m->ref_grad[t];
  }

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(9 * m->elements.size());
  for (const auto& e : m->elements)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) trip.emplace_back(e[a], e[b], 1.0);
  m->pattern.resize(nn, nn);
  m->pattern.setFromTriplets(trip.begin(), trip.end());
  m->pattern.makeCompressed();
  m->value_slots.resize(m->elements.size());
  const int* outer = m->pattern.outerIndexPtr();
  const int* inner = m->pattern.innerIndexPtr();
  for (std::size_t e = 0; e < m->elements.size(); ++e) {
    const auto& el = m->elements[e];
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        // column-major: column el[b], row el[a]
        const int col = el[b];
        int k = outer[col];
        while (inner[k] != el[a]) ++k;
        m->value_slots[e][3 * a + b] = k;
      }
    }
  }
  return m;
}

/// Counts linear solves per grid size; used to verify which discretizations a
/// code path touches.
class SolveCounter {
 public:
  static SolveCounter& instance() {
    static SolveCounter c;
    return c;
  }
  void record(int d) {
    std::lock_guard<std::mutex> lock(mu_);
    ++counts_[d];
  }
  std::uint64_t count(int d) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = counts_.find(d);
    return it == counts_.end() ? 0 : it->second;
  }
  void reset() {
    std::lock_guard<std::mutex> lock(mu_);
    counts_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::map<int, std::uint64_t> counts_;
};

inline std::uint64_t solve_count(int d) { return SolveCounter::instance().count(d); }

/// Factorization of the free-free block of the stiffness matrix.
class FreeBlockSolver {
 public:
  FreeBlockSolver(const Mesh& mesh, const SpMat& K) {
    const int nf = mesh.num_free();
    if (nf == 0) return;
    if (nf <= kDenseLimit) {
      Eigen::MatrixXd kff = Eigen::MatrixXd::Zero(nf, nf);
      for (int col = 0; col < K.outerSize(); ++col) {
        const int fc = mesh.free_position[col];
        if (fc < 0) continue;
        for (SpMat::InnerIterator it(K, col); it; ++it) {
          const int fr = mesh.free_position[it.row()];
          if (fr >= 0) kff(fr, fc) = it.value();
        }
      }
      dense_.compute(kff);
      if (dense_.info() != Eigen::Success) throw SingularSystem("stiffness free block is not SPD");
      dense_kff_ = std::move(kff);
      use_dense_ = true;
    } else {
      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(K.nonZeros());
      for (int col = 0; col < K.outerSize(); ++col) {
        const int fc = mesh.free_position[col];
        if (fc < 0) continue;
        for (SpMat::InnerIterator it(K, col); it; ++it) {
          const int fr = mesh.free_position[it.row()];
          if (fr >= 0) trip.emplace_back(fr, fc, it.value());
        }
      }
      sparse_kff_.resize(nf, nf);
      sparse_kff_.setFromTriplets(trip.begin(), trip.end());
      sparse_.compute(sparse_kff_);
      if (sparse_.info() != Eigen::Success) throw SingularSystem("stiffness free block is not SPD");
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    if (rhs.size() == 0) return rhs;
    Eigen::VectorXd x = use_dense_ ? Eigen::VectorXd(dense_.solve(rhs)) : Eigen::VectorXd(sparse_.solve(rhs));
    // one step of iterative refinement keeps the residual at round-off level
    Eigen::VectorXd r = rhs - apply(x);
    x += use_dense_ ? Eigen::VectorXd(dense_.solve(r)) : Eigen::VectorXd(sparse_.solve(r));
    return x;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    return use_dense_ ? Eigen::VectorXd(dense_kff_ * x) : Eigen::VectorXd(sparse_kff_ * x);
  }

 private:
  static constexpr int kDenseLimit = 300;
  bool use_dense_ = false;
  Eigen::LLT<Eigen::MatrixXd> dense_;
  Eigen::MatrixXd dense_kff_;
  Eigen::SimplicialLLT<SpMat> sparse_;
  SpMat sparse_kff_;
};

struct FemSystem {
  MeshPtr mesh;
  Eigen::VectorXd kappa;       // per pixel
  BoundaryCoeffs bc;
  SpMat K;                     // over all nodes
  Eigen::VectorXd load;        // over all nodes
  Eigen::VectorXd lift;        // prescribed values on Dirichlet nodes, zero elsewhere

  /// Lazily built factorization of K_ff, shared by forward and adjoint solves.
  const FreeBlockSolver& solver() const {
    if (!solver_) solver_ = std::make_shared<const FreeBlockSolver>(*mesh, K);
    return *solver_;
  }

  /// rhs of the reduced system: (load - K * lift) restricted to free nodes.
  Eigen::VectorXd reduced_rhs() const {
    const Eigen::VectorXd r = load - K * lift;
    Eigen::VectorXd out(mesh->num_free());
    for (int i = 0; i < mesh->num_free(); ++i) out[i] = r[mesh->free_nodes[i]];
    return out;
  }

 private:
  mutable std::shared_ptr<const FreeBlockSolver> solver_;
};

struct Solution {
  Eigen::VectorXd y;  // all (d+1)^2 nodal values
};

/// Dirichlet values: left edge a0*s2 + a1*(1-s2), right edge a2*s2 + a3*(1-s2).
inline Eigen::VectorXd dirichlet_lift(const Mesh& mesh, const BoundaryCoeffs& bc) {
  Eigen::VectorXd lift = Eigen::VectorXd::Zero(mesh.num_nodes());
  for (int n : mesh.dirichlet_nodes) {
    const double s1 = mesh.nodes[n][0], s2 = mesh.nodes[n][1];
    lift[n] = (s1 < 0.5) ? bc.a0 * s2 + bc.a1 * (1.0 - s2) : bc.a2 * s2 + bc.a3 * (1.0 - s2);
  }
  return lift;
}

/// Stiffness with the given per-pixel conductivity.
inline SpMat stiffness(const Mesh& mesh, const Eigen::Ref<const Eigen::VectorXd>& kappa) {
  if (kappa.size() != mesh.num_pixels())
    throw DimensionMismatch("stiffness: conductivity length must equal d^2");
  SpMat K = mesh.pattern;
  double* val = K.valuePtr();
  std::fill(val, val + K.nonZeros(), 0.0);
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const double k = kappa[mesh.pixel_of_element[e]];
    const Eigen::Matrix3d& u = mesh.unit_stiffness[e & 1];
    const auto& slot = mesh.value_slots[e];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) val[slot[3 * a + b]] += k * u(a, b);
  }
  return K;
}

/// Consistent load for a per-pixel constant source.
inline Eigen::VectorXd load_vector(const Mesh& mesh, const Eigen::Ref<const Eigen::VectorXd>& source) {
  if (source.size() != mesh.num_pixels())
    throw DimensionMismatch("load_vector: source length must equal d^2");
  Eigen::VectorXd f = Eigen::VectorXd::Zero(mesh.num_nodes());
  const double w = mesh.element_area() / 3.0;
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const double s = source[mesh.pixel_of_element[e]];
    if (s == 0.0) continue;
    for (int a = 0; a < 3; ++a) f[mesh.elements[e][a]] += w * s;
  }
  return f;
}

inline void check_conductivity(const Mesh& mesh, const Eigen::Ref<const Eigen::VectorXd>& kappa) {
  if (kappa.size() != mesh.num_pixels())
    throw DimensionMismatch("assemble: conductivity length must equal d^2");
  for (Eigen::Index i = 0; i < kappa.size(); ++i)
    if (!(kappa[i] > 0.0) || !std::isfinite(kappa[i]))
      throw NonPositiveConductivity("assemble: conductivity must be finite and > 0");
}

inline FemSystem assemble(MeshPtr mesh, const Eigen::Ref<const Eigen::VectorXd>& kappa,
                          const BoundaryCoeffs& bc,
                          const Eigen::Ref<const Eigen::VectorXd>& source) {
  check_conductivity(*mesh, kappa);
  FemSystem sys;
  sys.K = stiffness(*mesh, kappa);
  sys.load = load_vector(*mesh, source);
  sys.lift = dirichlet_lift(*mesh, bc);
  sys.kappa = kappa;
  sys.bc = bc;
  sys.mesh = std::move(mesh);
  return sys;
}

inline FemSystem assemble(MeshPtr mesh, const Eigen::Ref<const Eigen::VectorXd>& kappa,
                          const BoundaryCoeffs& bc, double source = 0.0) {
  const Eigen::VectorXd s = Eigen::VectorXd::Constant(mesh->num_pixels(), source);
  return assemble(std::move(mesh), kappa, bc, s);
}

inline Solution solve(const FemSystem& sys) {
  const Mesh& mesh = *sys.mesh;
  SolveCounter::instance().record(mesh.d);
  const Eigen::VectorXd rhs = sys.reduced_rhs();
  const Eigen::VectorXd yf = sys.solver().solve(rhs);
  const double rn = rhs.norm();
  if (!yf.allFinite() || (sys.solver().apply(yf) - rhs).norm() > 1e-10 * std::max(rn, 1e-300))
    if (rn > 0.0) throw SingularSystem("solve: residual above tolerance");
  Solution s{sys.lift};
  for (int i = 0; i < mesh.num_free(); ++i) s.y[mesh.free_nodes[i]] = yf[i];
  return s;
}

/// Gradient of cotangent^T y with respect to the per-pixel conductivities, via
/// one adjoint solve. Cotangent entries on Dirichlet nodes do not contribute.
inline Eigen::VectorXd solve_vjp(const FemSystem& sys, const Solution& sol,
                                 const Eigen::Ref<const Eigen::VectorXd>& cotangent) {
  const Mesh& mesh = *sys.mesh;
  if (cotangent.size() != mesh.num_nodes()) throw DimensionMismatch("solve_vjp: cotangent size");
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(mesh.num_pixels());
  Eigen::VectorXd cf(mesh.num_free());
  for (int i = 0; i < mesh.num_free(); ++i) cf[i] = cotangent[mesh.free_nodes[i]];
  if (cf.isZero(0.0)) return grad;
  SolveCounter::instance().record(mesh.d);
  const Eigen::VectorXd mf = sys.solver().solve(cf);
  Eigen::VectorXd adj = Eigen::VectorXd::Zero(mesh.num_nodes());
  for (int i = 0; i < mesh.num_free(); ++i) adj[mesh.free_nodes[i]] = mf[i];
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto& el = mesh.elements[e];
    const Eigen::Vector3d ae(adj[el[0]], adj[el[1]], adj[el[2]]);
    if (ae.isZero(0.0)) continue;
    const Eigen::Vector3d ye(sol.y[el[0]], sol.y[el[1]], sol.y[el[2]]);
    grad[mesh.pixel_of_element[e]] -= ae.dot(mesh.unit_stiffness[e & 1] * ye);
  }
  return grad;
}

inline Eigen::VectorXd solve_vjp(const FemSystem& sys, const Eigen::Ref<const Eigen::VectorXd>& cotangent) {
  return solve_vjp(sys, solve(sys), cotangent);
}

/// Element-wise constant flux -kappa * grad(u), one column per element.
inline Eigen::Matrix2Xd element_flux(const Mesh& mesh, const Eigen::Ref<const Eigen::VectorXd>& kappa,
                                     const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (kappa.size() != mesh.num_pixels() || y.size() != mesh.num_nodes())
    throw DimensionMismatch("element_flux: inconsistent lengths");
  Eigen::Matrix2Xd flux(2, mesh.num_elements());
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto& el = mesh.elements[e];
    const Eigen::Vector3d ye(y[el[0]], y[el[1]], y[el[2]]);
    flux.col(e) = -kappa[mesh.pixel_of_element[e]] / mesh.h * (mesh.ref_grad[e & 1] * ye);
  }
  return flux;
}

/// Discrete potential energy 0.5 y^T K y - load^T y over the full nodal vector.
inline double energy(const FemSystem& sys, const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (y.size() != sys.K.rows()) throw DimensionMismatch("energy: y size");
  return 0.5 * y.dot(sys.K * y) - sys.load.dot(y);
}

/// Nodal interpolation of coarse P1 fields onto a nested fine mesh
/// (fine_nodes x coarse_nodes). Exact for every coarse P1 function because the
/// fine triangulation refines the coarse one.
inline SpMat prolongation(const Mesh& fine, const Mesh& coarse) {
  if (fine.d % coarse.d != 0) throw GridMismatch("prolongation: fine grid must be a multiple of coarse grid");
  const int r = fine.d / coarse.d;
  std::vector<Eigen::Triplet<double>> trip;
  for (int row = 0; row <= fine.d; ++row) {
    for (int col = 0; col <= fine.d; ++col) {
      const int cc = std::min(col / r, coarse.d - 1);
      const int cr = std::min(row / r, coarse.d - 1);
      const double xi = static_cast<double>(col - cc * r) / r;
      const double eta = static_cast<double>(row - cr * r) / r;
      const int n00 = coarse.node(cc, cr), n10 = n00 + 1;
      const int n01 = coarse.node(cc, cr + 1), n11 = n01 + 1;
      const int fn = fine.node(col, row);
      auto add = [&](int cn, double w) {
        if (w != 0.0) trip.emplace_back(fn, cn, w);
      };
      if (eta <= xi) {
        add(n00, 1.0 - xi);
        add(n10, xi - eta);
        add(n11, eta);
      } else {
        add(n00, 1.0 - eta);
        add(n11, xi);
        add(n01, eta - xi);
      }
    }
  }
  SpMat P(fine.num_nodes(), coarse.num_nodes());
  P.setFromTriplets(trip.begin(), trip.end());
  P.makeCompressed();
  return P;
}

}  // namespace cgsur::fem
