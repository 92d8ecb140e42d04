#pragma once

// The four benchmark forward models. Each builds a pipeline from a
// coefficient field at quadrature points through assembly and a linear,
// Newton, or time-marching solve to a squared-error loss, and returns
// the loss together with its gradient with respect to the field values.

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fieldinv/core.hpp"
#include "fieldinv/fem.hpp"
#include "fieldinv/graph.hpp"
#include "fieldinv/la.hpp"
#include "fieldinv/mesh.hpp"
#include "fieldinv/pcl.hpp"

namespace fieldinv::problems {

using fem::ShapeTable;
using mesh::DofMap;
using mesh::Mesh;
using mesh::Side;
using mesh::SpaceKind;

class QuadPointError : public std::runtime_error {
 public:
  QuadPointError(const std::string& msg, int quad_index)
      : std::runtime_error(msg), quad_index(quad_index) {}
  int quad_index;
};

struct Observation {
  Vec values;                   // static problems: observed dof values
  std::vector<Vec> step_values; // Burgers: one block per time step

  void write_csv(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("Observation: cannot open " + path);
    if (step_values.empty()) {
      std::fprintf(f, "dof_index,value\n");
      for (long i = 0; i < values.size(); ++i)
        std::fprintf(f, "%ld,%.17g\n", i, values[i]);
    } else {
      std::fprintf(f, "step,dof_index,value\n");
      for (size_t t = 0; t < step_values.size(); ++t)
        for (long i = 0; i < step_values[t].size(); ++i)
          std::fprintf(f, "%zu,%ld,%.17g\n", t + 1, i, step_values[t][i]);
    }
    std::fclose(f);
  }
};

struct LossGrad {
  bool ok = true;
  double loss = 0.0;
  Vec grad_nu;  // with respect to the field values at quadrature points
  std::string error;
};

// Ground-truth field shared by all benchmarks; strictly positive on the
// unit square.
inline double ground_truth_base(double x, double y) {
  return 1.0 + std::exp(-5.0 * ((x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5)));
}

namespace detail {

inline Vec field_at_quad(const ShapeTable& t, const std::function<double(double, double)>& g) {
  Vec v(t.num_quad_total());
  for (int k = 0; k < t.num_quad_total(); ++k)
    v[k] = g(t.qpoints[k].x(), t.qpoints[k].y());
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear elasticity: fixed left edge, downward traction on the right edge,
// unknown Young's modulus field. Observed: the full displacement vector.
// ---------------------------------------------------------------------------
class ElasticityProblem {
 public:
  explicit ElasticityProblem(int mesh_n,
                             fem::ElasticityFormula formula = fem::ElasticityFormula::nu_weighted)
      : mesh_(mesh::build_unit_square_mesh(mesh_n)),
        dm_(mesh::build_dofmap(mesh_, SpaceKind::P1Vec)),
        table_(std::make_shared<ShapeTable>(
            fem::build_shape_table(mesh_, SpaceKind::P1, mesh::quadrature(2)))) {
    mat_.formula = formula;
    for (int d : mesh::boundary_scalar_dofs(mesh_, SpaceKind::P1, Side::left)) {
      bc_.push_back({2 * d, 0.0});
      bc_.push_back({2 * d + 1, 0.0});
    }
    rhs_ = fem::assemble_boundary_traction(mesh_, dm_, Side::right, {0.0, -0.1});
  }

  const Mesh& grid() const { return mesh_; }
  const std::shared_ptr<ShapeTable>& table() const { return table_; }
  int num_quad() const { return table_->num_quad_total(); }

  Vec truth_nu() const {
    return detail::field_at_quad(*table_, [](double x, double y) { return ground_truth_base(x, y); });
  }

  Vec forward(const Vec& nu_at_quad) const {
    auto op = fem::assemble_elasticity_stiffness(mesh_, dm_, table_, nu_at_quad, mat_);
    auto ds = fem::apply_dirichlet(*op.A, rhs_, bc_);
    return la::solve(*ds.A, ds.b).x;
  }

  Observation synthesize_observations(const Vec& nu_at_quad) const {
    return {forward(nu_at_quad), {}};
  }

  LossGrad loss_and_grad(const Vec& nu_at_quad, const Observation& obs) const {
    try {
      graph::Tape tape;
      int nu_leaf = tape.leaf("nu", nu_at_quad);
      auto op = fem::assemble_elasticity_stiffness(mesh_, dm_, table_, nu_at_quad, mat_);
      auto avjp = op.vjp;
      int a_node = tape.record_matrix(
          "elasticity_stiffness", {nu_leaf}, op.A,
          [avjp](const Vec& ob, const graph::Tape::Accum& acc) { acc(0, avjp(ob)); });
      auto ds = fem::apply_dirichlet(*op.A, rhs_, bc_);
      auto vm = ds.vjp_matrix;
      const int n = dm_.num_dofs;
      const int nnz_mod = ds.A->nnz();
      int amod = tape.record_matrix(
          "dirichlet_matrix", {a_node}, ds.A,
          [vm, n](const Vec& ob, const graph::Tape::Accum& acc) {
            acc(0, vm(ob, Vec::Zero(n)));
          });
      int bmod = tape.record(
          "dirichlet_rhs", {a_node}, ds.b,
          [vm, nnz_mod](const Vec& bb, const graph::Tape::Accum& acc) {
            acc(0, vm(Vec::Zero(nnz_mod), bb));
          });
      auto sol = la::solve(*ds.A, ds.b);
      auto fact = sol.fact;
      auto amat = ds.A;
      Vec u = sol.x;
      int u_node = tape.record(
          "solve", {amod, bmod}, u,
          [fact, amat, u](const Vec& ubar, const graph::Tape::Accum& acc) {
            auto r = la::solve_vjp(*fact, *amat, u, ubar);
            acc(0, r.abar);
            acc(1, r.bbar);
          });
      int loss_node = tape.sq_error(u_node, obs.values);
      auto grads = tape.backward(loss_node);
      return {true, tape.value(loss_node)[0], grads.at("nu"), ""};
    } catch (const SingularMatrixError& e) {
      return {false, 0.0, Vec(), std::string("solver failure: ") + e.what()};
    }
  }

 private:
  Mesh mesh_;
  DofMap dm_;
  std::shared_ptr<ShapeTable> table_;
  fem::ElasticMaterial mat_;
  std::vector<std::pair<int, double>> bc_;
  Vec rhs_;
};

// ---------------------------------------------------------------------------
// Stokes: no-slip boundary, unit downward body force, P2/P0 saddle-point
// system with unknown viscosity. Observed: the pressure block only, in the
// zero-mean gauge (one pressure dof pinned to make the system regular).
// ---------------------------------------------------------------------------
class StokesProblem {
 public:
  explicit StokesProblem(int mesh_n)
      : mesh_(mesh::build_unit_square_mesh(mesh_n)),
        dm_v_(mesh::build_dofmap(mesh_, SpaceKind::P2Vec)),
        dm_p_(mesh::build_dofmap(mesh_, SpaceKind::P0)),
        table_(std::make_shared<ShapeTable>(
            fem::build_shape_table(mesh_, SpaceKind::P2, mesh::quadrature(4)))) {
    for (Side s : {Side::left, Side::right, Side::bottom, Side::top})
      for (int d : mesh::boundary_scalar_dofs(mesh_, SpaceKind::P2, s)) {
        bc_.push_back({2 * d, 0.0});
        bc_.push_back({2 * d + 1, 0.0});
      }
    // deduplicate corner dofs shared between sides
    std::sort(bc_.begin(), bc_.end());
    bc_.erase(std::unique(bc_.begin(), bc_.end()), bc_.end());
    bc_.push_back({dm_v_.num_dofs, 0.0});  // pressure gauge pin
    b_ = fem::assemble_divergence(mesh_, dm_v_, table_, dm_p_);
    f1_ = fem::assemble_load(mesh_, dm_v_, table_, {0.0, -1.0});
  }

  const Mesh& grid() const { return mesh_; }
  const std::shared_ptr<ShapeTable>& table() const { return table_; }
  int num_quad() const { return table_->num_quad_total(); }
  int num_velocity_dofs() const { return dm_v_.num_dofs; }
  int num_pressure_dofs() const { return dm_p_.num_dofs; }

  Vec truth_nu() const {
    return detail::field_at_quad(*table_,
                                 [](double x, double y) { return 0.1 * ground_truth_base(x, y); });
  }

  // [[A, -B], [B^T, 0]] with the gauge pin applied via Dirichlet elimination.
  Vec forward(const Vec& nu_at_quad) const {
    auto op = fem::assemble_vector_laplace(mesh_, dm_v_, table_, nu_at_quad);
    auto ds = make_block_system(*op.A);
    return la::solve(*ds.A, ds.b).x;
  }

  Observation synthesize_observations(const Vec& nu_at_quad) const {
    Vec state = forward(nu_at_quad);
    return {state.segment(dm_v_.num_dofs, dm_p_.num_dofs), {}};
  }

  double divergence_inf(const Vec& state) const {
    return b_.transpose_matvec(state.head(dm_v_.num_dofs)).lpNorm<Eigen::Infinity>();
  }

  LossGrad loss_and_grad(const Vec& nu_at_quad, const Observation& obs) const {
    try {
      const int nv = dm_v_.num_dofs, np = dm_p_.num_dofs;
      graph::Tape tape;
      int nu_leaf = tape.leaf("nu", nu_at_quad);
      auto op = fem::assemble_vector_laplace(mesh_, dm_v_, table_, nu_at_quad);
      auto avjp = op.vjp;
      int a_node = tape.record_matrix(
          "vector_laplace", {nu_leaf}, op.A,
          [avjp](const Vec& ob, const graph::Tape::Accum& acc) { acc(0, avjp(ob)); });

      auto block = make_block_matrix(*op.A);
      // map entry k of A's pattern to its slot in the block pattern
      auto amat = op.A;
      auto idx_map = std::make_shared<std::vector<int>>(amat->nnz());
      {
        const auto& rp = amat->row_ptr();
        const auto& ci = amat->col_ind();
        for (int r = 0; r < amat->rows(); ++r)
          for (int k = rp[r]; k < rp[r + 1]; ++k)
            (*idx_map)[k] = block->find(r, ci[k]);
      }
      int block_node = tape.record_matrix(
          "stokes_block", {a_node}, block,
          [idx_map](const Vec& ob, const graph::Tape::Accum& acc) {
            Vec abar(idx_map->size());
            for (size_t k = 0; k < idx_map->size(); ++k)
              abar[static_cast<long>(k)] = (*idx_map)[k] >= 0 ? ob[(*idx_map)[k]] : 0.0;
            acc(0, abar);
          });

      Vec rhs = Vec::Zero(nv + np);
      rhs.head(nv) = f1_;
      auto ds = fem::apply_dirichlet(*block, rhs, bc_);
      auto vm = ds.vjp_matrix;
      const int nfull = nv + np;
      const int nnz_mod = ds.A->nnz();
      int amod = tape.record_matrix(
          "dirichlet_matrix", {block_node}, ds.A,
          [vm, nfull](const Vec& ob, const graph::Tape::Accum& acc) {
            acc(0, vm(ob, Vec::Zero(nfull)));
          });
      int bmod = tape.record(
          "dirichlet_rhs", {block_node}, ds.b,
          [vm, nnz_mod](const Vec& bb, const graph::Tape::Accum& acc) {
            acc(0, vm(Vec::Zero(nnz_mod), bb));
          });
      auto sol = la::solve(*ds.A, ds.b);
      auto fact = sol.fact;
      auto am = ds.A;
      Vec state = sol.x;
      int u_node = tape.record(
          "solve", {amod, bmod}, state,
          [fact, am, state](const Vec& ubar, const graph::Tape::Accum& acc) {
            auto r = la::solve_vjp(*fact, *am, state, ubar);
            acc(0, r.abar);
            acc(1, r.bbar);
          });

      // pressure block, shifted to zero mean (L^2_0 gauge)
      Vec p = state.segment(nv, np);
      Vec pshift = p.array() - p.mean();
      int p_node = tape.record(
          "pressure_gauge", {u_node}, pshift,
          [nv, np](const Vec& pbar, const graph::Tape::Accum& acc) {
            Vec sbar = Vec::Zero(nv + np);
            sbar.segment(nv, np) = pbar.array() - pbar.mean();
            acc(0, sbar);
          });
      Vec obs_shift = obs.values.array() - obs.values.mean();
      int loss_node = tape.sq_error(p_node, obs_shift);
      auto grads = tape.backward(loss_node);
      return {true, tape.value(loss_node)[0], grads.at("nu"), ""};
    } catch (const SingularMatrixError& e) {
      return {false, 0.0, Vec(), std::string("solver failure: ") + e.what()};
    }
  }

 private:
  std::shared_ptr<la::SparseMatrix> make_block_matrix(const la::SparseMatrix& a) const {
    const int nv = dm_v_.num_dofs, np = dm_p_.num_dofs;
    std::vector<la::Triplet> trips = a.to_triplets();
    for (const auto& t : b_.to_triplets()) {
      trips.push_back({t.row, nv + t.col, -t.val});
      trips.push_back({nv + t.col, t.row, t.val});
    }
    return std::make_shared<la::SparseMatrix>(
        la::SparseMatrix::from_triplets(trips, nv + np, nv + np));
  }

  fem::DirichletSystem make_block_system(const la::SparseMatrix& a) const {
    const int nv = dm_v_.num_dofs, np = dm_p_.num_dofs;
    Vec rhs = Vec::Zero(nv + np);
    rhs.head(nv) = f1_;
    return fem::apply_dirichlet(*make_block_matrix(a), rhs, bc_);
  }

  Mesh mesh_;
  DofMap dm_v_, dm_p_;
  std::shared_ptr<ShapeTable> table_;
  std::vector<std::pair<int, double>> bc_;
  la::SparseMatrix b_;
  Vec f1_;
};

// ---------------------------------------------------------------------------
// Hyperelasticity: compressible neo-Hookean energy, left edge fixed, right
// edge displaced by (0.05, 0), unknown Young's modulus. Newton forward
// solve; gradient by the implicit-function-theorem adjoint.
// ---------------------------------------------------------------------------
class HyperelasticityProblem {
 public:
  explicit HyperelasticityProblem(int mesh_n)
      : mesh_(mesh::build_unit_square_mesh(mesh_n)),
        dm_(mesh::build_dofmap(mesh_, SpaceKind::P1Vec)),
        table_(std::make_shared<ShapeTable>(
            fem::build_shape_table(mesh_, SpaceKind::P1, mesh::quadrature(4)))) {
    mat_.formula = fem::ElasticityFormula::standard;
    for (int d : mesh::boundary_scalar_dofs(mesh_, SpaceKind::P1, Side::left)) {
      bc_.push_back({2 * d, 0.0});
      bc_.push_back({2 * d + 1, 0.0});
    }
    for (int d : mesh::boundary_scalar_dofs(mesh_, SpaceKind::P1, Side::right)) {
      bc_.push_back({2 * d, 0.05});
      bc_.push_back({2 * d + 1, 0.0});
    }
    fixed_.assign(dm_.num_dofs, 0);
    gvals_ = Vec::Zero(dm_.num_dofs);
    for (auto [d, v] : bc_) {
      fixed_[d] = 1;
      gvals_[d] = v;
    }
  }

  const Mesh& grid() const { return mesh_; }
  const std::shared_ptr<ShapeTable>& table() const { return table_; }
  int num_quad() const { return table_->num_quad_total(); }

  Vec truth_nu() const {
    return detail::field_at_quad(*table_, [](double x, double y) { return ground_truth_base(x, y); });
  }

  pcl::NonlinearProblem nonlinear_problem() const {
    pcl::NonlinearProblem p;
    p.residual = [this](const Vec& u, const Vec& e) { return residual(u, e); };
    p.jacobian = [this](const Vec& u, const Vec& e) { return jacobian(u, e); };
    p.param_vjp = [this](const Vec& u, const Vec& e, const Vec& l) { return param_vjp(u, e, l); };
    return p;
  }

  Vec initial_state() const {
    Vec u = Vec::Zero(dm_.num_dofs);
    for (auto [d, v] : bc_) u[d] = v;
    return u;
  }

  pcl::NewtonResult solve_forward(const Vec& e_at_quad, double tol = 1e-10,
                                  int max_iter = 50) const {
    return pcl::newton_solve(nonlinear_problem(), initial_state(), e_at_quad, tol, max_iter);
  }

  Observation synthesize_observations(const Vec& e_at_quad) const {
    return {solve_forward(e_at_quad).u, {}};
  }

  LossGrad loss_and_grad(const Vec& e_at_quad, const Observation& obs) const {
    try {
      auto prob = nonlinear_problem();
      auto sol = solve_forward(e_at_quad);
      Vec r = sol.u - obs.values;
      Vec djdu = 2.0 * r;
      Vec grad = pcl_adjoint(sol, djdu, prob, e_at_quad);
      return {true, r.squaredNorm(), grad, ""};
    } catch (const SingularMatrixError& e) {
      return {false, 0.0, Vec(), std::string("solver failure: ") + e.what()};
    } catch (const pcl::SolverDivergedError& e) {
      return {false, 0.0, Vec(), std::string("newton divergence: ") + e.what()};
    } catch (const QuadPointError& e) {
      return {false, 0.0, Vec(), std::string("nonphysical state: ") + e.what()};
    }
  }

  Vec residual(const Vec& u, const Vec& e_at_quad) const {
    auto [clam, cmu] = mat_.lame_coeffs();
    const auto& t = *table_;
    Vec R = Vec::Zero(dm_.num_dofs);
    for (int e = 0; e < t.n_elems; ++e) {
      const auto& dofs = dm_.element_dofs[e];
      Mat2 gradu = element_grad(u, e);
      Mat2 F = Mat2::Identity() + gradu;
      double J = F.determinant();
      if (J <= 0.0)
        throw QuadPointError("det(F) <= 0 at quad point " + std::to_string(e * t.n_qp),
                             e * t.n_qp);
      Mat2 Finvt = F.inverse().transpose();
      double logJ = std::log(J);
      for (int q = 0; q < t.n_qp; ++q) {
        double lam = clam * e_at_quad[t.qi(e, q)];
        double mu = cmu * e_at_quad[t.qi(e, q)];
        Mat2 P = mu * F + (lam * logJ - mu) * Finvt;
        double w = t.wdet[t.qi(e, q)];
        for (int i = 0; i < t.n_shape; ++i) {
          Vec2 g(t.gx[t.vi(e, q, i)], t.gy[t.vi(e, q, i)]);
          R[dofs[2 * i]] += w * P.row(0).dot(g);
          R[dofs[2 * i + 1]] += w * P.row(1).dot(g);
        }
      }
    }
    for (int d = 0; d < dm_.num_dofs; ++d)
      if (fixed_[d]) R[d] = u[d] - gvals_[d];
    return R;
  }

  la::SparseMatrix jacobian(const Vec& u, const Vec& e_at_quad) const {
    auto [clam, cmu] = mat_.lame_coeffs();
    const auto& t = *table_;
    std::vector<la::Triplet> trips;
    for (int e = 0; e < t.n_elems; ++e) {
      const auto& dofs = dm_.element_dofs[e];
      Mat2 gradu = element_grad(u, e);
      Mat2 F = Mat2::Identity() + gradu;
      double J = F.determinant();
      if (J <= 0.0)
        throw QuadPointError("det(F) <= 0 at quad point " + std::to_string(e * t.n_qp),
                             e * t.n_qp);
      Mat2 Finvt = F.inverse().transpose();
      double logJ = std::log(J);
      for (int q = 0; q < t.n_qp; ++q) {
        double lam = clam * e_at_quad[t.qi(e, q)];
        double mu = cmu * e_at_quad[t.qi(e, q)];
        double w = t.wdet[t.qi(e, q)];
        for (int j = 0; j < t.n_shape; ++j) {
          Vec2 gj(t.gx[t.vi(e, q, j)], t.gy[t.vi(e, q, j)]);
          for (int b = 0; b < 2; ++b) {
            Mat2 dF = Mat2::Zero();
            dF.row(b) = gj.transpose();
            Mat2 dP = mu * dF + lam * (Finvt.cwiseProduct(dF)).sum() * Finvt -
                      (lam * logJ - mu) * Finvt * dF.transpose() * Finvt;
            for (int i = 0; i < t.n_shape; ++i) {
              Vec2 gi(t.gx[t.vi(e, q, i)], t.gy[t.vi(e, q, i)]);
              int ri0 = dofs[2 * i], ri1 = dofs[2 * i + 1];
              if (!fixed_[ri0]) trips.push_back({ri0, dofs[2 * j + b], w * dP.row(0).dot(gi)});
              if (!fixed_[ri1]) trips.push_back({ri1, dofs[2 * j + b], w * dP.row(1).dot(gi)});
            }
          }
        }
      }
    }
    for (int d = 0; d < dm_.num_dofs; ++d)
      if (fixed_[d]) trips.push_back({d, d, 1.0});
    return la::SparseMatrix::from_triplets(trips, dm_.num_dofs, dm_.num_dofs);
  }

  Vec param_vjp(const Vec& u, const Vec& /*e_at_quad*/, const Vec& lambda) const {
    auto [clam, cmu] = mat_.lame_coeffs();
    const auto& t = *table_;
    Vec out = Vec::Zero(t.num_quad_total());
    for (int e = 0; e < t.n_elems; ++e) {
      const auto& dofs = dm_.element_dofs[e];
      Mat2 gradu = element_grad(u, e);
      Mat2 F = Mat2::Identity() + gradu;
      double J = F.determinant();
      Mat2 Finvt = F.inverse().transpose();
      double logJ = std::log(J);
      // dP/dE, independent of E since lambda(E), mu(E) are linear
      Mat2 dPdE = cmu * (F - Finvt) + clam * logJ * Finvt;
      for (int q = 0; q < t.n_qp; ++q) {
        double w = t.wdet[t.qi(e, q)];
        double acc = 0.0;
        for (int i = 0; i < t.n_shape; ++i) {
          Vec2 g(t.gx[t.vi(e, q, i)], t.gy[t.vi(e, q, i)]);
          if (!fixed_[dofs[2 * i]]) acc += lambda[dofs[2 * i]] * dPdE.row(0).dot(g);
          if (!fixed_[dofs[2 * i + 1]]) acc += lambda[dofs[2 * i + 1]] * dPdE.row(1).dot(g);
        }
        out[t.qi(e, q)] = w * acc;
      }
    }
    return out;
  }

 private:
  Mat2 element_grad(const Vec& u, int e) const {
    // P1: the displacement gradient is constant on the element
    const auto& t = *table_;
    const auto& dofs = dm_.element_dofs[e];
    Mat2 g = Mat2::Zero();
    for (int i = 0; i < t.n_shape; ++i) {
      Vec2 gi(t.gx[t.vi(e, 0, i)], t.gy[t.vi(e, 0, i)]);
      g.row(0) += u[dofs[2 * i]] * gi.transpose();
      g.row(1) += u[dofs[2 * i + 1]] * gi.transpose();
    }
    return g;
  }

  Mesh mesh_;
  DofMap dm_;
  std::shared_ptr<ShapeTable> table_;
  fem::ElasticMaterial mat_;
  std::vector<std::pair<int, double>> bc_;
  std::vector<char> fixed_;
  Vec gvals_;
};

// ---------------------------------------------------------------------------
// Burgers: 2D vector form du/dt + (u.grad)u = div(nu grad u), homogeneous
// Dirichlet boundary, implicit Euler, P1 vector elements. Observed: the
// full state at every time step.
// ---------------------------------------------------------------------------
class BurgersProblem {
 public:
  explicit BurgersProblem(int mesh_n, int steps = 10, double dt = 0.05)
      : mesh_(mesh::build_unit_square_mesh(mesh_n)),
        dm_(mesh::build_dofmap(mesh_, SpaceKind::P1Vec)),
        table_(std::make_shared<ShapeTable>(
            fem::build_shape_table(mesh_, SpaceKind::P1, mesh::quadrature(2)))),
        steps_(steps),
        dt_(dt) {
    fixed_.assign(dm_.num_dofs, 0);
    for (Side s : {Side::left, Side::right, Side::bottom, Side::top})
      for (int d : mesh::boundary_scalar_dofs(mesh_, SpaceKind::P1, s)) {
        fixed_[2 * d] = 1;
        fixed_[2 * d + 1] = 1;
      }
    mass_ = fem::assemble_mass(mesh_, dm_, table_);
  }

  const Mesh& grid() const { return mesh_; }
  const std::shared_ptr<ShapeTable>& table() const { return table_; }
  int num_quad() const { return table_->num_quad_total(); }
  int num_steps() const { return steps_; }
  double dt() const { return dt_; }
  const la::SparseMatrix& mass() const { return mass_; }

  Vec truth_nu() const {
    return detail::field_at_quad(*table_,
                                 [](double x, double y) { return 0.1 * ground_truth_base(x, y); });
  }

  Vec initial_state() const {
    Vec u = Vec::Zero(dm_.num_dofs);
    const double pi = 3.14159265358979323846;
    for (int i = 0; i < mesh_.num_corner_nodes; ++i) {
      const Vec2& p = mesh_.nodes[i];
      if (!fixed_[2 * i]) u[2 * i] = std::sin(pi * p.x()) * std::sin(pi * p.y());
    }
    return u;
  }

  pcl::TimeStepFamily step_family(const Vec& nu_at_quad) const {
    auto K = fem::assemble_vector_laplace(mesh_, dm_, table_, nu_at_quad);
    auto kvjp = K.vjp;
    auto kmat = K.A;
    auto self = this;
    pcl::TimeStepFamily fam;
    fam.residual = [self, kmat](const Vec& u, const Vec& uprev, const Vec&) {
      Vec r = self->mass_.matvec(u - uprev) / self->dt_ + self->convection(u) + kmat->matvec(u);
      for (int d = 0; d < self->dm_.num_dofs; ++d)
        if (self->fixed_[d]) r[d] = u[d];
      return r;
    };
    fam.jacobian = [self, kmat](const Vec& u, const Vec&, const Vec&) {
      std::vector<la::Triplet> trips;
      for (const auto& t : self->mass_.to_triplets())
        if (!self->fixed_[t.row]) trips.push_back({t.row, t.col, t.val / self->dt_});
      for (const auto& t : kmat->to_triplets())
        if (!self->fixed_[t.row]) trips.push_back(t);
      self->convection_jacobian(u, trips);
      for (int d = 0; d < self->dm_.num_dofs; ++d)
        if (self->fixed_[d]) trips.push_back({d, d, 1.0});
      return la::SparseMatrix::from_triplets(trips, self->dm_.num_dofs, self->dm_.num_dofs);
    };
    fam.param_vjp = [self, kvjp](const Vec& u, const Vec&, const Vec&, const Vec& lambda) {
      // only the diffusion term K(nu) u carries nu; rows fixed by the
      // boundary have no dependence
      Vec lmask = lambda;
      for (int d = 0; d < self->dm_.num_dofs; ++d)
        if (self->fixed_[d]) lmask[d] = 0.0;
      return self->diffusion_param_vjp(u, lmask);
    };
    fam.prev_vjp = [self](const Vec&, const Vec&, const Vec&, const Vec& lambda) {
      Vec lmask = lambda;
      for (int d = 0; d < self->dm_.num_dofs; ++d)
        if (self->fixed_[d]) lmask[d] = 0.0;
      return Vec(-self->mass_.transpose_matvec(lmask) / self->dt_);
    };
    return fam;
  }

  pcl::Trajectory march(const Vec& nu_at_quad, double tol = 1e-10, int max_iter = 50,
                        std::FILE* log = nullptr) const {
    return pcl::time_march(step_family(nu_at_quad), initial_state(), nu_at_quad, steps_, tol,
                           max_iter, log);
  }

  Observation synthesize_observations(const Vec& nu_at_quad) const {
    auto traj = march(nu_at_quad);
    Observation obs;
    obs.step_values = traj.states;
    return obs;
  }

  LossGrad loss_and_grad(const Vec& nu_at_quad, const Observation& obs) const {
    try {
      // same tolerance as march() so reconstructing the observed trajectory
      // reproduces it exactly
      auto fam = step_family(nu_at_quad);
      auto traj = pcl::time_march(fam, initial_state(), nu_at_quad, steps_, 1e-10);
      double loss = 0.0;
      std::vector<Vec> djdu(traj.states.size());
      for (size_t t = 0; t < traj.states.size(); ++t) {
        Vec r = traj.states[t] - obs.step_values[t];
        loss += r.squaredNorm();
        djdu[t] = 2.0 * r;
      }
      Vec grad = pcl::time_march_adjoint(traj, djdu, fam, nu_at_quad);
      return {true, loss, grad, ""};
    } catch (const SingularMatrixError& e) {
      return {false, 0.0, Vec(), std::string("solver failure: ") + e.what()};
    } catch (const pcl::SolverDivergedError& e) {
      return {false, 0.0, Vec(),
              "newton divergence at step " + std::to_string(e.step) + ": " + e.what()};
    }
  }

  Vec convection(const Vec& u) const {
    const auto& t = *table_;
    Vec out = Vec::Zero(dm_.num_dofs);
    for (int e = 0; e < t.n_elems; ++e) {
      const auto& dofs = dm_.element_dofs[e];
      for (int q = 0; q < t.n_qp; ++q) {
        double w = t.wdet[t.qi(e, q)];
        Vec2 uq = Vec2::Zero();
        Mat2 gu = Mat2::Zero();  // gu(a,b) = d u_a / d x_b
        for (int j = 0; j < t.n_shape; ++j) {
          double v = t.values[t.vi(e, q, j)];
          Vec2 g(t.gx[t.vi(e, q, j)], t.gy[t.vi(e, q, j)]);
          uq.x() += u[dofs[2 * j]] * v;
          uq.y() += u[dofs[2 * j + 1]] * v;
          gu.row(0) += u[dofs[2 * j]] * g.transpose();
          gu.row(1) += u[dofs[2 * j + 1]] * g.transpose();
        }
        Vec2 conv = gu * uq;  // (u . grad) u
        for (int i = 0; i < t.n_shape; ++i) {
          double v = t.values[t.vi(e, q, i)];
          out[dofs[2 * i]] += w * conv.x() * v;
          out[dofs[2 * i + 1]] += w * conv.y() * v;
        }
      }
    }
    return out;
  }

 private:
  void convection_jacobian(const Vec& u, std::vector<la::Triplet>& trips) const {
    const auto& t = *table_;
    for (int e = 0; e < t.n_elems; ++e) {
      const auto& dofs = dm_.element_dofs[e];
      for (int q = 0; q < t.n_qp; ++q) {
        double w = t.wdet[t.qi(e, q)];
        Vec2 uq = Vec2::Zero();
        Mat2 gu = Mat2::Zero();
        for (int j = 0; j < t.n_shape; ++j) {
          double v = t.values[t.vi(e, q, j)];
          Vec2 g(t.gx[t.vi(e, q, j)], t.gy[t.vi(e, q, j)]);
          uq.x() += u[dofs[2 * j]] * v;
          uq.y() += u[dofs[2 * j + 1]] * v;
          gu.row(0) += u[dofs[2 * j]] * g.transpose();
          gu.row(1) += u[dofs[2 * j + 1]] * g.transpose();
        }
        for (int i = 0; i < t.n_shape; ++i) {
          double vi = t.values[t.vi(e, q, i)];
          for (int j = 0; j < t.n_shape; ++j) {
            double vj = t.values[t.vi(e, q, j)];
            Vec2 gj(t.gx[t.vi(e, q, j)], t.gy[t.vi(e, q, j)]);
            double ugj = uq.dot(gj);  // (u . grad) phi_j
            for (int a = 0; a < 2; ++a) {
              int row = dofs[2 * i + a];
              if (fixed_[row]) continue;
              for (int b = 0; b < 2; ++b) {
                // d/du_{jb} [(u.grad)u]_a = phi_j * du_a/dx_b + delta_ab (u.grad)phi_j
                double val = vj * gu(a, b) + (a == b ? ugj : 0.0);
                trips.push_back({row, dofs[2 * j + b], w * vi * val});
              }
            }
          }
        }
      }
    }
  }

  Vec diffusion_param_vjp(const Vec& u, const Vec& lmask) const {
    const auto& t = *table_;
    Vec out = Vec::Zero(t.num_quad_total());
    for (int e = 0; e < t.n_elems; ++e) {
      const auto& dofs = dm_.element_dofs[e];
      for (int q = 0; q < t.n_qp; ++q) {
        double w = t.wdet[t.qi(e, q)];
        Vec2 gl0 = Vec2::Zero(), gl1 = Vec2::Zero(), gu0 = Vec2::Zero(), gu1 = Vec2::Zero();
        for (int j = 0; j < t.n_shape; ++j) {
          Vec2 g(t.gx[t.vi(e, q, j)], t.gy[t.vi(e, q, j)]);
          gl0 += lmask[dofs[2 * j]] * g;
          gl1 += lmask[dofs[2 * j + 1]] * g;
          gu0 += u[dofs[2 * j]] * g;
          gu1 += u[dofs[2 * j + 1]] * g;
        }
        out[t.qi(e, q)] = w * (gl0.dot(gu0) + gl1.dot(gu1));
      }
    }
    return out;
  }

  Mesh mesh_;
  DofMap dm_;
  std::shared_ptr<ShapeTable> table_;
  int steps_;
  double dt_;
  std::vector<char> fixed_;
  la::SparseMatrix mass_;
};

}  // namespace fieldinv::problems
