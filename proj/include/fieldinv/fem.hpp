#pragma once

// Shape functions, tabulated element data, and assembly operators.
// Coefficient fields enter assembly only as values at quadrature points;
// every coefficient-dependent assembly returns a vjp that routes a matrix
// adjoint (restricted to the sparsity pattern) back to those values.

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "fieldinv/core.hpp"
#include "fieldinv/la.hpp"
#include "fieldinv/mesh.hpp"

namespace fieldinv::fem {

using mesh::DofMap;
using mesh::Mesh;
using mesh::QuadratureRule;
using mesh::Side;
using mesh::SpaceKind;

struct ShapeEval {
  std::vector<double> values;
  std::vector<Vec2> grads;  // reference-space gradients
};

inline ShapeEval shape_eval(SpaceKind kind, const Vec2& p) {
  const double xi = p.x(), eta = p.y();
  const double l1 = 1.0 - xi - eta, l2 = xi, l3 = eta;
  const Vec2 d1(-1.0, -1.0), d2(1.0, 0.0), d3(0.0, 1.0);
  ShapeEval s;
  switch (mesh::scalar_base(kind)) {
    case SpaceKind::P0:
      s.values = {1.0};
      s.grads = {Vec2::Zero()};
      break;
    case SpaceKind::P1:
      s.values = {l1, l2, l3};
      s.grads = {d1, d2, d3};
      break;
    case SpaceKind::P2:
      s.values = {l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1),
                  4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1};
      s.grads = {(4 * l1 - 1) * d1, (4 * l2 - 1) * d2, (4 * l3 - 1) * d3,
                 4.0 * (l1 * d2 + l2 * d1), 4.0 * (l2 * d3 + l3 * d2),
                 4.0 * (l3 * d1 + l1 * d3)};
      break;
    default:
      throw InvalidArgument("shape_eval: scalar kinds only");
  }
  return s;
}

// Per-(element, quad point) shape values, physical gradients, and
// weight-times-Jacobian factors for one scalar space.
struct ShapeTable {
  int n_elems = 0, n_qp = 0, n_shape = 0;
  std::vector<double> values;   // [e * n_qp * n_shape + q * n_shape + i]
  std::vector<double> gx, gy;   // same layout, physical gradients
  std::vector<double> wdet;     // [e * n_qp + q]
  std::vector<Vec2> qpoints;    // physical quadrature points, [e * n_qp + q]

  int vi(int e, int q, int i) const { return (e * n_qp + q) * n_shape + i; }
  int qi(int e, int q) const { return e * n_qp + q; }
  int num_quad_total() const { return n_elems * n_qp; }
};

inline ShapeTable build_shape_table(const Mesh& m, SpaceKind kind, const QuadratureRule& quad) {
  SpaceKind base = mesh::scalar_base(kind);
  ShapeTable t;
  t.n_elems = m.num_elements();
  t.n_qp = quad.size();
  std::vector<ShapeEval> ref(quad.size());
  for (int q = 0; q < quad.size(); ++q) ref[q] = shape_eval(base, quad.points[q]);
  t.n_shape = static_cast<int>(ref[0].values.size());
  t.values.resize(t.n_elems * t.n_qp * t.n_shape);
  t.gx.resize(t.values.size());
  t.gy.resize(t.values.size());
  t.wdet.resize(t.n_elems * t.n_qp);
  t.qpoints.resize(t.n_elems * t.n_qp);
  for (int e = 0; e < t.n_elems; ++e) {
    const auto& el = m.elements[e];
    Vec2 p0 = m.nodes[el[0]];
    Mat2 J;
    J.col(0) = m.nodes[el[1]] - p0;
    J.col(1) = m.nodes[el[2]] - p0;
    double det = J.determinant();
    if (det <= 0.0) throw InvalidArgument("build_shape_table: non-positive element area");
    Mat2 JinvT = J.inverse().transpose();
    for (int q = 0; q < t.n_qp; ++q) {
      t.wdet[t.qi(e, q)] = quad.weights[q] * det;
      t.qpoints[t.qi(e, q)] = p0 + J * quad.points[q];
      for (int i = 0; i < t.n_shape; ++i) {
        Vec2 g = JinvT * ref[q].grads[i];
        t.values[t.vi(e, q, i)] = ref[q].values[i];
        t.gx[t.vi(e, q, i)] = g.x();
        t.gy[t.vi(e, q, i)] = g.y();
      }
    }
  }
  return t;
}

// Coordinates of all quadrature points, element-major.
inline std::vector<Vec2> quad_points(const ShapeTable& t) { return t.qpoints; }

struct AssembledMatrix {
  std::shared_ptr<la::SparseMatrix> A;
  // abar (on A's pattern) -> adjoint of the coefficient values at quad points
  std::function<Vec(const Vec& abar)> vjp;
};

namespace detail {

// Scalar diffusion kernel replicated over `ncomp` interleaved components.
// dm must enumerate the matching (scalar or vector) space.
inline AssembledMatrix assemble_diffusion(const Mesh& /*m*/, const DofMap& dm,
                                          const std::shared_ptr<const ShapeTable>& t,
                                          const Vec& nu_at_quad, int ncomp) {
  if (nu_at_quad.size() != t->num_quad_total())
    throw InvalidArgument("assemble_diffusion: nu_at_quad length mismatch");
  std::vector<la::Triplet> trips;
  trips.reserve(static_cast<size_t>(t->n_elems) * t->n_qp * t->n_shape * t->n_shape * ncomp);
  for (int e = 0; e < t->n_elems; ++e) {
    const auto& dofs = dm.element_dofs[e];
    for (int q = 0; q < t->n_qp; ++q) {
      double w = t->wdet[t->qi(e, q)] * nu_at_quad[t->qi(e, q)];
      for (int i = 0; i < t->n_shape; ++i) {
        for (int j = 0; j < t->n_shape; ++j) {
          double k = w * (t->gx[t->vi(e, q, i)] * t->gx[t->vi(e, q, j)] +
                          t->gy[t->vi(e, q, i)] * t->gy[t->vi(e, q, j)]);
          for (int c = 0; c < ncomp; ++c)
            trips.push_back({dofs[ncomp * i + c], dofs[ncomp * j + c], k});
        }
      }
    }
  }
  auto A = std::make_shared<la::SparseMatrix>(
      la::SparseMatrix::from_triplets(trips, dm.num_dofs, dm.num_dofs));
  auto eldofs = std::make_shared<std::vector<std::vector<int>>>(dm.element_dofs);
  auto vjp = [A, t, eldofs, ncomp](const Vec& abar) {
    Vec nubar = Vec::Zero(t->num_quad_total());
    for (int e = 0; e < t->n_elems; ++e) {
      const auto& dofs = (*eldofs)[e];
      for (int q = 0; q < t->n_qp; ++q) {
        double w = t->wdet[t->qi(e, q)];
        double acc = 0.0;
        for (int i = 0; i < t->n_shape; ++i) {
          for (int j = 0; j < t->n_shape; ++j) {
            double k = w * (t->gx[t->vi(e, q, i)] * t->gx[t->vi(e, q, j)] +
                            t->gy[t->vi(e, q, i)] * t->gy[t->vi(e, q, j)]);
            for (int c = 0; c < ncomp; ++c) {
              int idx = A->find(dofs[ncomp * i + c], dofs[ncomp * j + c]);
              if (idx >= 0) acc += abar[idx] * k;
            }
          }
        }
        nubar[t->qi(e, q)] += acc;
      }
    }
    return nubar;
  };
  return {A, vjp};
}

}  // namespace detail

inline AssembledMatrix assemble_scalar_stiffness(const Mesh& m, const DofMap& dm,
                                                 const std::shared_ptr<const ShapeTable>& t,
                                                 const Vec& nu_at_quad) {
  return detail::assemble_diffusion(m, dm, t, nu_at_quad, 1);
}

// (grad u, nu grad v) over an interleaved two-component vector space.
inline AssembledMatrix assemble_vector_laplace(const Mesh& m, const DofMap& dm_vec,
                                               const std::shared_ptr<const ShapeTable>& t,
                                               const Vec& nu_at_quad) {
  return detail::assemble_diffusion(m, dm_vec, t, nu_at_quad, 2);
}

enum class ElasticityFormula { nu_weighted, standard };

struct ElasticMaterial {
  double poisson = 0.3;
  ElasticityFormula formula = ElasticityFormula::nu_weighted;

  // lambda(E), mu(E) are linear in E; returns the two coefficients.
  std::pair<double, double> lame_coeffs() const {
    const double nu = poisson;
    double clam = nu / ((1 + nu) * (1 - 2 * nu));
    double cmu = formula == ElasticityFormula::nu_weighted ? nu / (1 - nu * nu)
                                                         : 1.0 / (2 * (1 + nu));
    return {clam, cmu};
  }
};

inline AssembledMatrix assemble_elasticity_stiffness(const Mesh& /*m*/, const DofMap& dm_vec,
                                                     const std::shared_ptr<const ShapeTable>& t,
                                                     const Vec& e_at_quad,
                                                     const ElasticMaterial& mat) {
  if (e_at_quad.size() != t->num_quad_total())
    throw InvalidArgument("assemble_elasticity_stiffness: E_at_quad length mismatch");
  auto [clam, cmu] = mat.lame_coeffs();
  auto kernel = [t](int e, int q, int i, int a, int j, int b, double lam, double mu) {
    double gia = a == 0 ? t->gx[t->vi(e, q, i)] : t->gy[t->vi(e, q, i)];
    double gib = b == 0 ? t->gx[t->vi(e, q, i)] : t->gy[t->vi(e, q, i)];
    double gja = a == 0 ? t->gx[t->vi(e, q, j)] : t->gy[t->vi(e, q, j)];
    double gjb = b == 0 ? t->gx[t->vi(e, q, j)] : t->gy[t->vi(e, q, j)];
    double gdot = t->gx[t->vi(e, q, i)] * t->gx[t->vi(e, q, j)] +
                  t->gy[t->vi(e, q, i)] * t->gy[t->vi(e, q, j)];
    return lam * gia * gjb + mu * gib * gja + (a == b ? mu * gdot : 0.0);
  };
  std::vector<la::Triplet> trips;
  for (int e = 0; e < t->n_elems; ++e) {
    const auto& dofs = dm_vec.element_dofs[e];
    for (int q = 0; q < t->n_qp; ++q) {
      double w = t->wdet[t->qi(e, q)];
      double lam = clam * e_at_quad[t->qi(e, q)];
      double mu = cmu * e_at_quad[t->qi(e, q)];
      for (int i = 0; i < t->n_shape; ++i)
        for (int a = 0; a < 2; ++a)
          for (int j = 0; j < t->n_shape; ++j)
            for (int b = 0; b < 2; ++b)
              trips.push_back({dofs[2 * i + a], dofs[2 * j + b],
                               w * kernel(e, q, i, a, j, b, lam, mu)});
    }
  }
  auto A = std::make_shared<la::SparseMatrix>(
      la::SparseMatrix::from_triplets(trips, dm_vec.num_dofs, dm_vec.num_dofs));
  auto eldofs = std::make_shared<std::vector<std::vector<int>>>(dm_vec.element_dofs);
  auto vjp = [A, t, eldofs, clam, cmu, kernel](const Vec& abar) {
    Vec ebar = Vec::Zero(t->num_quad_total());
    for (int e = 0; e < t->n_elems; ++e) {
      const auto& dofs = (*eldofs)[e];
      for (int q = 0; q < t->n_qp; ++q) {
        double w = t->wdet[t->qi(e, q)];
        double acc = 0.0;
        for (int i = 0; i < t->n_shape; ++i)
          for (int a = 0; a < 2; ++a)
            for (int j = 0; j < t->n_shape; ++j)
              for (int b = 0; b < 2; ++b) {
                int idx = A->find(dofs[2 * i + a], dofs[2 * j + b]);
                if (idx >= 0)
                  acc += abar[idx] * w * kernel(e, q, i, a, j, b, clam, cmu);
              }
        ebar[t->qi(e, q)] += acc;
      }
    }
    return ebar;
  };
  return {A, vjp};
}

// B[vel dof, element] = integral over the element of d(phi_i)/dx_a;
// pressure space is P0, so one column per element.
inline la::SparseMatrix assemble_divergence(const Mesh& /*m*/, const DofMap& dm_vec,
                                            const std::shared_ptr<const ShapeTable>& t,
                                            const DofMap& dm_p0) {
  std::vector<la::Triplet> trips;
  for (int e = 0; e < t->n_elems; ++e) {
    const auto& dofs = dm_vec.element_dofs[e];
    int pe = dm_p0.element_dofs[e][0];
    for (int q = 0; q < t->n_qp; ++q) {
      double w = t->wdet[t->qi(e, q)];
      for (int i = 0; i < t->n_shape; ++i) {
        trips.push_back({dofs[2 * i], pe, w * t->gx[t->vi(e, q, i)]});
        trips.push_back({dofs[2 * i + 1], pe, w * t->gy[t->vi(e, q, i)]});
      }
    }
  }
  return la::SparseMatrix::from_triplets(trips, dm_vec.num_dofs, dm_p0.num_dofs);
}

// Constant per-component body force. f has 1 entry for scalar spaces,
// 2 for vector spaces.
inline Vec assemble_load(const Mesh& /*m*/, const DofMap& dm,
                         const std::shared_ptr<const ShapeTable>& t,
                         const std::vector<double>& f) {
  int ncomp = mesh::is_vector_space(dm.kind) ? 2 : 1;
  if (static_cast<int>(f.size()) != ncomp)
    throw InvalidArgument("assemble_load: component count mismatch");
  Vec F = Vec::Zero(dm.num_dofs);
  for (int e = 0; e < t->n_elems; ++e) {
    const auto& dofs = dm.element_dofs[e];
    for (int q = 0; q < t->n_qp; ++q) {
      double w = t->wdet[t->qi(e, q)];
      for (int i = 0; i < t->n_shape; ++i)
        for (int c = 0; c < ncomp; ++c)
          F[dofs[ncomp * i + c]] += w * f[c] * t->values[t->vi(e, q, i)];
    }
  }
  return F;
}

// Spatially varying load; f(x) returns one value per component.
inline Vec assemble_load_function(const Mesh& /*m*/, const DofMap& dm,
                                  const std::shared_ptr<const ShapeTable>& t,
                                  const std::function<std::vector<double>(const Vec2&)>& f) {
  int ncomp = mesh::is_vector_space(dm.kind) ? 2 : 1;
  Vec F = Vec::Zero(dm.num_dofs);
  for (int e = 0; e < t->n_elems; ++e) {
    const auto& dofs = dm.element_dofs[e];
    for (int q = 0; q < t->n_qp; ++q) {
      double w = t->wdet[t->qi(e, q)];
      auto fv = f(t->qpoints[t->qi(e, q)]);
      for (int i = 0; i < t->n_shape; ++i)
        for (int c = 0; c < ncomp; ++c)
          F[dofs[ncomp * i + c]] += w * fv[c] * t->values[t->vi(e, q, i)];
    }
  }
  return F;
}

// Interleaved-component mass matrix (no coefficient dependence).
inline la::SparseMatrix assemble_mass(const Mesh& /*m*/, const DofMap& dm,
                                      const std::shared_ptr<const ShapeTable>& t) {
  int ncomp = mesh::is_vector_space(dm.kind) ? 2 : 1;
  std::vector<la::Triplet> trips;
  for (int e = 0; e < t->n_elems; ++e) {
    const auto& dofs = dm.element_dofs[e];
    for (int q = 0; q < t->n_qp; ++q) {
      double w = t->wdet[t->qi(e, q)];
      for (int i = 0; i < t->n_shape; ++i)
        for (int j = 0; j < t->n_shape; ++j) {
          double k = w * t->values[t->vi(e, q, i)] * t->values[t->vi(e, q, j)];
          for (int c = 0; c < ncomp; ++c)
            trips.push_back({dofs[ncomp * i + c], dofs[ncomp * j + c], k});
        }
    }
  }
  return la::SparseMatrix::from_triplets(trips, dm.num_dofs, dm.num_dofs);
}

// Constant traction on one boundary side. Edge integrals of the P1/P2
// basis restricted to an edge are exact: P1 endpoints len/2; P2 endpoints
// len/6, midpoint 2*len/3.
inline Vec assemble_boundary_traction(const Mesh& m, const DofMap& dm_vec, Side side,
                                      const std::array<double, 2>& traction) {
  if (!mesh::is_vector_space(dm_vec.kind))
    throw InvalidArgument("assemble_boundary_traction: vector space required");
  SpaceKind base = mesh::scalar_base(dm_vec.kind);
  Vec F = Vec::Zero(dm_vec.num_dofs);
  bool any = false;
  for (const auto& be : m.boundary_edges) {
    if (be.side != side) continue;
    any = true;
    const mesh::Edge& ed = m.edges[be.edge];
    double len = (m.nodes[ed.b] - m.nodes[ed.a]).norm();
    std::vector<std::pair<int, double>> contrib;  // scalar dof -> integral of basis
    if (base == SpaceKind::P1) {
      contrib = {{ed.a, len / 2}, {ed.b, len / 2}};
    } else {
      contrib = {{ed.a, len / 6}, {ed.b, len / 6},
                 {m.num_corner_nodes + be.edge, 2 * len / 3}};
    }
    for (const auto& [d, w] : contrib) {
      F[2 * d] += traction[0] * w;
      F[2 * d + 1] += traction[1] * w;
    }
  }
  (void)any;
  return F;
}

// Symmetric row/column elimination of Dirichlet constraints.
struct DirichletSystem {
  std::shared_ptr<la::SparseMatrix> A;  // constrained rows/cols -> identity
  Vec b;
  // abar on the modified pattern + bbar of the modified rhs -> abar on the
  // original pattern
  std::function<Vec(const Vec& abar_mod, const Vec& bbar_mod)> vjp_matrix;
  // bbar of the modified rhs -> bbar of the original rhs
  std::function<Vec(const Vec& bbar_mod)> vjp_rhs;
};

inline DirichletSystem apply_dirichlet(const la::SparseMatrix& A, const Vec& b,
                                       const std::vector<std::pair<int, double>>& bc) {
  if (A.rows() != A.cols() || A.rows() != b.size())
    throw InvalidArgument("apply_dirichlet: square system required");
  const int n = A.rows();
  std::vector<char> fixed(n, 0);
  Vec g = Vec::Zero(n);
  for (const auto& [d, v] : bc) {
    if (d < 0 || d >= n) throw InvalidArgument("apply_dirichlet: dof out of range");
    fixed[d] = 1;
    g[d] = v;
  }
  Vec bmod = b;
  std::vector<la::Triplet> trips;
  for (const auto& t : A.to_triplets()) {
    if (!fixed[t.row] && !fixed[t.col]) {
      trips.push_back(t);
    } else if (!fixed[t.row] && fixed[t.col]) {
      bmod[t.row] -= t.val * g[t.col];
    }
  }
  for (int i = 0; i < n; ++i)
    if (fixed[i]) {
      trips.push_back({i, i, 1.0});
      bmod[i] = g[i];
    }
  DirichletSystem out;
  out.A = std::make_shared<la::SparseMatrix>(la::SparseMatrix::from_triplets(trips, n, n));
  out.b = bmod;
  auto Amod = out.A;
  auto orig_pattern = std::make_shared<la::SparseMatrix>(A.with_values(Vec::Zero(A.nnz())));
  auto fx = std::make_shared<std::vector<char>>(fixed);
  auto gv = std::make_shared<Vec>(g);
  out.vjp_matrix = [Amod, orig_pattern, fx, gv](const Vec& abar_mod, const Vec& bbar_mod) {
    const auto& O = *orig_pattern;
    Vec abar = Vec::Zero(O.nnz());
    const auto& rp = O.row_ptr();
    const auto& ci = O.col_ind();
    for (int r = 0; r < O.rows(); ++r) {
      if ((*fx)[r]) continue;
      for (int k = rp[r]; k < rp[r + 1]; ++k) {
        int c = ci[k];
        if (!(*fx)[c]) {
          int idx = Amod->find(r, c);
          if (idx >= 0) abar[k] = abar_mod[idx];
        } else {
          abar[k] = -bbar_mod[r] * (*gv)[c];
        }
      }
    }
    return abar;
  };
  out.vjp_rhs = [fx](const Vec& bbar_mod) {
    Vec bbar = bbar_mod;
    for (int i = 0; i < bbar.size(); ++i)
      if ((*fx)[i]) bbar[i] = 0.0;
    return bbar;
  };
  return out;
}

}  // namespace fieldinv::fem
