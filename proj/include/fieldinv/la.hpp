#pragma once

// Row-compressed sparse matrices, a direct LU solver (Eigen SparseLU
// backend), and the adjoint rule for linear solves.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cstdio>
#include <memory>
#include <utility>
#include <vector>

#include "fieldinv/core.hpp"

namespace fieldinv::la {

struct Triplet {
  int row, col;
  double val;
};

class SparseMatrix {
 public:
  SparseMatrix() = default;

  // Duplicate (row, col) entries are summed; this is the assembly contract.
  static SparseMatrix from_triplets(const std::vector<Triplet>& trips, int rows, int cols) {
    for (const auto& t : trips)
      if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
        throw InvalidArgument("from_triplets: index out of range");
    SparseMatrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    std::vector<std::vector<std::pair<int, double>>> by_row(rows);
    for (const auto& t : trips) by_row[t.row].emplace_back(t.col, t.val);
    m.row_ptr_.assign(rows + 1, 0);
    for (int r = 0; r < rows; ++r) {
      auto& row = by_row[r];
      std::sort(row.begin(), row.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      int unique = 0;
      for (size_t k = 0; k < row.size(); ++k) {
        if (unique > 0 && row[unique - 1].first == row[k].first) {
          row[unique - 1].second += row[k].second;
        } else {
          row[unique++] = row[k];
        }
      }
      row.resize(unique);
      m.row_ptr_[r + 1] = m.row_ptr_[r] + unique;
    }
    m.col_ind_.reserve(m.row_ptr_[rows]);
    m.vals_.reserve(m.row_ptr_[rows]);
    for (int r = 0; r < rows; ++r) {
      for (const auto& [c, v] : by_row[r]) {
        m.col_ind_.push_back(c);
        m.vals_.push_back(v);
      }
    }
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int nnz() const { return static_cast<int>(vals_.size()); }

  const std::vector<int>& row_ptr() const { return row_ptr_; }
  const std::vector<int>& col_ind() const { return col_ind_; }
  const std::vector<double>& values() const { return vals_; }
  std::vector<double>& values() { return vals_; }

  // Index into the value array of entry (i, j), or -1 if not in the pattern.
  int find(int i, int j) const {
    auto lo = col_ind_.begin() + row_ptr_[i];
    auto hi = col_ind_.begin() + row_ptr_[i + 1];
    auto it = std::lower_bound(lo, hi, j);
    if (it == hi || *it != j) return -1;
    return static_cast<int>(it - col_ind_.begin());
  }

  double coeff(int i, int j) const {
    int k = find(i, j);
    return k < 0 ? 0.0 : vals_[k];
  }

  // Same pattern, new values.
  SparseMatrix with_values(const Vec& v) const {
    if (v.size() != nnz()) throw InvalidArgument("with_values: length mismatch");
    SparseMatrix m = *this;
    for (int k = 0; k < nnz(); ++k) m.vals_[k] = v[k];
    return m;
  }

  Vec values_vec() const {
    return Eigen::Map<const Vec>(vals_.data(), static_cast<long>(vals_.size()));
  }

  Vec matvec(const Vec& x) const {
    if (x.size() != cols_) throw InvalidArgument("matvec: dimension mismatch");
    Vec y = Vec::Zero(rows_);
    for (int r = 0; r < rows_; ++r)
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        y[r] += vals_[k] * x[col_ind_[k]];
    return y;
  }

  Vec transpose_matvec(const Vec& x) const {
    if (x.size() != rows_) throw InvalidArgument("transpose_matvec: dimension mismatch");
    Vec y = Vec::Zero(cols_);
    for (int r = 0; r < rows_; ++r)
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        y[col_ind_[k]] += vals_[k] * x[r];
    return y;
  }

  std::vector<Triplet> to_triplets() const {
    std::vector<Triplet> t;
    t.reserve(vals_.size());
    for (int r = 0; r < rows_; ++r)
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        t.push_back({r, col_ind_[k], vals_[k]});
    return t;
  }

  Eigen::SparseMatrix<double> to_eigen() const {
    Eigen::SparseMatrix<double> m(rows_, cols_);
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(vals_.size());
    for (int r = 0; r < rows_; ++r)
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        t.emplace_back(r, col_ind_[k], vals_[k]);
    m.setFromTriplets(t.begin(), t.end());
    m.makeCompressed();
    return m;
  }

  void write_matrix_market(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("write_matrix_market: cannot open " + path);
    std::fprintf(f, "%%%%MatrixMarket matrix coordinate real general\n");
    std::fprintf(f, "%d %d %d\n", rows_, cols_, nnz());
    for (int r = 0; r < rows_; ++r)
      for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        std::fprintf(f, "%d %d %.17g\n", r + 1, col_ind_[k] + 1, vals_[k]);
    std::fclose(f);
  }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<int> row_ptr_{0};
  std::vector<int> col_ind_;
  std::vector<double> vals_;
};

inline SparseMatrix assemble_from_triplets(const std::vector<Triplet>& trips, int rows, int cols) {
  return SparseMatrix::from_triplets(trips, rows, cols);
}

class Factorization {
 public:
  explicit Factorization(const SparseMatrix& a) : eigen_(a.to_eigen()) {
    if (a.rows() != a.cols()) throw InvalidArgument("Factorization: matrix not square");
    lu_.compute(eigen_);
    if (lu_.info() != Eigen::Success) {
      throw SingularMatrixError("sparse LU failed: " + lu_.lastErrorMessage(), -1);
    }
  }

  Vec solve(const Vec& b) const {
    Vec x = lu_.solve(b);
    if (lu_.info() != Eigen::Success)
      throw SingularMatrixError("sparse LU solve failed", -1);
    return x;
  }

  Vec solve_transpose(const Vec& b) const {
    Vec x = lu_.transpose().solve(b);
    if (lu_.info() != Eigen::Success)
      throw SingularMatrixError("sparse LU transpose solve failed", -1);
    return x;
  }

 private:
  Eigen::SparseMatrix<double> eigen_;
  // SparseLU::transpose() is non-const in Eigen 3.4 though solves do not
  // mutate the factorization
  mutable Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
};

struct SolveResult {
  Vec x;
  std::shared_ptr<Factorization> fact;
};

inline SolveResult solve(const SparseMatrix& a, const Vec& b) {
  if (a.rows() != b.size()) throw InvalidArgument("solve: dimension mismatch");
  auto fact = std::make_shared<Factorization>(a);
  return {fact->solve(b), fact};
}

struct SolveVjpResult {
  Vec abar;  // adjoint of A restricted to A's sparsity pattern
  Vec bbar;
};

// Adjoint of u = solve(A, b): solve A^T lambda = ubar, then
// bbar = lambda and Abar[i,j] = -lambda[i] * u[j] on the pattern.
inline SolveVjpResult solve_vjp(const Factorization& fact, const SparseMatrix& a,
                                const Vec& u, const Vec& ubar) {
  Vec lambda = fact.solve_transpose(ubar);
  Vec abar = Vec::Zero(a.nnz());
  const auto& rp = a.row_ptr();
  const auto& ci = a.col_ind();
  for (int r = 0; r < a.rows(); ++r)
    for (int k = rp[r]; k < rp[r + 1]; ++k)
      abar[k] = -lambda[r] * u[ci[k]];
  return {abar, lambda};
}

}  // namespace fieldinv::la
