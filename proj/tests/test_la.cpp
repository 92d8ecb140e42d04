#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "fieldinv/la.hpp"

using namespace fieldinv;
using namespace fieldinv::la;

namespace {

SparseMatrix identity(int n) {
  std::vector<Triplet> t;
  for (int i = 0; i < n; ++i) t.push_back({i, i, 1.0});
  return SparseMatrix::from_triplets(t, n, n);
}

SparseMatrix dense_to_sparse(const Eigen::MatrixXd& d) {
  std::vector<Triplet> t;
  for (int i = 0; i < d.rows(); ++i)
    for (int j = 0; j < d.cols(); ++j) t.push_back({i, j, d(i, j)});
  return SparseMatrix::from_triplets(t, static_cast<int>(d.rows()), static_cast<int>(d.cols()));
}

}  // namespace

TEST_CASE("triplet assembly sums duplicates") {
  auto m = SparseMatrix::from_triplets({{0, 0, 1.0}, {0, 0, 2.0}}, 2, 2);
  CHECK(m.coeff(0, 0) == 3.0);
  CHECK(m.nnz() == 1);

  auto z = SparseMatrix::from_triplets({}, 2, 2);
  CHECK(z.nnz() == 0);
  CHECK(z.matvec(Vec::Ones(2)).norm() == 0.0);

  Vec x(3);
  x << 1, -2, 5;
  CHECK((identity(3).matvec(x) - x).norm() == 0.0);

  CHECK_THROWS_AS(SparseMatrix::from_triplets({{2, 0, 1.0}}, 2, 2), InvalidArgument);
}

TEST_CASE("solve basics") {
  Vec b(3);
  b << 1, 2, 3;
  auto r = solve(identity(3), b);
  CHECK((r.x - b).norm() == 0.0);

  auto d = SparseMatrix::from_triplets({{0, 0, 2.0}, {1, 1, 4.0}}, 2, 2);
  Vec b2(2);
  b2 << 2, 8;
  Vec expect(2);
  expect << 1, 2;
  CHECK((solve(d, b2).x - expect).norm() < 1e-15);
}

TEST_CASE("seeded SPD system residual") {
  std::mt19937 rng(42);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(20, 20);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) m(i, j) = nd(rng);
  Eigen::MatrixXd spd = m.transpose() * m + Eigen::MatrixXd::Identity(20, 20);
  auto a = dense_to_sparse(spd);
  Vec b(20);
  for (int i = 0; i < 20; ++i) b[i] = nd(rng);
  auto r = solve(a, b);
  double res = (a.matvec(r.x) - b).lpNorm<Eigen::Infinity>();
  CHECK(res <= 1e-9 * (1.0 + b.lpNorm<Eigen::Infinity>()));
}

TEST_CASE("singular matrix reported") {
  auto s = SparseMatrix::from_triplets({{0, 0, 1.0}, {1, 1, 0.0}}, 2, 2);
  CHECK_THROWS_AS(solve(s, Vec::Ones(2)), SingularMatrixError);
}

TEST_CASE("matvec and transpose matvec") {
  std::mt19937 rng(7);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd d(10, 10);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) d(i, j) = nd(rng);
  auto a = dense_to_sparse(d);
  Vec x(10);
  for (int i = 0; i < 10; ++i) x[i] = nd(rng);
  CHECK((a.matvec(x) - d * x).norm() < 1e-13);
  CHECK((a.transpose_matvec(x) - d.transpose() * x).norm() < 1e-13);

  auto z = SparseMatrix::from_triplets({}, 4, 4);
  CHECK(z.transpose_matvec(Vec::Ones(4)).norm() == 0.0);
  CHECK_THROWS_AS(a.matvec(Vec::Ones(3)), InvalidArgument);
}

TEST_CASE("solve_vjp analytic cases") {
  // A = I: lambda = ubar
  auto I = identity(2);
  Vec u(2), ubar(2);
  u << 3, 4;
  ubar << 5, 6;
  auto rI = solve(I, u);
  auto vI = solve_vjp(*rI.fact, I, u, ubar);
  CHECK((vI.bbar - ubar).norm() < 1e-14);
  // pattern is the diagonal: Abar[i,i] = -ubar[i]*u[i]
  CHECK_THAT(vI.abar[0], Catch::Matchers::WithinAbs(-5.0 * 3.0, 1e-13));
  CHECK_THAT(vI.abar[1], Catch::Matchers::WithinAbs(-6.0 * 4.0, 1e-13));

  // A=diag(2,4), b=[2,8], loss = u2: u=[1,2], lambda=[0,1/4], Abar=diag(0,-1/2)
  auto d = SparseMatrix::from_triplets({{0, 0, 2.0}, {1, 1, 4.0}}, 2, 2);
  Vec b(2);
  b << 2, 8;
  auto r = solve(d, b);
  Vec ub(2);
  ub << 0, 1;
  auto v = solve_vjp(*r.fact, d, r.x, ub);
  CHECK_THAT(v.bbar[0], Catch::Matchers::WithinAbs(0.0, 1e-14));
  CHECK_THAT(v.bbar[1], Catch::Matchers::WithinAbs(0.25, 1e-14));
  CHECK_THAT(v.abar[0], Catch::Matchers::WithinAbs(0.0, 1e-14));
  CHECK_THAT(v.abar[1], Catch::Matchers::WithinAbs(-0.5, 1e-14));

  // ubar = 0 -> zero adjoints
  auto v0 = solve_vjp(*r.fact, d, r.x, Vec::Zero(2));
  CHECK(v0.bbar.norm() == 0.0);
  CHECK(v0.abar.norm() == 0.0);
}

TEST_CASE("factorization reuse matches independent solves") {
  std::mt19937 rng(3);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(15, 15);
  for (int i = 0; i < 15; ++i)
    for (int j = 0; j < 15; ++j) m(i, j) = nd(rng);
  Eigen::MatrixXd spd = m.transpose() * m + Eigen::MatrixXd::Identity(15, 15);
  auto a = dense_to_sparse(spd);
  Vec b1(15), b2(15);
  for (int i = 0; i < 15; ++i) {
    b1[i] = nd(rng);
    b2[i] = nd(rng);
  }
  Factorization f(a);
  Vec x1 = f.solve(b1), x2 = f.solve(b2);
  CHECK((x1 - solve(a, b1).x).lpNorm<Eigen::Infinity>() < 1e-14);
  CHECK((x2 - solve(a, b2).x).lpNorm<Eigen::Infinity>() < 1e-14);
  // transpose solve satisfies A^T x = b
  Vec xt = f.solve_transpose(b1);
  CHECK((a.transpose_matvec(xt) - b1).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("matrix market dump") {
  auto a = SparseMatrix::from_triplets({{0, 1, 2.5}, {1, 0, -1.0}}, 2, 2);
  a.write_matrix_market("mm_test.mtx");
  std::FILE* f = std::fopen("mm_test.mtx", "r");
  REQUIRE(f);
  char line[128];
  REQUIRE(std::fgets(line, sizeof(line), f));
  CHECK(std::string(line).rfind("%%MatrixMarket", 0) == 0);
  std::fclose(f);
  std::remove("mm_test.mtx");
}
