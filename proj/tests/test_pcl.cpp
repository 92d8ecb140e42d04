#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fieldinv/pcl.hpp"

using namespace fieldinv;
using namespace fieldinv::pcl;

namespace {

la::SparseMatrix scalar_mat(double v) {
  return la::SparseMatrix::from_triplets({{0, 0, v}}, 1, 1);
}

Vec scalar_vec(double v) {
  Vec x(1);
  x[0] = v;
  return x;
}

// 1D chain Laplacian with homogeneous Dirichlet ends eliminated, n interior
// nodes, unit spacing
Eigen::MatrixXd chain_laplacian(int n) {
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    K(i, i) = 2.0;
    if (i > 0) K(i, i - 1) = -1.0;
    if (i + 1 < n) K(i, i + 1) = -1.0;
  }
  return K;
}

la::SparseMatrix dense_to_sparse(const Eigen::MatrixXd& d) {
  std::vector<la::Triplet> t;
  for (int i = 0; i < d.rows(); ++i)
    for (int j = 0; j < d.cols(); ++j)
      if (d(i, j) != 0.0) t.push_back({i, j, d(i, j)});
  return la::SparseMatrix::from_triplets(t, static_cast<int>(d.rows()),
                                         static_cast<int>(d.cols()));
}

// implicit heat step family: (u - uprev)/dt + theta * K u = 0, theta scalar
TimeStepFamily heat_family(const Eigen::MatrixXd& K, double dt) {
  TimeStepFamily fam;
  fam.residual = [K, dt](const Vec& u, const Vec& uprev, const Vec& th) {
    return Vec((u - uprev) / dt + th[0] * (K * u));
  };
  fam.jacobian = [K, dt](const Vec& u, const Vec&, const Vec& th) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Identity(u.size(), u.size()) / dt + th[0] * K;
    return dense_to_sparse(J);
  };
  fam.param_vjp = [K](const Vec& u, const Vec&, const Vec&, const Vec& lam) {
    return scalar_vec(lam.dot(K * u));
  };
  fam.prev_vjp = [dt](const Vec&, const Vec&, const Vec&, const Vec& lam) {
    return Vec(-lam / dt);
  };
  return fam;
}

}  // namespace

TEST_CASE("newton solve on scalar problems") {
  NonlinearProblem p;
  p.residual = [](const Vec& u, const Vec&) { return scalar_vec(u[0] * u[0] - 4.0); };
  p.jacobian = [](const Vec& u, const Vec&) { return scalar_mat(2.0 * u[0]); };
  auto r = newton_solve(p, scalar_vec(3.0), Vec(), 1e-12, 50);
  CHECK_THAT(r.u[0], Catch::Matchers::WithinAbs(2.0, 1e-10));
  CHECK(r.report.converged);
  CHECK(r.report.iterations <= 8);

  // quadratic tail: once the residual is small each step roughly squares it
  const auto& h = r.report.history;
  for (size_t k = 0; k + 1 < h.size(); ++k) {
    CHECK(h[k + 1] < h[k]);
    if (h[k] < 1e-2 && h[k + 1] > 0.0) CHECK(h[k + 1] <= std::pow(h[k], 1.5));
  }

  // a linear residual converges in one iteration
  NonlinearProblem lin;
  lin.residual = [](const Vec& u, const Vec&) { return scalar_vec(3.0 * u[0] - 6.0); };
  lin.jacobian = [](const Vec&, const Vec&) { return scalar_mat(3.0); };
  auto rl = newton_solve(lin, scalar_vec(10.0), Vec(), 1e-12, 50);
  CHECK(rl.report.iterations == 1);
  CHECK_THAT(rl.u[0], Catch::Matchers::WithinAbs(2.0, 1e-12));
}

TEST_CASE("newton divergence is reported") {
  NonlinearProblem p;
  p.residual = [](const Vec& u, const Vec&) { return scalar_vec(u[0] * u[0] + 1.0); };
  p.jacobian = [](const Vec& u, const Vec&) { return scalar_mat(2.0 * u[0]); };
  try {
    // from 0.5 the iterates hop around without ever hitting u = 0
    newton_solve(p, scalar_vec(0.5), Vec(), 1e-12, 5);
    FAIL("expected SolverDivergedError");
  } catch (const SolverDivergedError& e) {
    CHECK_FALSE(e.report.converged);
    CHECK(e.step == -1);
    CHECK(e.report.history.size() == 6);
  }
}

TEST_CASE("implicit-function adjoint on scalar problems") {
  // F(u, th) = u - th, J = u^2 at th = 3: dJ/dth = 2u = 6
  NonlinearProblem p;
  p.residual = [](const Vec& u, const Vec& th) { return scalar_vec(u[0] - th[0]); };
  p.jacobian = [](const Vec&, const Vec&) { return scalar_mat(1.0); };
  p.param_vjp = [](const Vec&, const Vec&, const Vec& lam) { return scalar_vec(-lam[0]); };
  auto r = newton_solve(p, scalar_vec(0.0), scalar_vec(3.0), 1e-14);
  Vec g = pcl_adjoint(r, scalar_vec(2.0 * r.u[0]), p, scalar_vec(3.0));
  CHECK_THAT(g[0], Catch::Matchers::WithinAbs(6.0, 1e-10));

  // F(u, th) = u^3 - th, J = u at th = 8: dJ/dth = 1/(3 u^2) = 1/12
  NonlinearProblem c;
  c.residual = [](const Vec& u, const Vec& th) { return scalar_vec(u[0] * u[0] * u[0] - th[0]); };
  c.jacobian = [](const Vec& u, const Vec&) { return scalar_mat(3.0 * u[0] * u[0]); };
  c.param_vjp = [](const Vec&, const Vec&, const Vec& lam) { return scalar_vec(-lam[0]); };
  auto rc = newton_solve(c, scalar_vec(1.5), scalar_vec(8.0), 1e-14);
  Vec gc = pcl_adjoint(rc, scalar_vec(1.0), c, scalar_vec(8.0));
  CHECK_THAT(gc[0], Catch::Matchers::WithinAbs(1.0 / 12.0, 1e-10));
}

TEST_CASE("time march fixed point and linear oracle") {
  const int n = 5, T = 4;
  const double dt = 0.1, theta = 0.7;
  Eigen::MatrixXd K = chain_laplacian(n);
  auto fam = heat_family(K, dt);

  // zero initial state stays zero
  auto z = time_march(fam, Vec::Zero(n), scalar_vec(theta), T, 1e-12);
  for (const auto& u : z.states) CHECK(u.norm() == 0.0);

  // each implicit Euler step matches a direct dense solve
  Vec u0(n);
  u0 << 1, 2, 3, 2, 1;
  auto traj = time_march(fam, u0, scalar_vec(theta), T, 1e-13);
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) / dt + theta * K;
  Vec uprev = u0;
  for (int t = 0; t < T; ++t) {
    Vec direct = A.partialPivLu().solve(Vec(uprev / dt));
    CHECK((traj.states[t] - direct).lpNorm<Eigen::Infinity>() <= 1e-10);
    uprev = direct;
  }
  // the linear step converges in one Newton iteration
  for (const auto& rep : traj.reports) CHECK(rep.iterations == 1);
}

TEST_CASE("time march adjoint matches forward-mode sensitivities") {
  const int n = 5, T = 4;
  const double dt = 0.1, theta = 0.7;
  Eigen::MatrixXd K = chain_laplacian(n);
  auto fam = heat_family(K, dt);
  Vec u0(n);
  u0 << 1, -1, 2, 0.5, 1;
  Vec obs = Vec::Constant(n, 0.3);

  auto traj = time_march(fam, u0, scalar_vec(theta), T, 1e-13);
  std::vector<Vec> djdu;
  for (const auto& u : traj.states) djdu.push_back(2.0 * (u - obs));
  Vec grad = time_march_adjoint(traj, djdu, fam, scalar_vec(theta));

  // forward-mode oracle on the dense recursion: A du_t = duprev/dt - K u_t
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) / dt + theta * K;
  auto lu = A.partialPivLu();
  Vec du = Vec::Zero(n);
  double expect = 0.0;
  for (int t = 0; t < T; ++t) {
    du = lu.solve(Vec(du / dt - K * traj.states[t]));
    expect += 2.0 * (traj.states[t] - obs).dot(du);
  }
  CHECK_THAT(grad[0], Catch::Matchers::WithinRel(expect, 1e-9));

  CHECK_THROWS_AS(time_march_adjoint(traj, {djdu[0]}, fam, scalar_vec(theta)),
                  InvalidArgument);
}

TEST_CASE("single-step march reduces to the static adjoint") {
  const int n = 5;
  const double dt = 0.1, theta = 0.7;
  Eigen::MatrixXd K = chain_laplacian(n);
  auto fam = heat_family(K, dt);
  Vec u0(n);
  u0 << 1, 2, 0, -1, 1;

  auto traj = time_march(fam, u0, scalar_vec(theta), 1, 1e-13);
  Vec djdu = 2.0 * traj.states[0];
  Vec g1 = time_march_adjoint(traj, {djdu}, fam, scalar_vec(theta));

  NonlinearProblem p;
  p.residual = [&](const Vec& u, const Vec& th) { return fam.residual(u, u0, th); };
  p.jacobian = [&](const Vec& u, const Vec& th) { return fam.jacobian(u, u0, th); };
  p.param_vjp = [&](const Vec& u, const Vec& th, const Vec& l) {
    return fam.param_vjp(u, u0, th, l);
  };
  auto r = newton_solve(p, u0, scalar_vec(theta), 1e-13);
  Vec g2 = pcl_adjoint(r, Vec(2.0 * r.u), p, scalar_vec(theta));
  CHECK_THAT(g1[0], Catch::Matchers::WithinRel(g2[0], 1e-11));
}

TEST_CASE("diverging time step reports its index") {
  TimeStepFamily bad;
  bad.residual = [](const Vec& u, const Vec&, const Vec&) {
    return scalar_vec(u[0] * u[0] + 1.0);
  };
  bad.jacobian = [](const Vec& u, const Vec&, const Vec&) { return scalar_mat(2.0 * u[0]); };
  try {
    time_march(bad, scalar_vec(0.5), Vec(), 3, 1e-12, 4);
    FAIL("expected SolverDivergedError");
  } catch (const SolverDivergedError& e) {
    CHECK(e.step == 1);
  }
}
