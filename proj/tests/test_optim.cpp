#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fieldinv/optim.hpp"

using namespace fieldinv;
using namespace fieldinv::optim;

namespace {

EvalResult quadratic_eval(const Vec& x, const Eigen::MatrixXd& Q, const Vec& c) {
  EvalResult r;
  Vec qx = Q * x;
  r.f = 0.5 * x.dot(qx) - c.dot(x);
  r.g = qx - c;
  return r;
}

EvalResult rosenbrock(const Vec& x) {
  EvalResult r;
  double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
  r.f = a * a + 100.0 * b * b;
  r.g = Vec(2);
  r.g[0] = -2.0 * a - 400.0 * x[0] * b;
  r.g[1] = 200.0 * b;
  return r;
}

}  // namespace

TEST_CASE("quadratic minimization") {
  Eigen::MatrixXd Q(3, 3);
  Q << 4, 1, 0, 1, 3, 0, 0, 0, 2;
  Vec c(3);
  c << 1, -2, 3;
  auto obj = [&](const Vec& x) { return quadratic_eval(x, Q, c); };

  OptimOptions opt;
  opt.grad_tol = 1e-9;
  opt.f_tol = 0.0;
  opt.max_iterations = 50;
  auto res = lbfgs_minimize(obj, Vec::Zero(3), opt);
  CHECK(res.trace.reason == StopReason::grad_tol);
  CHECK(res.trace.records.size() <= 11);  // well under 10 iterations
  Vec xstar = Q.partialPivLu().solve(c);
  CHECK((res.x - xstar).lpNorm<Eigen::Infinity>() < 1e-8);

  // losses in the trace never increase
  for (size_t k = 0; k + 1 < res.trace.records.size(); ++k)
    CHECK(res.trace.records[k + 1].loss <= res.trace.records[k].loss);
}

TEST_CASE("convex quadratic with full memory terminates quickly") {
  const int n = 5;
  std::mt19937 rng(21);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = nd(rng);
  Eigen::MatrixXd Q = M.transpose() * M + Eigen::MatrixXd::Identity(n, n);
  Vec c(n);
  for (int i = 0; i < n; ++i) c[i] = nd(rng);
  auto obj = [&](const Vec& x) { return quadratic_eval(x, Q, c); };

  OptimOptions opt;
  opt.memory = 10;
  opt.grad_tol = 1e-8;
  opt.f_tol = 0.0;
  opt.max_iterations = 3 * n;
  auto res = lbfgs_minimize(obj, Vec::Zero(n), opt);
  CHECK(res.trace.reason == StopReason::grad_tol);
  CHECK(static_cast<int>(res.trace.records.size()) <= 3 * n + 1);
}

TEST_CASE("rosenbrock from the standard start") {
  OptimOptions opt;
  opt.grad_tol = 1e-12;
  opt.f_tol = 0.0;
  opt.max_iterations = 100;
  Vec x0(2);
  x0 << -1.2, 1.0;
  auto res = lbfgs_minimize(rosenbrock, x0, opt);
  CHECK(res.final_loss <= 1e-10);
  CHECK((res.x - Vec::Ones(2)).lpNorm<Eigen::Infinity>() < 1e-4);
}

TEST_CASE("optimizer runs are deterministic") {
  Vec x0(2);
  x0 << -1.2, 1.0;
  OptimOptions opt;
  opt.max_iterations = 40;
  opt.f_tol = 0.0;
  auto r1 = lbfgs_minimize(rosenbrock, x0, opt);
  auto r2 = lbfgs_minimize(rosenbrock, x0, opt);
  REQUIRE(r1.trace.records.size() == r2.trace.records.size());
  for (size_t k = 0; k < r1.trace.records.size(); ++k) {
    CHECK(r1.trace.records[k].loss == r2.trace.records[k].loss);
    CHECK(r1.trace.records[k].step == r2.trace.records[k].step);
  }
  CHECK((r1.x - r2.x).norm() == 0.0);
}

TEST_CASE("objective failure during the search stops with the last good iterate") {
  // fails for x < 0; minimizer sits at -1, so the search must cross
  auto obj = [](const Vec& x) {
    EvalResult r;
    if (x[0] < 0.0) {
      r.ok = false;
      r.error = "left half-plane";
      return r;
    }
    r.f = (x[0] + 1.0) * (x[0] + 1.0);
    r.g = Vec(1);
    r.g[0] = 2.0 * (x[0] + 1.0);
    return r;
  };
  OptimOptions opt;
  opt.max_iterations = 50;
  auto res = lbfgs_minimize(obj, Vec::Constant(1, 2.0), opt);
  CHECK(res.trace.reason == StopReason::solver_failure);
  CHECK(res.trace.failure_message == "left half-plane");
  CHECK(res.x[0] >= 0.0);                 // the returned iterate is still feasible
  CHECK(res.final_loss <= 9.0);           // and no worse than the start

  // failure at the initial point throws
  CHECK_THROWS(lbfgs_minimize(obj, Vec::Constant(1, -2.0), opt));
}

TEST_CASE("bound projection") {
  Vec x(3), lo(3), hi(3);
  x << -5, 0.5, 9;
  lo << 0, 0, 0;
  hi << 1, 1, 1;
  Vec p = project_bounds(x, lo, hi);
  CHECK(p[0] == 0.0);
  CHECK(p[1] == 0.5);
  CHECK(p[2] == 1.0);
  CHECK_THROWS_AS(project_bounds(x, hi, lo), InvalidArgument);
  CHECK_THROWS_AS(project_bounds(x, Vec::Zero(2), Vec::Ones(2)), InvalidArgument);
}

TEST_CASE("bounded minimization stays feasible and finds the constrained optimum") {
  // min (x-2)^2 subject to x <= 1: solution x = 1
  auto obj = [](const Vec& x) {
    EvalResult r;
    r.f = (x[0] - 2.0) * (x[0] - 2.0);
    r.g = Vec::Constant(1, 2.0 * (x[0] - 2.0));
    return r;
  };
  OptimOptions opt;
  opt.lower = Vec::Constant(1, -1.0);
  opt.upper = Vec::Constant(1, 1.0);
  opt.grad_tol = 1e-10;
  opt.max_iterations = 50;
  auto res = lbfgs_minimize(obj, Vec::Zero(1), opt);
  CHECK_THAT(res.x[0], Catch::Matchers::WithinAbs(1.0, 1e-10));
  CHECK(res.trace.reason == StopReason::grad_tol);
}

TEST_CASE("finite-difference gradient checker") {
  Eigen::MatrixXd Q(2, 2);
  Q << 3, 1, 1, 2;
  Vec c(2);
  c << 1, 1;
  auto obj = [&](const Vec& x) { return quadratic_eval(x, Q, c); };
  Vec x(2);
  x << 0.3, -0.7;
  // exact for quadratics up to roundoff
  CHECK(fd_gradient_check(obj, x, 1e-5, 8) <= 1e-9);

  auto trig = [](const Vec& x) {
    EvalResult r;
    r.f = std::sin(x[0]) + std::cos(2 * x[1]);
    r.g = Vec(2);
    r.g[0] = std::cos(x[0]);
    r.g[1] = -2 * std::sin(2 * x[1]);
    return r;
  };
  CHECK(fd_gradient_check(trig, x, 1e-5, 8) <= 1e-8);

  // a doubled gradient is reported with relative error near 1/2
  auto corrupted = [&](const Vec& v) {
    auto r = quadratic_eval(v, Q, c);
    r.g *= 2.0;
    return r;
  };
  double err = fd_gradient_check(corrupted, x, 1e-5, 8);
  CHECK(err > 0.4);
  CHECK(err < 0.6);

  CHECK_THROWS_AS(fd_gradient_check(obj, x, 0.0, 3), InvalidArgument);
}

TEST_CASE("trace csv dump") {
  OptimTrace t;
  t.records.push_back({0, 1.5, 0.2, 0.0, 1});
  t.write_csv("trace_test.csv");
  std::FILE* f = std::fopen("trace_test.csv", "r");
  REQUIRE(f);
  char line[128];
  REQUIRE(std::fgets(line, sizeof(line), f));
  CHECK(std::string(line) == "iter,loss,grad_inf,step,fevals\n");
  std::fclose(f);
  std::remove("trace_test.csv");
}
