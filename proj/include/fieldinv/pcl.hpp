#pragma once

// Physics-constrained learning: Newton-Raphson solution of nonlinear
// residuals F(u, theta) = 0, the implicit-function-theorem adjoint at the
// converged state, and implicit time marching with a reverse sweep.

#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fieldinv/core.hpp"
#include "fieldinv/la.hpp"

namespace fieldinv::pcl {

struct NonlinearProblem {
  // F(u, nu)
  std::function<Vec(const Vec&, const Vec&)> residual;
  // dF/du at (u, nu)
  std::function<la::SparseMatrix(const Vec&, const Vec&)> jacobian;
  // lambda^T dF/dnu at (u, nu)
  std::function<Vec(const Vec&, const Vec&, const Vec&)> param_vjp;
};

struct NewtonReport {
  int iterations = 0;
  double final_residual = 0.0;
  bool converged = false;
  std::vector<double> history;  // residual inf-norm per iteration, starting at u0
};

class SolverDivergedError : public std::runtime_error {
 public:
  SolverDivergedError(const std::string& msg, NewtonReport report, int step = -1)
      : std::runtime_error(msg), report(std::move(report)), step(step) {}
  NewtonReport report;
  int step;  // failing time step, or -1 for static solves
};

struct NewtonResult {
  Vec u;
  NewtonReport report;
  std::shared_ptr<la::SparseMatrix> jac;  // Jacobian at the converged state
  std::shared_ptr<la::Factorization> fact;
};

inline NewtonResult newton_solve(const NonlinearProblem& p, const Vec& u0, const Vec& nu,
                                 double tol = 1e-8, int max_iter = 50,
                                 std::FILE* log = nullptr, int log_step = 0) {
  NewtonResult r;
  r.u = u0;
  Vec f = p.residual(r.u, nu);
  double rn = f.lpNorm<Eigen::Infinity>();
  r.report.history.push_back(rn);
  if (log) std::fprintf(log, "%d,0,%.17g\n", log_step, rn);
  for (int it = 0; it < max_iter; ++it) {
    if (rn <= tol) {
      r.report.converged = true;
      break;
    }
    auto jac = std::make_shared<la::SparseMatrix>(p.jacobian(r.u, nu));
    auto fact = std::make_shared<la::Factorization>(*jac);
    r.u -= fact->solve(f);
    r.jac = jac;
    r.fact = fact;
    f = p.residual(r.u, nu);
    rn = f.lpNorm<Eigen::Infinity>();
    r.report.history.push_back(rn);
    ++r.report.iterations;
    if (log) std::fprintf(log, "%d,%d,%.17g\n", log_step, it + 1, rn);
  }
  r.report.final_residual = rn;
  if (rn <= tol) r.report.converged = true;
  if (!r.report.converged)
    throw SolverDivergedError("newton_solve: no convergence after " +
                                  std::to_string(max_iter) + " iterations (residual " +
                                  std::to_string(rn) + ")",
                              r.report);
  // The adjoint needs dF/du at the converged state itself, not at the
  // last pre-update iterate.
  r.jac = std::make_shared<la::SparseMatrix>(p.jacobian(r.u, nu));
  r.fact = std::make_shared<la::Factorization>(*r.jac);
  return r;
}

// Gradient of J(u(nu)) at the converged state: solve (dF/du)^T lambda = dJ/du,
// return -lambda^T dF/dnu.
inline Vec pcl_adjoint(const NewtonResult& sol, const Vec& djdu, const NonlinearProblem& p,
                       const Vec& nu) {
  Vec lambda = sol.fact->solve_transpose(djdu);
  return -p.param_vjp(sol.u, nu, lambda);
}

// One implicit time step: F(u_t, u_{t-1}, nu) = 0.
struct TimeStepFamily {
  std::function<Vec(const Vec&, const Vec&, const Vec&)> residual;       // (u, uprev, nu)
  std::function<la::SparseMatrix(const Vec&, const Vec&, const Vec&)> jacobian;
  // lambda^T dF/dnu
  std::function<Vec(const Vec&, const Vec&, const Vec&, const Vec&)> param_vjp;
  // lambda^T dF/duprev
  std::function<Vec(const Vec&, const Vec&, const Vec&, const Vec&)> prev_vjp;
};

struct Trajectory {
  Vec u_init;
  std::vector<Vec> states;  // u_1 .. u_T
  std::vector<std::shared_ptr<la::SparseMatrix>> jacobians;
  std::vector<std::shared_ptr<la::Factorization>> factorizations;
  std::vector<NewtonReport> reports;
};

inline Trajectory time_march(const TimeStepFamily& fam, const Vec& u_init, const Vec& nu,
                             int steps, double tol = 1e-8, int max_iter = 50,
                             std::FILE* log = nullptr) {
  Trajectory traj;
  traj.u_init = u_init;
  Vec uprev = u_init;
  for (int t = 0; t < steps; ++t) {
    NonlinearProblem step;
    step.residual = [&](const Vec& u, const Vec& p) { return fam.residual(u, uprev, p); };
    step.jacobian = [&](const Vec& u, const Vec& p) { return fam.jacobian(u, uprev, p); };
    step.param_vjp = [&](const Vec& u, const Vec& p, const Vec& l) {
      return fam.param_vjp(u, uprev, p, l);
    };
    NewtonResult r;
    try {
      // warm start from the previous state
      r = newton_solve(step, uprev, nu, tol, max_iter, log, t + 1);
    } catch (SolverDivergedError& e) {
      throw SolverDivergedError("time_march: step " + std::to_string(t + 1) + " diverged",
                                e.report, t + 1);
    }
    traj.states.push_back(r.u);
    traj.jacobians.push_back(r.jac);
    traj.factorizations.push_back(r.fact);
    traj.reports.push_back(r.report);
    uprev = r.u;
  }
  return traj;
}

// Reverse recursion over the stored trajectory:
//   (dF_t/du_t)^T lambda_t = dJ/du_t - (dF_{t+1}/du_t)^T lambda_{t+1}
//   grad += -(dF_t/dnu)^T lambda_t
// The minus on the carried term comes from the sign convention that makes
// the gradient accumulation subtractive.
inline Vec time_march_adjoint(const Trajectory& traj, const std::vector<Vec>& djdu,
                              const TimeStepFamily& fam, const Vec& nu) {
  const int T = static_cast<int>(traj.states.size());
  if (static_cast<int>(djdu.size()) != T)
    throw InvalidArgument("time_march_adjoint: trajectory length mismatch");
  Vec grad = Vec::Zero(nu.size());
  Vec carried;  // (dF_{t+1}/du_t)^T lambda_{t+1}
  for (int t = T - 1; t >= 0; --t) {
    Vec rhs = djdu[t];
    if (carried.size()) rhs -= carried;
    Vec lambda = traj.factorizations[t]->solve_transpose(rhs);
    const Vec& uprev = t == 0 ? traj.u_init : traj.states[t - 1];
    grad -= fam.param_vjp(traj.states[t], uprev, nu, lambda);
    if (t > 0) carried = fam.prev_vjp(traj.states[t], uprev, nu, lambda);
  }
  return grad;
}

}  // namespace fieldinv::pcl
