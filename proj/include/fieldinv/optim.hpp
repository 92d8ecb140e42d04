#pragma once

// L-BFGS with a strong-Wolfe line search, optional bound projection, and
// the finite-difference gradient checker used throughout the test suites.

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fieldinv/core.hpp"

namespace fieldinv::optim {

struct EvalResult {
  bool ok = true;
  double f = 0.0;
  Vec g;
  std::string error;  // set when !ok
};

using Objective = std::function<EvalResult(const Vec&)>;

struct OptimOptions {
  int memory = 10;
  int max_iterations = 1000;
  double grad_tol = 1e-12;   // inf-norm of the (projected) gradient
  double f_tol = 1e-12;      // relative decrease threshold
  double c1 = 1e-4;
  double c2 = 0.9;
  int line_search_max_steps = 25;
  double max_step = 0.0;  // cap on the iterate displacement norm; 0 = none
  std::optional<Vec> lower, upper;
};

enum class StopReason { grad_tol, f_tol, max_iter, solver_failure, line_search_failure };

inline const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::grad_tol: return "grad_tol";
    case StopReason::f_tol: return "f_tol";
    case StopReason::max_iter: return "max_iter";
    case StopReason::solver_failure: return "solver_failure";
    case StopReason::line_search_failure: return "line_search_failure";
  }
  return "?";
}

struct IterRecord {
  int iter;
  double loss;
  double grad_inf;
  double step;
  int fevals;
};

struct OptimTrace {
  std::vector<IterRecord> records;
  StopReason reason = StopReason::max_iter;
  std::string failure_message;

  void write_csv(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("OptimTrace: cannot open " + path);
    std::fprintf(f, "iter,loss,grad_inf,step,fevals\n");
    for (const auto& r : records)
      std::fprintf(f, "%d,%.17g,%.17g,%.17g,%d\n", r.iter, r.loss, r.grad_inf, r.step, r.fevals);
    std::fclose(f);
  }
};

struct MinimizeResult {
  Vec x;
  OptimTrace trace;
  double final_loss = 0.0;
};

inline Vec project_bounds(const Vec& x, const Vec& lower, const Vec& upper) {
  if (lower.size() != x.size() || upper.size() != x.size())
    throw InvalidArgument("project_bounds: dimension mismatch");
  for (long i = 0; i < x.size(); ++i)
    if (lower[i] > upper[i]) throw InvalidArgument("project_bounds: lower > upper");
  return x.cwiseMax(lower).cwiseMin(upper);
}

namespace detail {

struct LineSearchOut {
  bool ok = false;
  bool objective_failed = false;
  double alpha = 0.0;
  EvalResult eval;
  int fevals = 0;
};

// Strong-Wolfe bracketing + zoom (Nocedal & Wright, Algorithms 3.5/3.6).
// phi(a) = f(P(x + a d)); the directional derivative uses the unprojected
// direction, which is exact whenever no bound is active.
inline LineSearchOut wolfe_line_search(const Objective& obj, const Vec& x, const Vec& d,
                                       double f0, double dphi0, const OptimOptions& opt,
                                       const std::function<Vec(const Vec&)>& proj) {
  LineSearchOut out;
  std::string last_error;
  bool any_ok = false;
  auto eval_at = [&](double a) {
    ++out.fevals;
    EvalResult e = obj(proj(x + a * d));
    if (e.ok) any_ok = true;
    else last_error = e.error;
    return e;
  };
  // A failed evaluation means the trial point left the region where the
  // forward solver works; treat it like a step that is too long and shrink.
  // Only when no feasible step of any size exists is the failure surfaced.
  auto zoom = [&](double alo, double ahi, double flo, EvalResult elo) -> LineSearchOut {
    for (int it = 0; it < opt.line_search_max_steps; ++it) {
      double a = 0.5 * (alo + ahi);
      EvalResult e = eval_at(a);
      if (!e.ok) {
        ahi = a;
        continue;
      }
      double dphi = e.g.dot(d);
      if (e.f > f0 + opt.c1 * a * dphi0 || e.f >= flo) {
        ahi = a;
      } else {
        if (std::fabs(dphi) <= -opt.c2 * dphi0) {
          out.ok = true;
          out.alpha = a;
          out.eval = e;
          return out;
        }
        if (dphi * (ahi - alo) >= 0) ahi = alo;
        alo = a;
        flo = e.f;
        elo = e;
      }
    }
    // budget spent: accept the best sufficient-decrease point if one exists
    if (alo > 0.0 && elo.g.size() > 0 && flo < f0) {
      out.ok = true;
      out.alpha = alo;
      out.eval = elo;
    }
    return out;
  };

  double amax = std::numeric_limits<double>::infinity();
  if (opt.max_step > 0.0) {
    double dn = d.norm();
    if (dn > 0.0) amax = opt.max_step / dn;
  }
  double aprev = 0.0, fprev = f0;
  EvalResult eprev;
  double a = std::min(1.0, amax);
  for (int it = 0; it < opt.line_search_max_steps; ++it) {
    EvalResult e = eval_at(a);
    if (!e.ok) {
      if (aprev > 0.0) return zoom(aprev, a, fprev, eprev);
      a *= 0.5;  // no good point below a yet: backtrack
      continue;
    }
    double dphi = e.g.dot(d);
    if (e.f > f0 + opt.c1 * a * dphi0 || (it > 0 && e.f >= fprev)) {
      return zoom(aprev, a, fprev, eprev);
    }
    if (std::fabs(dphi) <= -opt.c2 * dphi0) {
      out.ok = true;
      out.alpha = a;
      out.eval = e;
      return out;
    }
    if (dphi >= 0) {
      return zoom(a, aprev, e.f, e);
    }
    if (a >= amax) {  // step cap reached with sufficient decrease: take it
      out.ok = true;
      out.alpha = a;
      out.eval = e;
      return out;
    }
    aprev = a;
    fprev = e.f;
    eprev = e;
    a = std::min(2.0 * a, amax);
  }
  if (aprev > 0.0 && eprev.g.size() > 0 && fprev < f0) {
    out.ok = true;
    out.alpha = aprev;
    out.eval = eprev;
    return out;
  }
  if (!any_ok && !last_error.empty()) {
    out.objective_failed = true;
    out.eval.error = last_error;
  }
  return out;
}

}  // namespace detail

inline MinimizeResult lbfgs_minimize(const Objective& obj, const Vec& x0,
                                     const OptimOptions& opt) {
  const bool bounded = opt.lower.has_value() && opt.upper.has_value();
  auto proj = [&](const Vec& v) {
    return bounded ? project_bounds(v, *opt.lower, *opt.upper) : v;
  };
  // projected-gradient norm used in the bounded termination test
  auto pg_inf = [&](const Vec& x, const Vec& g) {
    if (!bounded) return g.lpNorm<Eigen::Infinity>();
    return (x - proj(x - g)).lpNorm<Eigen::Infinity>();
  };

  MinimizeResult res;
  Vec x = proj(x0);
  EvalResult cur = obj(x);
  if (!cur.ok)
    throw std::runtime_error("lbfgs_minimize: objective failed at x0: " + cur.error);

  std::vector<Vec> s_hist, y_hist;
  std::vector<double> rho_hist;

  res.trace.records.push_back({0, cur.f, pg_inf(x, cur.g), 0.0, 1});
  StopReason reason = StopReason::max_iter;

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    if (pg_inf(x, cur.g) <= opt.grad_tol) {
      reason = StopReason::grad_tol;
      break;
    }
    // two-loop recursion
    Vec q = cur.g;
    const int m = static_cast<int>(s_hist.size());
    std::vector<double> alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (m > 0) {
      double gamma = s_hist[m - 1].dot(y_hist[m - 1]) / y_hist[m - 1].squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < m; ++i) {
      double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vec d = -q;
    double dphi0 = cur.g.dot(d);
    if (!(dphi0 < 0)) {
      d = -cur.g;
      dphi0 = cur.g.dot(d);
      if (!(dphi0 < 0)) {
        reason = StopReason::grad_tol;
        break;
      }
    }

    auto ls = detail::wolfe_line_search(obj, x, d, cur.f, dphi0, opt, proj);
    if (ls.objective_failed) {
      reason = StopReason::solver_failure;
      res.trace.failure_message = ls.eval.error;
      break;
    }
    if (!ls.ok) {
      reason = StopReason::line_search_failure;
      break;
    }
    Vec xnew = proj(x + ls.alpha * d);
    double fprev = cur.f;
    Vec gprev = cur.g;
    Vec snew = xnew - x;
    Vec ynew = ls.eval.g - gprev;
    x = xnew;
    cur = ls.eval;

    if (snew.dot(ynew) > 1e-10 * snew.norm() * ynew.norm()) {
      s_hist.push_back(snew);
      y_hist.push_back(ynew);
      rho_hist.push_back(1.0 / snew.dot(ynew));
      if (static_cast<int>(s_hist.size()) > opt.memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }

    res.trace.records.push_back(
        {iter + 1, cur.f, pg_inf(x, cur.g), ls.alpha, ls.fevals});
    if (std::fabs(fprev - cur.f) <= opt.f_tol * (1.0 + std::fabs(cur.f))) {
      reason = StopReason::f_tol;
      break;
    }
  }
  res.trace.reason = reason;
  res.x = x;
  res.final_loss = cur.f;
  return res;
}

// Central-difference directional derivatives against grad . d over seeded
// random unit directions; returns the max relative error.
inline double fd_gradient_check(const Objective& obj, const Vec& x, double step,
                                int directions, unsigned seed = 7) {
  if (step <= 0) throw InvalidArgument("fd_gradient_check: step must be positive");
  EvalResult at_x = obj(x);
  if (!at_x.ok) throw std::runtime_error("fd_gradient_check: objective failed at x");
  std::mt19937 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  double max_err = 0.0;
  for (int k = 0; k < directions; ++k) {
    Vec d(x.size());
    for (long i = 0; i < d.size(); ++i) d[i] = nd(rng);
    d /= d.norm();
    EvalResult p = obj(x + step * d);
    EvalResult m = obj(x - step * d);
    if (!p.ok || !m.ok)
      throw std::runtime_error("fd_gradient_check: objective failed at perturbed point (direction " +
                               std::to_string(k) + ")");
    double fd = (p.f - m.f) / (2.0 * step);
    double an = at_x.g.dot(d);
    double err = std::fabs(fd - an) / (std::fabs(an) + 1e-12);
    if (err > max_err) max_err = err;
  }
  return max_err;
}

}  // namespace fieldinv::optim
