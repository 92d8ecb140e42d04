#pragma once

// Experiment runner: binds a benchmark problem to a field parameterization,
// synthesizes observations from the ground truth, runs L-BFGS, and emits
// trace/field/metadata files for plotting.

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>

#include <json.hpp>

#include "fieldinv/config.hpp"
#include "fieldinv/core.hpp"
#include "fieldinv/nn.hpp"
#include "fieldinv/optim.hpp"
#include "fieldinv/problems.hpp"

namespace fieldinv::experiment {

using config::ExperimentConfig;
using config::Parameterization;
using config::ProblemKind;
using problems::LossGrad;
using problems::Observation;

// Type-erased view over one benchmark problem.
struct ProblemHandle {
  std::function<Vec()> truth_nu;
  std::function<Observation(const Vec&)> synthesize;
  std::function<LossGrad(const Vec&, const Observation&)> loss_and_grad;
  std::shared_ptr<const fem::ShapeTable> table;
  int mesh_n = 0;
  int n_elems = 0, n_qp = 0;
  std::function<double(double, double)> truth_fn;
  std::shared_ptr<void> keep_alive;
};

inline ProblemHandle make_problem(const ExperimentConfig& cfg) {
  ProblemHandle h;
  h.mesh_n = cfg.mesh_n;
  const double scale = cfg.resolved_truth_scale();
  h.truth_fn = [scale](double x, double y) { return scale * problems::ground_truth_base(x, y); };
  switch (cfg.problem) {
    case ProblemKind::linear_elasticity: {
      auto p = std::make_shared<problems::ElasticityProblem>(
          cfg.mesh_n, cfg.elasticity_formula == "standard" ? fem::ElasticityFormula::standard
                                                           : fem::ElasticityFormula::nu_weighted);
      h.table = p->table();
      h.truth_nu = [p, scale] { return Vec(scale * p->truth_nu()); };
      h.synthesize = [p](const Vec& nu) { return p->synthesize_observations(nu); };
      h.loss_and_grad = [p](const Vec& nu, const Observation& o) { return p->loss_and_grad(nu, o); };
      h.keep_alive = p;
      break;
    }
    case ProblemKind::stokes: {
      auto p = std::make_shared<problems::StokesProblem>(cfg.mesh_n);
      h.table = p->table();
      h.truth_nu = [p, scale] {
        // StokesProblem::truth_nu already applies the 0.1 default scale
        Vec base = p->truth_nu() / 0.1;
        return Vec(scale * base);
      };
      h.synthesize = [p](const Vec& nu) { return p->synthesize_observations(nu); };
      h.loss_and_grad = [p](const Vec& nu, const Observation& o) { return p->loss_and_grad(nu, o); };
      h.keep_alive = p;
      break;
    }
    case ProblemKind::hyperelasticity: {
      auto p = std::make_shared<problems::HyperelasticityProblem>(cfg.mesh_n);
      h.table = p->table();
      h.truth_nu = [p, scale] { return Vec(scale * p->truth_nu()); };
      h.synthesize = [p](const Vec& nu) { return p->synthesize_observations(nu); };
      h.loss_and_grad = [p](const Vec& nu, const Observation& o) { return p->loss_and_grad(nu, o); };
      h.keep_alive = p;
      break;
    }
    case ProblemKind::burgers: {
      auto p = std::make_shared<problems::BurgersProblem>(cfg.mesh_n, cfg.burgers_steps,
                                                          cfg.burgers_dt);
      h.table = p->table();
      h.truth_nu = [p, scale] {
        Vec base = p->truth_nu() / 0.1;
        return Vec(scale * base);
      };
      h.synthesize = [p](const Vec& nu) { return p->synthesize_observations(nu); };
      h.loss_and_grad = [p](const Vec& nu, const Observation& o) { return p->loss_and_grad(nu, o); };
      h.keep_alive = p;
      break;
    }
  }
  h.n_elems = h.table->n_elems;
  h.n_qp = h.table->n_qp;
  return h;
}

// Maps optimizer variables to field values at quadrature points and back.
struct FieldParam {
  Vec theta0;
  std::function<Vec(const Vec&)> to_quad;
  std::function<Vec(const Vec&, const Vec&)> vjp;  // (theta, nubar) -> thetabar
  std::function<double(const Vec&, double, double)> eval_point;
};

inline int locate_element(int mesh_n, double x, double y) {
  auto clamp01 = [](double v) { return v < 0 ? 0.0 : (v > 1 ? 1.0 : v); };
  x = clamp01(x);
  y = clamp01(y);
  int ix = std::min(static_cast<int>(x * mesh_n), mesh_n - 1);
  int iy = std::min(static_cast<int>(y * mesh_n), mesh_n - 1);
  double xl = x * mesh_n - ix, yl = y * mesh_n - iy;
  return 2 * (iy * mesh_n + ix) + (yl > xl ? 1 : 0);
}

inline FieldParam make_parameterization(const ExperimentConfig& cfg, const ProblemHandle& h,
                                        const Vec& truth_at_quad) {
  FieldParam fp;
  if (cfg.parameterization == Parameterization::mlp) {
    auto field0 = std::make_shared<nn::MlpField>(nn::init_mlp(cfg.seed, cfg.resolved_output_shift()));
    auto coords = std::make_shared<std::vector<Vec2>>(h.table->qpoints);
    const bool gauge = cfg.scale_gauge_fixed();
    const double shift = cfg.resolved_output_shift();
    // mean of the raw network field over the quadrature points; the gauge
    // factor shift/mean pins the field's mean at the initial shift
    auto mean_of = [](const Vec& raw) { return raw.mean(); };
    fp.theta0 = field0->theta;
    fp.to_quad = [field0, coords, gauge, shift, mean_of](const Vec& th) {
      nn::MlpField f = *field0;
      f.theta = th;
      Vec raw = nn::mlp_forward(f, *coords);
      if (!gauge) return raw;
      double m = mean_of(raw);
      if (!(m > 1e-8)) return raw;  // degenerate field: let the solver object
      return Vec(raw * (shift / m));
    };
    fp.vjp = [field0, coords, gauge, shift, mean_of](const Vec& th, const Vec& nubar) {
      nn::MlpField f = *field0;
      f.theta = th;
      Vec rbar = nubar;
      if (gauge) {
        Vec raw = nn::mlp_forward(f, *coords);
        double m = mean_of(raw);
        if (m > 1e-8) {
          // field = raw * shift/mean(raw); quotient rule
          double dot = nubar.dot(raw);
          rbar = (shift / m) * nubar -
                 (shift / (m * m * raw.size())) * dot * Vec::Ones(raw.size());
        }
      }
      return nn::mlp_vjp(f, *coords, rbar);
    };
    fp.eval_point = [field0, coords, gauge, shift, mean_of](const Vec& th, double x, double y) {
      nn::MlpField f = *field0;
      f.theta = th;
      double v = nn::mlp_forward(f, {Vec2(x, y)})[0];
      if (!gauge) return v;
      double m = mean_of(nn::mlp_forward(f, *coords));
      if (!(m > 1e-8)) return v;
      return v * (shift / m);
    };
  } else {
    const bool per_elem = cfg.parameterization == Parameterization::per_element;
    auto gran = per_elem ? nn::Granularity::per_element : nn::Granularity::per_quad_point;
    auto tf = cfg.transform_abs ? nn::Transform::abs : nn::Transform::none;
    const int n_elems = h.n_elems, n_qp = h.n_qp, mesh_n = h.mesh_n;
    const long nvars = per_elem ? n_elems : static_cast<long>(n_elems) * n_qp;
    if (cfg.init_near_truth) {
      // the "impractical" start: truth values with a small seeded perturbation
      Vec base = per_elem ? Vec(truth_at_quad.size() / n_qp) : truth_at_quad;
      if (per_elem)
        for (int e = 0; e < n_elems; ++e) base[e] = truth_at_quad.segment(e * n_qp, n_qp).mean();
      std::mt19937 rng(cfg.seed + 1000);
      std::uniform_real_distribution<double> d(-0.05, 0.05);
      fp.theta0 = base;
      for (long i = 0; i < fp.theta0.size(); ++i) fp.theta0[i] *= 1.0 + d(rng);
    } else {
      fp.theta0 = Vec::Constant(nvars, cfg.resolved_init_constant());
    }
    auto qpoints = std::make_shared<std::vector<Vec2>>(h.table->qpoints);
    fp.to_quad = [gran, tf, n_elems, n_qp](const Vec& th) {
      nn::DiscretizedField f{gran, tf, th};
      return nn::discretized_eval(f, n_elems, n_qp).values_at_quad;
    };
    fp.vjp = [gran, tf, n_elems, n_qp](const Vec& th, const Vec& nubar) {
      nn::DiscretizedField f{gran, tf, th};
      return nn::discretized_eval(f, n_elems, n_qp).vjp(nubar);
    };
    fp.eval_point = [gran, tf, n_elems, n_qp, mesh_n, qpoints](const Vec& th, double x, double y) {
      int e = locate_element(mesh_n, x, y);
      auto apply = [tf](double v) { return tf == nn::Transform::abs ? std::fabs(v) : v; };
      if (gran == nn::Granularity::per_element) return apply(th[e]);
      // nearest quadrature point within the containing element
      int best = e * n_qp;
      double bd = std::numeric_limits<double>::max();
      for (int q = 0; q < n_qp; ++q) {
        double d = ((*qpoints)[e * n_qp + q] - Vec2(x, y)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = e * n_qp + q;
        }
      }
      return apply(th[best]);
    };
  }
  return fp;
}

inline optim::Objective make_objective(const ProblemHandle& h, const FieldParam& fp,
                                       std::shared_ptr<const Observation> obs) {
  return [&h, &fp, obs](const Vec& theta) {
    optim::EvalResult r;
    Vec nu = fp.to_quad(theta);
    LossGrad lg = h.loss_and_grad(nu, *obs);
    if (!lg.ok) {
      r.ok = false;
      r.error = lg.error;
      return r;
    }
    r.f = lg.loss;
    r.g = fp.vjp(theta, lg.grad_nu);
    return r;
  };
}

struct FieldErrors {
  double rel_l2 = 0.0;
  double max_abs = 0.0;
};

// 50x50 uniform sampling grid (cell centers), mesh independent.
inline FieldErrors field_errors(const FieldParam& fp, const Vec& theta,
                                const std::function<double(double, double)>& truth,
                                const std::string& csv_path = "") {
  const int g = 50;
  double num = 0.0, den = 0.0, maxabs = 0.0;
  std::FILE* f = nullptr;
  if (!csv_path.empty()) {
    f = std::fopen(csv_path.c_str(), "w");
    if (!f) throw std::runtime_error("field_errors: cannot open " + csv_path);
    std::fprintf(f, "x,y,nu_hat,nu_star\n");
  }
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      double x = (i + 0.5) / g, y = (j + 0.5) / g;
      double hat = fp.eval_point(theta, x, y);
      double star = truth(x, y);
      num += (hat - star) * (hat - star);
      den += star * star;
      maxabs = std::max(maxabs, std::fabs(hat - star));
      if (f) std::fprintf(f, "%.6f,%.6f,%.17g,%.17g\n", x, y, hat, star);
    }
  }
  if (f) std::fclose(f);
  return {std::sqrt(num / den), maxabs};
}

struct ExperimentResult {
  double final_loss = 0.0;
  double rel_l2_error = 0.0;
  double max_abs_error = 0.0;
  int iterations = 0;
  optim::StopReason reason = optim::StopReason::max_iter;
  double wall_seconds = 0.0;
  Vec theta;
  optim::OptimTrace trace;
};

inline nlohmann::json config_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["problem"] = config::problem_name(cfg.problem);
  j["mesh_n"] = cfg.mesh_n;
  j["parameterization"] = config::parameterization_name(cfg.parameterization);
  j["transform"] = cfg.transform_abs ? "abs" : "none";
  j["seed"] = cfg.seed;
  j["init_near_truth"] = cfg.init_near_truth;
  j["max_iterations"] = cfg.resolved_max_iterations();
  j["grad_tol"] = cfg.grad_tol;
  j["f_tol"] = cfg.f_tol;
  j["memory"] = cfg.memory;
  j["c1"] = cfg.c1;
  j["c2"] = cfg.c2;
  j["max_step"] = cfg.max_step;
  j["output_shift"] = cfg.resolved_output_shift();
  j["init_constant"] = cfg.resolved_init_constant();
  j["truth_scale"] = cfg.resolved_truth_scale();
  j["elasticity_formula"] = cfg.elasticity_formula;
  j["burgers_steps"] = cfg.burgers_steps;
  j["burgers_dt"] = cfg.burgers_dt;
  j["newton_tol"] = cfg.newton_tol;
  j["newton_max_iter"] = cfg.newton_max_iter;
  j["ground_truth"] = "scale * (1 + exp(-5*((x-0.5)^2 + (y-0.5)^2)))";
  j["loss"] = "sum of squared dof differences";
  j["field_error_grid"] = 50;
  if (cfg.bounds_lower) {
    j["bounds_lower"] = *cfg.bounds_lower;
    j["bounds_upper"] = *cfg.bounds_upper;
  }
  return j;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs = true) {
  auto t0 = std::chrono::steady_clock::now();
  ProblemHandle h = make_problem(cfg);
  Vec truth = h.truth_nu();
  auto obs = std::make_shared<Observation>(h.synthesize(truth));
  FieldParam fp = make_parameterization(cfg, h, truth);
  auto obj = make_objective(h, fp, obs);

  optim::OptimOptions opts;
  opts.memory = cfg.memory;
  opts.max_iterations = cfg.resolved_max_iterations();
  opts.grad_tol = cfg.grad_tol;
  opts.f_tol = cfg.f_tol;
  opts.c1 = cfg.c1;
  opts.c2 = cfg.c2;
  opts.max_step = cfg.max_step;
  if (cfg.bounds_lower) {
    opts.lower = Vec::Constant(fp.theta0.size(), *cfg.bounds_lower);
    opts.upper = Vec::Constant(fp.theta0.size(), *cfg.bounds_upper);
  }

  auto min_res = optim::lbfgs_minimize(obj, fp.theta0, opts);

  ExperimentResult res;
  res.theta = min_res.x;
  res.trace = min_res.trace;
  res.final_loss = min_res.final_loss;
  res.iterations = min_res.trace.records.empty() ? 0 : min_res.trace.records.back().iter;
  res.reason = min_res.trace.reason;

  std::string field_csv;
  if (write_outputs) {
    std::filesystem::create_directories(cfg.output_dir);
    field_csv = cfg.output_dir + "/field.csv";
  }
  FieldErrors fe = field_errors(fp, res.theta, h.truth_fn, field_csv);
  res.rel_l2_error = fe.rel_l2;
  res.max_abs_error = fe.max_abs;
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (write_outputs) {
    res.trace.write_csv(cfg.output_dir + "/trace.csv");
    obs->write_csv(cfg.output_dir + "/observations.csv");
    nlohmann::json j;
    j["config"] = config_json(cfg);
    j["final_loss"] = res.final_loss;
    j["rel_l2_error"] = res.rel_l2_error;
    j["max_abs_error"] = res.max_abs_error;
    j["iterations"] = res.iterations;
    j["termination"] = optim::stop_reason_name(res.reason);
    j["failure_message"] = res.trace.failure_message;
    j["wall_seconds"] = res.wall_seconds;
    std::ofstream out(cfg.output_dir + "/result.json");
    out << j.dump(2) << "\n";
  }
  return res;
}

struct GradcheckReport {
  double max_rel_error = 0.0;
  bool pass = false;
};

inline GradcheckReport run_gradcheck(const ExperimentConfig& cfg, bool corrupt = false,
                                     int directions = 10, double step = 1e-5) {
  ProblemHandle h = make_problem(cfg);
  Vec truth = h.truth_nu();
  auto obs = std::make_shared<Observation>(h.synthesize(truth));
  FieldParam fp = make_parameterization(cfg, h, truth);
  auto obj = make_objective(h, fp, obs);
  optim::Objective checked = obj;
  if (corrupt) {
    checked = [obj](const Vec& x) {
      auto r = obj(x);
      if (r.ok) r.g *= 2.0;  // detector sanity: a deliberately wrong gradient
      return r;
    };
  }
  // check at a point away from the (possibly exact) start
  Vec x = fp.theta0;
  std::mt19937 rng(cfg.seed + 99);
  std::uniform_real_distribution<double> d(-0.01, 0.01);
  for (long i = 0; i < x.size(); ++i) x[i] += d(rng) * (1.0 + std::fabs(x[i]));
  GradcheckReport rep;
  rep.max_rel_error = optim::fd_gradient_check(checked, x, step, directions, cfg.seed);
  rep.pass = rep.max_rel_error <= 1e-4;
  return rep;
}

}  // namespace fieldinv::experiment
