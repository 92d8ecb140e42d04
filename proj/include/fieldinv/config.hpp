#pragma once

// Flat key=value experiment configuration ([section] headers are allowed
// and ignored for key lookup). Unknown keys are hard errors.

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "fieldinv/core.hpp"

namespace fieldinv::config {

enum class ProblemKind { linear_elasticity, stokes, hyperelasticity, burgers };
enum class Parameterization { mlp, quad_points, per_element };

inline const char* problem_name(ProblemKind k) {
  switch (k) {
    case ProblemKind::linear_elasticity: return "linear_elasticity";
    case ProblemKind::stokes: return "stokes";
    case ProblemKind::hyperelasticity: return "hyperelasticity";
    case ProblemKind::burgers: return "burgers";
  }
  return "?";
}

inline const char* parameterization_name(Parameterization p) {
  switch (p) {
    case Parameterization::mlp: return "mlp";
    case Parameterization::quad_points: return "quad_points";
    case Parameterization::per_element: return "per_element";
  }
  return "?";
}

struct ExperimentConfig {
  ProblemKind problem = ProblemKind::linear_elasticity;
  int mesh_n = 10;
  Parameterization parameterization = Parameterization::mlp;
  bool transform_abs = true;  // |theta| positivity transform for discretizations
  std::optional<double> bounds_lower, bounds_upper;
  unsigned seed = 1;
  std::string output_dir = "out";
  bool init_near_truth = false;
  bool verbose = false;

  // optimizer; max_iterations < 0 means "problem default"
  int max_iterations = -1;
  double grad_tol = 1e-12;
  double f_tol = 1e-12;
  int memory = 10;
  double c1 = 1e-4;
  double c2 = 0.9;
  double max_step = 0.0;  // iterate displacement cap; 0 = uncapped

  double output_shift = -1.0;        // MLP positive output shift; < 0 means default
  double init_constant = -1.0;       // discretization start; < 0 means default
  double truth_scale = -1.0;         // ground-truth scaling; < 0 means default
  std::string elasticity_formula = "nu_weighted";  // or "standard"
  int burgers_steps = 10;
  double burgers_dt = 0.05;
  double newton_tol = 1e-8;
  int newton_max_iter = 50;

  int resolved_max_iterations() const {
    if (max_iterations >= 0) return max_iterations;
    switch (problem) {
      case ProblemKind::linear_elasticity: return 10000;
      case ProblemKind::stokes: return 600;
      case ProblemKind::hyperelasticity: return 600;
      case ProblemKind::burgers: return 300;
    }
    return 1000;
  }

  double resolved_truth_scale() const {
    if (truth_scale > 0) return truth_scale;
    return (problem == ProblemKind::stokes || problem == ProblemKind::burgers) ? 0.1 : 1.0;
  }

  double resolved_init_constant() const {
    if (init_constant > 0) return init_constant;
    return (problem == ProblemKind::stokes || problem == ProblemKind::burgers) ? 0.1 : 1.0;
  }

  // the small positive shift added to the network output starts the field
  // at the bulk (domain-average) magnitude of the coefficient
  double resolved_output_shift() const {
    if (output_shift > 0) return output_shift;
    return 1.5 * resolved_truth_scale();
  }

  // Pressure-only Stokes observations and pure-Dirichlet hyperelastic
  // displacements are exactly invariant under a global scaling of the
  // coefficient, so the data cannot correct the field's scale. For those
  // problems the network field keeps its mean pinned at the initial shift
  // instead of letting the optimizer wander along the flat direction.
  bool scale_gauge_fixed() const {
    return problem == ProblemKind::stokes || problem == ProblemKind::hyperelasticity;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline ExperimentConfig parse_config_text(std::istream& in) {
  ExperimentConfig c;
  const std::set<std::string> known = {
      "problem", "mesh_n", "parameterization", "transform", "bounds_lower", "bounds_upper",
      "seed", "output_dir", "init_near_truth", "verbose", "max_iterations", "grad_tol",
      "f_tol", "memory", "c1", "c2", "max_step", "output_shift", "init_constant", "truth_scale",
      "elasticity_formula", "burgers_steps", "burgers_dt", "newton_tol", "newton_max_iter"};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#' || s[0] == '[') continue;
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(s.substr(0, eq));
    std::string val = detail::trim(s.substr(eq + 1));
    if (!known.count(key))
      throw InvalidArgument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    auto as_bool = [&] {
      if (val == "true" || val == "1") return true;
      if (val == "false" || val == "0") return false;
      throw InvalidArgument("config: bad boolean for " + key + ": " + val);
    };
    if (key == "problem") {
      if (val == "linear_elasticity") c.problem = ProblemKind::linear_elasticity;
      else if (val == "stokes") c.problem = ProblemKind::stokes;
      else if (val == "hyperelasticity") c.problem = ProblemKind::hyperelasticity;
      else if (val == "burgers") c.problem = ProblemKind::burgers;
      else throw InvalidArgument("config: unknown problem '" + val + "'");
    } else if (key == "parameterization") {
      if (val == "mlp") c.parameterization = Parameterization::mlp;
      else if (val == "quad_points") c.parameterization = Parameterization::quad_points;
      else if (val == "per_element") c.parameterization = Parameterization::per_element;
      else throw InvalidArgument("config: unknown parameterization '" + val + "'");
    } else if (key == "transform") {
      if (val == "abs") c.transform_abs = true;
      else if (val == "none") c.transform_abs = false;
      else throw InvalidArgument("config: unknown transform '" + val + "'");
    } else if (key == "elasticity_formula") {
      if (val != "nu_weighted" && val != "standard")
        throw InvalidArgument("config: unknown elasticity_formula '" + val + "'");
      c.elasticity_formula = val;
    } else if (key == "mesh_n") c.mesh_n = std::stoi(val);
    else if (key == "bounds_lower") c.bounds_lower = std::stod(val);
    else if (key == "bounds_upper") c.bounds_upper = std::stod(val);
    else if (key == "seed") c.seed = static_cast<unsigned>(std::stoul(val));
    else if (key == "output_dir") c.output_dir = val;
    else if (key == "init_near_truth") c.init_near_truth = as_bool();
    else if (key == "verbose") c.verbose = as_bool();
    else if (key == "max_iterations") c.max_iterations = std::stoi(val);
    else if (key == "grad_tol") c.grad_tol = std::stod(val);
    else if (key == "f_tol") c.f_tol = std::stod(val);
    else if (key == "memory") c.memory = std::stoi(val);
    else if (key == "c1") c.c1 = std::stod(val);
    else if (key == "c2") c.c2 = std::stod(val);
    else if (key == "max_step") c.max_step = std::stod(val);
    else if (key == "output_shift") c.output_shift = std::stod(val);
    else if (key == "init_constant") c.init_constant = std::stod(val);
    else if (key == "truth_scale") c.truth_scale = std::stod(val);
    else if (key == "burgers_steps") c.burgers_steps = std::stoi(val);
    else if (key == "burgers_dt") c.burgers_dt = std::stod(val);
    else if (key == "newton_tol") c.newton_tol = std::stod(val);
    else if (key == "newton_max_iter") c.newton_max_iter = std::stoi(val);
  }
  if (c.mesh_n < 2) throw InvalidArgument("config: mesh_n must be >= 2");
  if ((c.bounds_lower.has_value()) != (c.bounds_upper.has_value()))
    throw InvalidArgument("config: bounds_lower and bounds_upper must be set together");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("config: cannot open " + path);
  return parse_config_text(in);
}

}  // namespace fieldinv::config
