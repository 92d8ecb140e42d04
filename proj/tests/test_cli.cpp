#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fieldinv/config.hpp"
#include "fieldinv/experiment.hpp"

using namespace fieldinv;
using namespace fieldinv::config;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config_text(in);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("config defaults") {
  auto c = parse("");
  CHECK(c.problem == ProblemKind::linear_elasticity);
  CHECK(c.mesh_n == 10);
  CHECK(c.parameterization == Parameterization::mlp);
  CHECK(c.transform_abs);
  CHECK(c.seed == 1);
  CHECK_FALSE(c.bounds_lower.has_value());
  CHECK(c.resolved_max_iterations() == 10000);
  CHECK(c.resolved_truth_scale() == 1.0);
  CHECK(c.resolved_init_constant() == 1.0);
}

TEST_CASE("config parsing") {
  auto c = parse(
      "# experiment\n"
      "[problem]\n"
      "problem = stokes\n"
      "mesh_n = 6\n"
      "parameterization = quad_points\n"
      "transform = none\n"
      "bounds_lower = 0.01\n"
      "bounds_upper = 10\n"
      "seed = 42\n"
      "init_near_truth = true\n"
      "max_iterations = 77\n");
  CHECK(c.problem == ProblemKind::stokes);
  CHECK(c.mesh_n == 6);
  CHECK(c.parameterization == Parameterization::quad_points);
  CHECK_FALSE(c.transform_abs);
  CHECK(*c.bounds_lower == 0.01);
  CHECK(*c.bounds_upper == 10.0);
  CHECK(c.seed == 42);
  CHECK(c.init_near_truth);
  CHECK(c.resolved_max_iterations() == 77);
  CHECK(c.resolved_truth_scale() == 0.1);
  CHECK(c.resolved_init_constant() == 0.1);

  auto b = parse("problem = burgers\n");
  CHECK(b.resolved_max_iterations() == 300);
  CHECK(b.burgers_steps == 10);
  CHECK(b.burgers_dt == 0.05);
}

TEST_CASE("config rejects malformed input") {
  CHECK_THROWS_AS(parse("frobnicate = 3\n"), InvalidArgument);       // unknown key
  CHECK_THROWS_AS(parse("problem stokes\n"), InvalidArgument);       // missing '='
  CHECK_THROWS_AS(parse("problem = heat\n"), InvalidArgument);       // unknown problem
  CHECK_THROWS_AS(parse("transform = exp\n"), InvalidArgument);      // unknown transform
  CHECK_THROWS_AS(parse("verbose = maybe\n"), InvalidArgument);      // bad boolean
  CHECK_THROWS_AS(parse("mesh_n = 1\n"), InvalidArgument);           // too coarse
  CHECK_THROWS_AS(parse("bounds_lower = 0.1\n"), InvalidArgument);   // unpaired bound
  CHECK_THROWS_AS(load_config("/nonexistent/cfg"), InvalidArgument);
}

TEST_CASE("experiment runs are deterministic") {
  ExperimentConfig cfg;
  cfg.problem = ProblemKind::linear_elasticity;
  cfg.mesh_n = 3;
  cfg.parameterization = Parameterization::mlp;
  cfg.max_iterations = 5;
  cfg.seed = 2;

  auto dir = std::filesystem::temp_directory_path() / "fieldinv_det";
  cfg.output_dir = (dir / "run1").string();
  auto r1 = experiment::run_experiment(cfg);
  cfg.output_dir = (dir / "run2").string();
  auto r2 = experiment::run_experiment(cfg);

  CHECK(r1.final_loss == r2.final_loss);
  CHECK((r1.theta - r2.theta).norm() == 0.0);
  CHECK(slurp(dir / "run1/trace.csv") == slurp(dir / "run2/trace.csv"));
  CHECK(slurp(dir / "run1/field.csv") == slurp(dir / "run2/field.csv"));
  CHECK(std::filesystem::exists(dir / "run1/result.json"));
  CHECK(std::filesystem::exists(dir / "run1/observations.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("experiment loss decreases from the start") {
  ExperimentConfig cfg;
  cfg.problem = ProblemKind::linear_elasticity;
  cfg.mesh_n = 3;
  cfg.parameterization = Parameterization::quad_points;
  cfg.max_iterations = 10;
  auto res = experiment::run_experiment(cfg, false);
  REQUIRE(res.trace.records.size() >= 2);
  CHECK(res.final_loss < res.trace.records.front().loss);
}

TEST_CASE("scale-invariant problems keep the network field mean pinned") {
  // pressure-only Stokes data cannot fix the field's scale, so the mlp
  // parameterization holds the quad-point mean at the output shift
  ExperimentConfig cfg;
  cfg.problem = ProblemKind::stokes;
  cfg.mesh_n = 3;
  cfg.parameterization = Parameterization::mlp;
  auto h = experiment::make_problem(cfg);
  auto fp = experiment::make_parameterization(cfg, h, h.truth_nu());
  Vec th = fp.theta0;
  std::mt19937 rng(17);
  std::normal_distribution<double> nd;
  for (long i = 0; i < th.size(); ++i) th[i] += 0.05 * nd(rng);
  Vec nu = fp.to_quad(th);
  CHECK_THAT(nu.mean(), Catch::Matchers::WithinRel(cfg.resolved_output_shift(), 1e-12));

  // identifiable problems are left unnormalized
  cfg.problem = ProblemKind::linear_elasticity;
  auto h2 = experiment::make_problem(cfg);
  auto fp2 = experiment::make_parameterization(cfg, h2, h2.truth_nu());
  Vec nu2 = fp2.to_quad(Vec(fp2.theta0 * 0.0));
  CHECK(nu2.isApproxToConstant(cfg.resolved_output_shift()));
}

TEST_CASE("gradient check command logic") {
  ExperimentConfig cfg;
  cfg.problem = ProblemKind::linear_elasticity;
  cfg.mesh_n = 3;
  cfg.parameterization = Parameterization::quad_points;
  auto ok = experiment::run_gradcheck(cfg, false, 5);
  CHECK(ok.pass);
  auto bad = experiment::run_gradcheck(cfg, true, 5);
  CHECK_FALSE(bad.pass);
  CHECK(bad.max_rel_error > 0.4);
}

TEST_CASE("cli binary end to end") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "fieldinv_cli";
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "ok.cfg");
    cfg << "problem = linear_elasticity\nmesh_n = 3\n"
           "parameterization = quad_points\nmax_iterations = 3\n";
    std::ofstream bad(dir / "bad.cfg");
    bad << "no_such_key = 1\n";
  }
  std::string base = "./fieldinv_cli";
  REQUIRE(fs::exists(base));

  auto run = [&](const std::string& args) {
    int rc = std::system((base + " " + args + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(rc);
  };
  CHECK(run("run " + (dir / "ok.cfg").string() + " --out-dir " + (dir / "out").string()) == 0);
  CHECK(fs::exists(dir / "out/result.json"));
  CHECK(fs::exists(dir / "out/trace.csv"));
  CHECK(run("run " + (dir / "bad.cfg").string()) == 1);
  CHECK(run("run " + (dir / "missing.cfg").string()) == 1);
  CHECK(run("gradcheck " + (dir / "ok.cfg").string()) == 0);
  CHECK(run("gradcheck " + (dir / "ok.cfg").string() + " --corrupt-gradient") == 3);
  CHECK(run("compare " + (dir / "ok.cfg").string() + " " + (dir / "ok.cfg").string() +
            " --out-dir " + (dir / "cmp").string()) == 0);
  CHECK(fs::exists(dir / "cmp/compare.csv"));
  CHECK(run("") != 0);  // a subcommand is required
  fs::remove_all(dir);
}
