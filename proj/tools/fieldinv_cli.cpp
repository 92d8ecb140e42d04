// Experiment runner CLI: run / gradcheck / compare.
//
// Exit codes: 0 success, 1 usage or config error, 2 solver failure,
// 3 gradient check failure.

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fieldinv/fieldinv.hpp"

namespace {

using namespace fieldinv;

config::ExperimentConfig load_with_overrides(const std::string& path,
                                             std::optional<unsigned> seed,
                                             std::optional<std::string> out_dir,
                                             std::optional<int> max_iter, bool verbose) {
  auto cfg = config::load_config(path);
  if (seed) cfg.seed = *seed;
  if (out_dir) cfg.output_dir = *out_dir;
  if (max_iter) cfg.max_iterations = *max_iter;
  if (verbose) cfg.verbose = true;
  return cfg;
}

void print_result(const config::ExperimentConfig& cfg, const experiment::ExperimentResult& r) {
  std::printf("problem=%s parameterization=%s mesh_n=%d seed=%u\n",
              config::problem_name(cfg.problem),
              config::parameterization_name(cfg.parameterization), cfg.mesh_n, cfg.seed);
  std::printf("  final_loss     = %.6e\n", r.final_loss);
  std::printf("  rel_l2_error   = %.6e\n", r.rel_l2_error);
  std::printf("  max_abs_error  = %.6e\n", r.max_abs_error);
  std::printf("  iterations     = %d\n", r.iterations);
  std::printf("  termination    = %s\n", optim::stop_reason_name(r.reason));
  std::printf("  wall_seconds   = %.2f\n", r.wall_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PDE-constrained coefficient-field inversion experiments"};
  app.require_subcommand(1);

  std::optional<unsigned> seed;
  std::optional<std::string> out_dir;
  std::optional<int> max_iter;
  bool verbose = false;
  app.add_option("--seed", seed, "override config seed");
  app.add_option("--out-dir", out_dir, "override output directory");
  app.add_option("--max-iter", max_iter, "override optimizer iteration cap");
  app.add_flag("--verbose", verbose, "verbose logging");

  std::string run_cfg;
  auto* run = app.add_subcommand("run", "run one inverse experiment");
  run->add_option("config", run_cfg, "config file")->required();

  std::string gc_cfg;
  bool corrupt = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("config", gc_cfg, "config file")->required();
  gradcheck->add_flag("--corrupt-gradient", corrupt, "corrupt the gradient (detector sanity)");

  std::string cmp_a, cmp_b;
  auto* compare = app.add_subcommand("compare", "run two configs and tabulate both");
  compare->add_option("configA", cmp_a, "first config file")->required();
  compare->add_option("configB", cmp_b, "second config file")->required();

  // allow the global overrides to appear after the subcommand arguments
  for (auto* sc : {run, gradcheck, compare}) sc->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      auto cfg = load_with_overrides(run_cfg, seed, out_dir, max_iter, verbose);
      auto res = experiment::run_experiment(cfg);
      print_result(cfg, res);
      if (res.reason == optim::StopReason::solver_failure) return 2;
      return 0;
    }
    if (gradcheck->parsed()) {
      auto cfg = load_with_overrides(gc_cfg, seed, out_dir, max_iter, verbose);
      auto rep = experiment::run_gradcheck(cfg, corrupt);
      std::printf("gradcheck %s: max relative error %.3e (%s)\n",
                  config::problem_name(cfg.problem), rep.max_rel_error,
                  rep.pass ? "pass" : "FAIL");
      return rep.pass ? 0 : 3;
    }
    if (compare->parsed()) {
      auto cfg_a = load_with_overrides(cmp_a, seed, {}, max_iter, verbose);
      auto cfg_b = load_with_overrides(cmp_b, seed, {}, max_iter, verbose);
      if (cfg_a.problem != cfg_b.problem)
        throw InvalidArgument("compare: configs must target the same problem");
      if (out_dir) {
        cfg_a.output_dir = *out_dir + "/a";
        cfg_b.output_dir = *out_dir + "/b";
      }
      auto res_a = experiment::run_experiment(cfg_a);
      auto res_b = experiment::run_experiment(cfg_b);
      std::string table = cfg_a.output_dir + "/../compare.csv";
      if (!out_dir) table = "compare.csv";
      std::FILE* f = std::fopen(table.c_str(), "w");
      if (!f) throw std::runtime_error("compare: cannot open " + table);
      std::fprintf(f,
                   "config,parameterization,final_loss,rel_l2_error,max_abs_error,"
                   "iterations,termination\n");
      auto row = [&](const std::string& name, const config::ExperimentConfig& c,
                     const experiment::ExperimentResult& r) {
        std::fprintf(f, "%s,%s,%.17g,%.17g,%.17g,%d,%s\n", name.c_str(),
                     config::parameterization_name(c.parameterization), r.final_loss,
                     r.rel_l2_error, r.max_abs_error, r.iterations,
                     optim::stop_reason_name(r.reason));
      };
      row(cmp_a, cfg_a, res_a);
      row(cmp_b, cfg_b, res_b);
      std::fclose(f);
      print_result(cfg_a, res_a);
      print_result(cfg_b, res_b);
      std::printf("comparison table: %s\n", table.c_str());
      return 0;
    }
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
