// Command-line experiment runner. Subcommands:
//   run     execute one configuration across its seeds
//   ablate  run every freezing variant on shared seeds and initializations
//   grid    sweep lambda_f x tau
//   report  merge a directory of run records into one CSV
//
// Exit codes: 0 success, 2 config error, 3 budget exhausted without reaching
// the configured target.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <string>

#include "wsbd/experiment.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string seeds;
  int parallel = 1;
  bool exact = false;
  double seconds_per_fp = -1.0;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool needs_config) {
  auto* opt = cmd->add_option("--config", flags.config_path, "configuration file path");
  if (needs_config) opt->required();
  cmd->add_option("--out", flags.out_dir, "output directory (overrides out.dir)");
  cmd->add_option("--seeds", flags.seeds, "comma-separated seed list (overrides config)");
  cmd->add_option("--parallel", flags.parallel, "worker pool size")->default_val(1);
  cmd->add_flag("--exact", flags.exact, "force exact expectations (M = infinity)");
  cmd->add_option("--seconds-per-fp", flags.seconds_per_fp,
                  "wall-clock estimate multiplier per forward pass");
}

wsbd::ExperimentConfig load_with_overrides(const CommonFlags& flags) {
  wsbd::ExperimentConfig config = wsbd::load_config(flags.config_path);
  if (!flags.out_dir.empty()) config.out_dir = flags.out_dir;
  if (!flags.seeds.empty()) {
    auto kv = std::map<std::string, std::string>{{"seeds", flags.seeds}};
    config.seeds = wsbd::config_from_map(kv).seeds;
  }
  if (flags.exact) config.exact = true;
  if (flags.seconds_per_fp > 0.0) config.seconds_per_fp = flags.seconds_per_fp;
  return config;
}

std::string fmt(double v) { return wsbd::fmt_double(v); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantum-circuit optimizer benchmark suite"};
  app.require_subcommand(1);

  CommonFlags run_flags, ablate_flags, grid_flags;
  std::string report_dir;
  std::string report_out;

  auto* run_cmd = app.add_subcommand("run", "execute one configuration across its seeds");
  add_common(run_cmd, run_flags, true);

  auto* ablate_cmd = app.add_subcommand("ablate", "compare freezing variants on shared seeds");
  add_common(ablate_cmd, ablate_flags, true);

  auto* grid_cmd = app.add_subcommand("grid", "sweep lambda_f x tau");
  add_common(grid_cmd, grid_flags, true);

  auto* report_cmd = app.add_subcommand("report", "merge run records into one CSV");
  report_cmd->add_option("--out", report_dir, "directory of run records")->required();
  report_cmd->add_option("--csv", report_out, "write the merged CSV here (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      const auto config = load_with_overrides(run_flags);
      const auto summary = wsbd::run_experiment(config, run_flags.parallel);
      std::cout << "config " << wsbd::config_hash(config) << ": " << summary.records.size()
                << " seed(s), reached target " << summary.reached << "/"
                << summary.records.size() << "\n";
      for (const auto& rec : summary.records) {
        std::cout << "  seed " << rec.seed << ": final_loss=" << fmt(rec.result.final_loss)
                  << " fp=" << rec.result.counter.forward_passes
                  << " fp_to_target=" << rec.result.fp_to_target
                  << (rec.result.budget_exhausted ? " (budget exhausted)" : "") << "\n";
      }
      std::cout << "median fp_to_target: " << fmt(summary.median_fp_to_target)
                << "  cv: " << fmt(summary.cv_fp_to_target) << "\n";
      const bool has_target = wsbd::convergence_for(config, wsbd::prepare_task(config))
                                  .target.has_value();
      if (has_target && summary.reached == 0) return 3;
      return 0;
    }
    if (ablate_cmd->parsed()) {
      const auto config = load_with_overrides(ablate_flags);
      const auto rows = wsbd::ablate_experiment(config, ablate_flags.parallel);
      std::cout << "variant,median_fp_to_target,median_final_loss\n";
      for (const auto& row : rows) {
        std::cout << wsbd::variant_name(row.variant) << ',' << fmt(row.median_fp) << ','
                  << fmt(row.median_final_loss) << "\n";
      }
      return 0;
    }
    if (grid_cmd->parsed()) {
      const auto config = load_with_overrides(grid_flags);
      const auto cells = wsbd::grid_experiment(config, config.grid_lambda_f, config.grid_tau,
                                               grid_flags.parallel);
      std::cout << "lambda_f,tau,median_fp_to_target,median_final_loss\n";
      for (const auto& c : cells) {
        std::cout << fmt(c.lambda_f) << ',' << c.tau << ',' << fmt(c.median_fp) << ','
                  << fmt(c.median_final_loss) << "\n";
      }
      return 0;
    }
    if (report_cmd->parsed()) {
      const std::string csv = wsbd::report_directory(report_dir);
      if (report_out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream out(report_out);
        if (!out) throw std::runtime_error("cannot write " + report_out);
        out << csv;
      }
      return 0;
    }
  } catch (const wsbd::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
