#include "metasched/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>

#include "metasched/config.hpp"
#include "metasched/errors.hpp"
#include "metasched/experiment.hpp"
#include "metasched/gradcheck.hpp"
#include "metasched/io.hpp"

namespace metasched {

namespace {

namespace fs = std::filesystem;

constexpr double kGradcheckTolerance = 1e-5;

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_run_options(CLI::App* cmd, RunArgs& args) {
  cmd->add_option("--config,-c", args.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "run only this seed instead of the config's seed list");
  cmd->add_option("--out,-o", args.out, "output directory (default: <output_dir>/<name>)");
}

std::string describe(const RunOutcome& outcome) {
  std::string text = "seed " + std::to_string(outcome.seed) + ":";
  if (const auto acc = test_accuracy_summary(outcome.metrics)) {
    char buf[96];
    std::snprintf(buf, sizeof buf, " best test acc %.4f, last test acc %.4f", acc->best, acc->last);
    text += buf;
  }
  return text;
}

int run_configured(Method method, const RunArgs& args, std::ostream& out, std::ostream& err) {
  ExperimentConfig config = load_config(args.config);
  if (method == Method::schedule && !config.schedule) throw ConfigError("config has no schedule section");
  if (method == Method::transfer && !config.transfer) throw ConfigError("config has no transfer section");
  config.method = method;
  const fs::path dir = args.out.empty() ? config.output_dir / config.name : fs::path(args.out);
  const std::vector<std::uint64_t> seeds = args.seed ? std::vector<std::uint64_t>{*args.seed} : config.seeds;
  int code = kExitOk;
  for (const auto seed : seeds) {
    const RunOutcome outcome = run_experiment(config, seed);
    const fs::path run_dir = dir / ("seed_" + std::to_string(seed));
    write_run(outcome, config, run_dir);
    out << describe(outcome) << " -> " << (run_dir / "metrics.csv").string() << "\n";
    if (outcome.diverged) {
      err << "error: seed " << seed << " diverged: " << outcome.diagnostic << "\n";
      code = kExitFailure;
    }
  }
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Meta-learned learning-rate schedules: training, baselines, transfer and checks", "metasched"};
  app.require_subcommand(1);

  RunArgs meta_args, baseline_args, transfer_args;
  auto* train_meta = app.add_subcommand("train-meta", "meta-train the LR network alongside the learner");
  add_run_options(train_meta, meta_args);
  auto* train_baseline = app.add_subcommand("train-baseline", "train with the config's fixed schedule");
  add_run_options(train_baseline, baseline_args);
  auto* transfer = app.add_subcommand("transfer", "train with frozen checkpoints of an earlier meta run");
  add_run_options(transfer, transfer_args);

  std::size_t gc_instances = 3;
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every analytic gradient");
  gradcheck->add_option("--instances", gc_instances, "random instances per suite")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", gc_seed, "seed for the random instances");

  std::string grid_path, compare_out = "compare-results";
  auto* compare = app.add_subcommand("compare", "run a grid of methods over seeds and summarise best/last accuracy");
  compare->add_option("--grid,-g", grid_path, "grid file (JSON)")->required()->check(CLI::ExistingFile);
  compare->add_option("--out,-o", compare_out, "output directory");

  std::string metrics_path, plot_out;
  auto* emit_plots = app.add_subcommand("emit-plots", "per-step plot data from a metrics CSV");
  emit_plots->add_option("--metrics,-m", metrics_path, "metrics.csv of a run")->required()->check(CLI::ExistingFile);
  emit_plots->add_option("--out,-o", plot_out, "output CSV (default: stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run 'metasched --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (*train_meta) return run_configured(Method::meta, meta_args, out, err);
    if (*train_baseline) return run_configured(Method::schedule, baseline_args, out, err);
    if (*transfer) return run_configured(Method::transfer, transfer_args, out, err);
    if (*gradcheck) {
      bool ok = true;
      for (const auto& r : run_gradcheck_suites(gc_instances, gc_seed)) {
        const bool pass = r.max_rel_error <= kGradcheckTolerance;
        ok = ok && pass;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-28s instances=%zu max_rel_err=%.3e %s\n", r.name.c_str(), r.instances,
                      r.max_rel_error, pass ? "ok" : "FAIL");
        out << buf;
      }
      return ok ? kExitOk : kExitFailure;
    }
    if (*compare) {
      const CompareGrid grid = load_grid(grid_path);
      const auto summary = run_compare(grid, compare_out, threads_from_env());
      out << summary_table(summary);
      out << "summary -> " << (fs::path(compare_out) / "summary.csv").string() << "\n";
      return kExitOk;
    }
    if (*emit_plots) {
      const std::string csv = plot_csv(read_metrics(metrics_path));
      if (plot_out.empty()) {
        out << csv;
      } else {
        write_file_atomic(plot_out, csv);
      }
      return kExitOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace metasched
