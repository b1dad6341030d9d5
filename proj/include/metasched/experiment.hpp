#pragma once

// Running configured experiments, writing their artifacts, and summarising
// compare grids.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metasched/checkpoint.hpp"
#include "metasched/config.hpp"
#include "metasched/metrics.hpp"

namespace metasched {

struct RunOutcome {
  std::uint64_t seed = 0;
  std::string config_hash;
  MetricsTable metrics;
  std::vector<mlrsnet::Checkpoint> checkpoints;  // per epoch, meta runs only
  bool diverged = false;
  std::string diagnostic;  // set when diverged
};

/// Loads the `checkpoints` of a frozen schedule and segments them evenly over
/// `total_steps`.
ScheduleSpec resolve_schedule(const ScheduleConfig& schedule, std::int64_t total_steps,
                              const mlrsnet::LossNormalizer& normalizer);

/// Per-epoch checkpoints of a run directory, ordered by epoch; the files must
/// cover epochs 1..E without gaps.
std::vector<mlrsnet::Checkpoint> load_checkpoint_dir(const std::filesystem::path& dir);

std::string checkpoint_file_name(std::int64_t epoch);

/// One run of `config` with training seed `seed`. A diverging run returns
/// the rows recorded so far with `diverged` set.
RunOutcome run_experiment(const ExperimentConfig& config, std::uint64_t seed);

/// metrics.csv, checkpoints/epoch_NNNN.json and config.json under `dir`.
void write_run(const RunOutcome& outcome, const ExperimentConfig& config, const std::filesystem::path& dir);

struct MethodSummary {
  std::string label;
  std::size_t runs = 0;
  std::size_t diverged = 0;
  double best_acc_mean = 0.0;
  double best_acc_std = 0.0;
  double last_acc_mean = 0.0;
  double last_acc_std = 0.0;
  double final_val_loss_mean = 0.0;
  double final_val_loss_std = 0.0;
};

struct LabeledRun {
  std::string label;
  MetricsTable metrics;
  bool diverged = false;
};

/// Groups runs by label (first-appearance order). Best/last test accuracy
/// come from epoch >= 1 eval rows; the final validation loss from the last
/// eval row. Std is the sample standard deviation (0 for a single run).
std::vector<MethodSummary> summarize(const std::vector<LabeledRun>& runs);

inline constexpr std::string_view kSummaryHeader =
    "method,runs,diverged,best_acc_mean,best_acc_std,last_acc_mean,last_acc_std,final_val_loss_mean,"
    "final_val_loss_std";

std::string summary_csv(const std::vector<MethodSummary>& summary);
/// Fixed-width table with mean +- std columns.
std::string summary_table(const std::vector<MethodSummary>& summary);

/// Worker count from METASCHED_THREADS (default 1, minimum 1).
std::size_t threads_from_env();

/// Runs every (entry, seed) pair with up to `threads` workers, writing each
/// run to out_dir/<label>/seed_<seed>/ and the summary to out_dir/summary.csv.
std::vector<MethodSummary> run_compare(const CompareGrid& grid, const std::filesystem::path& out_dir,
                                       std::size_t threads);

inline constexpr std::string_view kPlotHeader = "step,lr,train_loss,val_loss,test_acc";

/// One row per training step; val_loss and test_acc carry the most recent
/// eval row forward (empty before the first one).
std::string plot_csv(const MetricsTable& table);

}  // namespace metasched
