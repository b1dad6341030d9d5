#include "metasched/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "metasched/errors.hpp"
#include "metasched/io.hpp"
#include "metasched/transfer.hpp"

namespace metasched {

namespace fs = std::filesystem;

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return MeanStd{std::nan(""), std::nan("")};
  for (const double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (const double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

std::optional<double> final_val_loss(const MetricsTable& table) {
  for (auto it = table.rbegin(); it != table.rend(); ++it) {
    if (it->phase == Phase::eval) return it->val_loss;
  }
  return std::nullopt;
}

std::optional<std::int64_t> checkpoint_epoch(const fs::path& file) {
  const std::string name = file.filename().string();
  constexpr std::string_view prefix = "epoch_";
  constexpr std::string_view suffix = ".json";
  if (name.size() <= prefix.size() + suffix.size() || !name.starts_with(prefix) || !name.ends_with(suffix)) {
    return std::nullopt;
  }
  const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
  if (digits.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  return std::stoll(digits);
}

}  // namespace

std::string checkpoint_file_name(std::int64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04lld.json", static_cast<long long>(epoch));
  return buf;
}

ScheduleSpec resolve_schedule(const ScheduleConfig& schedule, std::int64_t total_steps,
                              const mlrsnet::LossNormalizer& normalizer) {
  return std::visit(
      [&](const auto& s) -> ScheduleSpec {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, FrozenCheckpoints>) {
          std::vector<mlrsnet::Checkpoint> ckpts;
          for (const auto& p : s.checkpoints) ckpts.push_back(mlrsnet::load_checkpoint(p));
          TransferPlan plan = build_transfer_plan(std::move(ckpts), total_steps, s.gamma_override);
          plan.reset_state_on_switch = s.reset_state_on_switch;
          return to_schedule(plan, normalizer);
        } else {
          return s;
        }
      },
      schedule);
}

std::vector<mlrsnet::Checkpoint> load_checkpoint_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("checkpoint directory does not exist: " + dir.string());
  std::map<std::int64_t, fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (const auto epoch = checkpoint_epoch(entry.path())) files.emplace(*epoch, entry.path());
  }
  if (files.empty()) throw ConfigError("no epoch_NNNN.json checkpoints in " + dir.string());
  std::vector<mlrsnet::Checkpoint> out;
  std::int64_t expected = 1;
  for (const auto& [epoch, path] : files) {
    if (epoch != expected) {
      throw ConfigError("checkpoint for epoch " + std::to_string(expected) + " is missing in " + dir.string());
    }
    out.push_back(mlrsnet::load_checkpoint(path));
    ++expected;
  }
  return out;
}

RunOutcome run_experiment(const ExperimentConfig& config, std::uint64_t seed) {
  const TrainingData data = make_splits(config.dataset);
  const Architecture arch = config.architecture();
  TrainConfig train = config.training;
  train.seed = seed;
  train.config_hash = config_hash(config, seed);
  const auto& normalizer = config.meta.normalizer;

  RunOutcome out;
  out.seed = seed;
  out.config_hash = train.config_hash;
  try {
    switch (config.method) {
      case Method::meta: {
        MetaTrainResult r = train_mlrsnet(train, config.meta, data, arch);
        out.metrics = std::move(r.metrics);
        out.checkpoints = std::move(r.checkpoints);
        break;
      }
      case Method::schedule: {
        if (!config.schedule) throw ConfigError("method 'schedule' needs a schedule");
        const ScheduleSpec spec = resolve_schedule(*config.schedule, config.total_steps(), normalizer);
        out.metrics = train_with_schedule(spec, train, data, arch, normalizer).metrics;
        break;
      }
      case Method::transfer: {
        if (!config.transfer) throw ConfigError("method 'transfer' needs a transfer section");
        const TransferConfig& t = *config.transfer;
        const auto all = load_checkpoint_dir(t.source_dir);
        TransferPlan plan = build_transfer_plan(select_checkpoints(all, t.k), config.total_steps(), t.gamma_override);
        plan.reset_state_on_switch = t.reset_state_on_switch;
        out.metrics = run_transfer(plan, train, data, arch, normalizer).metrics;
        break;
      }
    }
  } catch (const TrainingDiverged& e) {
    out.metrics = e.partial_metrics();
    out.diverged = true;
    out.diagnostic = e.what();
  }
  return out;
}

void write_run(const RunOutcome& outcome, const ExperimentConfig& config, const fs::path& dir) {
  write_metrics(outcome.metrics, dir / "metrics.csv");
  for (std::size_t i = 0; i < outcome.checkpoints.size(); ++i) {
    mlrsnet::save_checkpoint(outcome.checkpoints[i],
                             dir / "checkpoints" / checkpoint_file_name(static_cast<std::int64_t>(i) + 1));
  }
  write_file_atomic(dir / "config.json", serialize_config(config));
}

std::vector<MethodSummary> summarize(const std::vector<LabeledRun>& runs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const LabeledRun*>> groups;
  for (const auto& run : runs) {
    if (!groups.contains(run.label)) order.push_back(run.label);
    groups[run.label].push_back(&run);
  }
  std::vector<MethodSummary> out;
  for (const auto& label : order) {
    std::vector<double> best, last, val;
    MethodSummary s;
    s.label = label;
    for (const LabeledRun* run : groups[label]) {
      ++s.runs;
      if (run->diverged) ++s.diverged;
      if (const auto acc = test_accuracy_summary(run->metrics)) {
        best.push_back(acc->best);
        last.push_back(acc->last);
      }
      if (const auto v = final_val_loss(run->metrics)) val.push_back(*v);
    }
    const MeanStd b = mean_std(best), l = mean_std(last), v = mean_std(val);
    s.best_acc_mean = b.mean;
    s.best_acc_std = b.std;
    s.last_acc_mean = l.mean;
    s.last_acc_std = l.std;
    s.final_val_loss_mean = v.mean;
    s.final_val_loss_std = v.std;
    out.push_back(s);
  }
  return out;
}

std::string summary_csv(const std::vector<MethodSummary>& summary) {
  std::string out(kSummaryHeader);
  out += '\n';
  for (const auto& s : summary) {
    out += s.label + ',' + std::to_string(s.runs) + ',' + std::to_string(s.diverged) + ',' +
           format_double(s.best_acc_mean) + ',' + format_double(s.best_acc_std) + ',' +
           format_double(s.last_acc_mean) + ',' + format_double(s.last_acc_std) + ',' +
           format_double(s.final_val_loss_mean) + ',' + format_double(s.final_val_loss_std) + '\n';
  }
  return out;
}

std::string summary_table(const std::vector<MethodSummary>& summary) {
  std::size_t width = 6;
  for (const auto& s : summary) width = std::max(width, s.label.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %4s  %-17s  %-17s  %-17s\n", static_cast<int>(width), "method", "runs",
                "best test acc", "last test acc", "final val loss");
  out += buf;
  for (const auto& s : summary) {
    std::snprintf(buf, sizeof buf, "%-*s  %4zu  %.4f +- %.4f  %.4f +- %.4f  %.4f +- %.4f%s\n", static_cast<int>(width),
                  s.label.c_str(), s.runs, s.best_acc_mean, s.best_acc_std, s.last_acc_mean, s.last_acc_std,
                  s.final_val_loss_mean, s.final_val_loss_std, s.diverged ? "  (diverged runs)" : "");
    out += buf;
  }
  return out;
}

std::size_t threads_from_env() {
  const char* value = std::getenv("METASCHED_THREADS");
  if (!value || !*value) return 1;
  char* end = nullptr;
  const long parsed = std::strtol(value, &end, 10);
  if (*end != '\0' || parsed < 1) throw ConfigError(std::string("METASCHED_THREADS must be a positive integer, got '") +
                                                    value + "'");
  return static_cast<std::size_t>(parsed);
}

std::vector<MethodSummary> run_compare(const CompareGrid& grid, const fs::path& out_dir, std::size_t threads) {
  struct Job {
    const GridEntry* entry;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& entry : grid.entries) {
    for (const auto seed : grid.seeds) jobs.push_back(Job{&entry, seed});
  }
  std::vector<LabeledRun> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};

  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const Job& job = jobs[i];
        RunOutcome outcome = run_experiment(job.entry->config, job.seed);
        write_run(outcome, job.entry->config, out_dir / job.entry->label / ("seed_" + std::to_string(job.seed)));
        results[i] = LabeledRun{job.entry->label, std::move(outcome.metrics), outcome.diverged};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  auto summary = summarize(results);
  write_file_atomic(out_dir / "summary.csv", summary_csv(summary));
  return summary;
}

std::string plot_csv(const MetricsTable& table) {
  std::string out(kPlotHeader);
  out += '\n';
  std::optional<double> val_loss;
  std::optional<double> test_acc;
  for (const auto& row : table) {
    if (row.phase == Phase::eval) {
      val_loss = row.val_loss;
      test_acc = row.test_acc;
      continue;
    }
    out += std::to_string(row.step);
    for (const auto& v : {row.lr, row.train_loss, val_loss, test_acc}) {
      out += ',';
      if (v) out += format_double(*v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace metasched
