#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace metasched {

enum class Phase { train, eval };

/// One metrics row. Train rows are emitted once per optimisation step; eval
/// rows after every evaluated epoch (and once before training, epoch 0), with
/// `train_loss` holding the full training-set loss.
struct TrainStepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  Phase phase = Phase::train;
  std::optional<double> lr;
  std::optional<double> train_loss;
  std::optional<double> val_loss;
  std::optional<double> test_loss;
  std::optional<double> test_acc;
  std::int64_t wall_us = 0;

  friend bool operator==(const TrainStepRecord&, const TrainStepRecord&) = default;
};

using MetricsTable = std::vector<TrainStepRecord>;

inline constexpr std::string_view kMetricsHeader = "step,epoch,phase,lr,train_loss,val_loss,test_loss,test_acc,wall_us";

/// Header plus one line per row; missing values are empty fields and doubles
/// use shortest round-trip decimals.
std::string to_csv(const MetricsTable& table);
/// Throws ParseError (location = 1-based line) on malformed input.
MetricsTable parse_csv(std::string_view text);

void write_metrics(const MetricsTable& table, const std::filesystem::path& path);
MetricsTable read_metrics(const std::filesystem::path& path);

/// Eval rows only, in order.
std::vector<TrainStepRecord> eval_rows(const MetricsTable& table);

struct AccuracySummary {
  double best;
  double last;
};

/// Best and last test accuracy over the eval rows that carry one.
std::optional<AccuracySummary> test_accuracy_summary(const MetricsTable& table);

}  // namespace metasched
