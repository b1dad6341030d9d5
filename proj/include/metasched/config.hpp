#pragma once

// Experiment configuration files (JSON, one experiment per file) and compare
// grids built from an explicit list of overrides.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "metasched/dataset.hpp"
#include "metasched/metatrain.hpp"
#include "metasched/schedules.hpp"

namespace metasched {

/// Frozen meta-net checkpoints split evenly over the run.
struct FrozenCheckpoints {
  std::vector<std::filesystem::path> checkpoints;
  std::optional<double> gamma_override;
  bool reset_state_on_switch = false;

  friend bool operator==(const FrozenCheckpoints&, const FrozenCheckpoints&) = default;
};

using ScheduleConfig = std::variant<FixedLr, ExponentialLr, MultiStepLr, SgdrLr, HypergradientLr, FrozenCheckpoints>;

/// Reuse of a finished meta-training run: k checkpoints picked from the
/// per-epoch files in `source_dir`.
struct TransferConfig {
  std::filesystem::path source_dir;
  std::size_t k = 3;
  std::optional<double> gamma_override;
  bool reset_state_on_switch = false;

  friend bool operator==(const TransferConfig&, const TransferConfig&) = default;
};

enum class Method { meta, schedule, transfer };

struct ExperimentConfig {
  std::string name = "experiment";
  Method method = Method::meta;
  DatasetSpec dataset;
  std::vector<std::size_t> hidden_layers;  // empty: softmax regression
  TrainConfig training;                    // seed and config_hash are set per run
  MetaTrainConfig meta;                    // meta runs; the normalizer also feeds frozen nets
  std::optional<ScheduleConfig> schedule;  // required for Method::schedule
  std::optional<TransferConfig> transfer;  // required for Method::transfer
  std::filesystem::path output_dir = "runs";
  std::vector<std::uint64_t> seeds;

  Architecture architecture() const;
  /// Steps in one run with these settings.
  std::int64_t total_steps() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

std::string method_name(Method method);

nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json to_json(const ScheduleConfig& schedule);

/// Strict parse: unknown keys, missing seeds, out-of-range values and missing
/// referenced files raise ConfigError. Relative paths resolve against
/// `base_dir` and are stored absolute.
ExperimentConfig experiment_from_json(const nlohmann::json& json, const std::filesystem::path& base_dir);
ScheduleConfig schedule_from_json(const nlohmann::json& json, const std::filesystem::path& base_dir);

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);

/// Hash of the serialized config with `seed` mixed in.
std::string config_hash(const ExperimentConfig& config, std::uint64_t seed);

struct GridEntry {
  std::string label;
  ExperimentConfig config;
};

/// {"base": {...} | "path", "methods": [{"label": ..., "overrides": {...}}],
///  "seeds": [...]}. Each entry is the base with its overrides merge-patched
/// in; the grid's seeds replace the per-config seed lists.
struct CompareGrid {
  std::vector<GridEntry> entries;
  std::vector<std::uint64_t> seeds;
};

CompareGrid parse_grid(std::string_view text, const std::filesystem::path& base_dir);
CompareGrid load_grid(const std::filesystem::path& path);

}  // namespace metasched
