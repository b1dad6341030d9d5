#pragma once

// Reusing meta-networks from a finished run as a fixed, segmented schedule.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "metasched/checkpoint.hpp"
#include "metasched/metatrain.hpp"

namespace metasched {

inline constexpr std::size_t kDefaultTransferNets = 3;

/// 1-based epochs whose checkpoints are reused: ceil(E * l / (k - 1)) for
/// l = 0..k-1, with epoch 0 mapped to epoch 1 and collisions pushed upward.
/// Throws ConfigError unless 2 <= k <= E.
std::vector<std::int64_t> select_checkpoint_epochs(std::int64_t epochs, std::size_t k);

/// `per_epoch[e - 1]` is the checkpoint saved after epoch e.
std::vector<mlrsnet::Checkpoint> select_checkpoints(std::span<const mlrsnet::Checkpoint> per_epoch, std::size_t k);

struct TransferPlan {
  std::vector<mlrsnet::Checkpoint> checkpoints;
  std::int64_t target_total_steps = 0;
  std::vector<std::int64_t> boundaries;  // k + 1 values, 0 .. target_total_steps
  std::optional<double> gamma_override;
  bool reset_state_on_switch = false;

  /// Index of the checkpoint driving `step`.
  std::size_t segment_of(std::int64_t step) const;
};

/// Equal segments: boundary l = round(target_total_steps * l / k).
TransferPlan build_transfer_plan(std::vector<mlrsnet::Checkpoint> checkpoints, std::int64_t target_total_steps,
                                 std::optional<double> gamma_override = std::nullopt);

/// Schedule equivalent of a plan (checks that hidden sizes agree).
FrozenMetaNetLr to_schedule(const TransferPlan& plan, const mlrsnet::LossNormalizer& normalizer);

/// Trains a fresh learner with the plan's frozen nets; no meta updates. The
/// recurrent state carries across segment switches unless the plan asks for
/// a reset.
ScheduleRunResult run_transfer(const TransferPlan& plan, const TrainConfig& config, const TrainingData& data,
                               const Architecture& arch,
                               const mlrsnet::LossNormalizer& normalizer = mlrsnet::LossNormalizer::identity());

}  // namespace metasched
