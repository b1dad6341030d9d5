#include "metasched/transfer.hpp"

#include <string>

namespace metasched {

std::vector<std::int64_t> select_checkpoint_epochs(std::int64_t epochs, std::size_t k) {
  if (k < 2) throw ConfigError("checkpoint selection needs k >= 2");
  const auto kk = static_cast<std::int64_t>(k);
  if (kk > epochs) {
    throw ConfigError("cannot select " + std::to_string(k) + " checkpoints from " + std::to_string(epochs) + " epochs");
  }
  std::vector<std::int64_t> out;
  out.reserve(k);
  for (std::int64_t l = 0; l < kk; ++l) {
    // ceil(E * l / (k - 1)) in integer arithmetic
    std::int64_t epoch = (epochs * l + (kk - 2)) / (kk - 1);
    if (epoch < 1) epoch = 1;
    if (!out.empty() && epoch <= out.back()) epoch = out.back() + 1;
    out.push_back(epoch);
  }
  if (out.back() > epochs) throw ConfigError("checkpoint selection ran past the last epoch");
  return out;
}

std::vector<mlrsnet::Checkpoint> select_checkpoints(std::span<const mlrsnet::Checkpoint> per_epoch, std::size_t k) {
  const auto epochs = select_checkpoint_epochs(static_cast<std::int64_t>(per_epoch.size()), k);
  std::vector<mlrsnet::Checkpoint> out;
  out.reserve(epochs.size());
  for (const auto e : epochs) out.push_back(per_epoch[static_cast<std::size_t>(e - 1)]);
  return out;
}

std::size_t TransferPlan::segment_of(std::int64_t step) const {
  std::size_t l = 0;
  while (l + 1 < checkpoints.size() && step >= boundaries[l + 1]) ++l;
  return l;
}

TransferPlan build_transfer_plan(std::vector<mlrsnet::Checkpoint> checkpoints, std::int64_t target_total_steps,
                                 std::optional<double> gamma_override) {
  if (checkpoints.empty()) throw ConfigError("transfer plan needs at least one checkpoint");
  const auto k = static_cast<std::int64_t>(checkpoints.size());
  if (target_total_steps < k) throw ConfigError("transfer horizon must be at least one step per checkpoint");
  TransferPlan plan;
  plan.target_total_steps = target_total_steps;
  plan.gamma_override = gamma_override;
  plan.boundaries.reserve(checkpoints.size() + 1);
  for (std::int64_t l = 0; l <= k; ++l) {
    // round-half-up of target * l / k
    plan.boundaries.push_back((2 * target_total_steps * l + k) / (2 * k));
  }
  plan.checkpoints = std::move(checkpoints);
  return plan;
}

FrozenMetaNetLr to_schedule(const TransferPlan& plan, const mlrsnet::LossNormalizer& normalizer) {
  if (plan.checkpoints.empty()) throw ConfigError("transfer plan has no checkpoints");
  FrozenMetaNetLr spec;
  const std::size_t hidden = plan.checkpoints.front().params.hidden_size();
  for (const auto& ckpt : plan.checkpoints) {
    if (ckpt.params.hidden_size() != hidden) {
      throw ConfigError("transfer checkpoints disagree on hidden size (" + std::to_string(hidden) + " vs " +
                        std::to_string(ckpt.params.hidden_size()) + ")");
    }
    spec.nets.push_back(ckpt.params);
  }
  if (spec.nets.size() > 1) spec.boundaries = plan.boundaries;
  spec.gamma_override = plan.gamma_override;
  spec.normalizer = normalizer;
  spec.reset_state_on_switch = plan.reset_state_on_switch;
  return spec;
}

ScheduleRunResult run_transfer(const TransferPlan& plan, const TrainConfig& config, const TrainingData& data,
                               const Architecture& arch, const mlrsnet::LossNormalizer& normalizer) {
  TrainConfig run = config;
  if (!run.max_steps) run.max_steps = plan.target_total_steps;
  return train_with_schedule(to_schedule(plan, normalizer), run, data, arch, normalizer);
}

}  // namespace metasched
