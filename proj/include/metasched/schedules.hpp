#pragma once

// Learning-rate schedules behind one contract: lr_at(spec, runtime, step, ...).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "metasched/mlrsnet.hpp"

namespace metasched {

struct FixedLr {
  double lr;

  friend bool operator==(const FixedLr&, const FixedLr&) = default;
};

/// lr0 * rate^epoch, stepped at epoch boundaries.
struct ExponentialLr {
  double lr0;
  double rate;

  friend bool operator==(const ExponentialLr&, const ExponentialLr&) = default;
};

/// lr0 * factor^floor(epoch / period_epochs).
struct MultiStepLr {
  double lr0;
  std::int64_t period_epochs;
  double factor;

  friend bool operator==(const MultiStepLr&, const MultiStepLr&) = default;
};

/// Cosine annealing with warm restarts; cycle lengths t0, t0*t_mult, ...
/// (in epochs, advanced fractionally every step).
struct SgdrLr {
  double eta_max;
  double eta_min;
  std::int64_t t0;
  std::int64_t t_mult;

  friend bool operator==(const SgdrLr&, const SgdrLr&) = default;
};

/// Online hypergradient descent on a global learning rate.
struct HypergradientLr {
  double alpha0;
  double hyper_lr;

  friend bool operator==(const HypergradientLr&, const HypergradientLr&) = default;
};

/// Frozen meta-networks driving the learning rate. With several nets, net l
/// is active on steps [boundaries[l], boundaries[l+1]).
struct FrozenMetaNetLr {
  std::vector<mlrsnet::Params> nets;
  std::vector<std::int64_t> boundaries;  // empty for a single net
  std::optional<double> gamma_override;
  mlrsnet::LossNormalizer normalizer = mlrsnet::LossNormalizer::identity();
  bool reset_state_on_switch = false;

  friend bool operator==(const FrozenMetaNetLr&, const FrozenMetaNetLr&) = default;
};

using ScheduleSpec = std::variant<FixedLr, ExponentialLr, MultiStepLr, SgdrLr, HypergradientLr, FrozenMetaNetLr>;

/// Throws ConfigError when a field violates its range.
void validate(const ScheduleSpec& spec);
std::string schedule_name(const ScheduleSpec& spec);

struct StepContext {
  std::int64_t step = 0;  // global, 0-based
  std::int64_t epoch = 0;  // 0-based epoch containing `step`
  std::int64_t steps_per_epoch = 1;
};

struct SchedulerRuntime {
  // hypergradient descent
  std::optional<double> hd_alpha;
  std::vector<double> previous_grad;
  // frozen meta-net
  std::optional<mlrsnet::State> meta_state;
  std::size_t active_net = 0;
  std::int64_t meta_advances = 0;
  // SGDR bookkeeping (informational)
  double sgdr_t_cur = 0.0;
  double sgdr_t_i = 0.0;
};

/// Learning rate for one training step. `observed_loss` is the raw mini-batch
/// loss (required by FrozenMetaNetLr); `observed_grad` the current gradient
/// (used by HypergradientLr).
double lr_at(const ScheduleSpec& spec, SchedulerRuntime& runtime, const StepContext& ctx,
             std::optional<double> observed_loss = std::nullopt,
             std::span<const double> observed_grad = {});

/// eta_min + (eta_max - eta_min) * (1 + cos(pi * t_cur / t_i)) / 2
double sgdr_lr(double t_cur, double t_i, double eta_min, double eta_max);

struct SgdrPosition {
  double t_cur;
  double t_i;
};

/// Locates a fractional epoch inside the restart cycles.
SgdrPosition sgdr_position(double epoch, std::int64_t t0, std::int64_t t_mult);

/// alpha_prev + hyper_lr * (g_t . g_prev), floored at zero.
double hd_update(double alpha_prev, std::span<const double> g_t, std::span<const double> g_prev, double hyper_lr);

/// Advances the frozen meta-net state once and returns its learning rate.
double frozen_meta_lr(const FrozenMetaNetLr& spec, SchedulerRuntime& runtime, std::int64_t step,
                      double observed_loss);

}  // namespace metasched
