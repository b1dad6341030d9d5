#pragma once

// Online meta-learning of the learning-rate network interleaved with SGD on the
// learner, plus the plain scheduled-SGD loop used by every baseline.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metasched/checkpoint.hpp"
#include "metasched/metrics.hpp"
#include "metasched/mlrsnet.hpp"
#include "metasched/models.hpp"
#include "metasched/schedules.hpp"

namespace metasched {

struct TrainingData {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Settings shared by every training loop.
struct TrainConfig {
  std::int64_t epochs = 1;
  std::size_t batch_size = 64;
  std::optional<std::int64_t> max_steps;  // defaults to epochs * steps_per_epoch
  OptimizerKind optimizer = OptimizerKind::sgd;
  double momentum = 0.9;  // only for sgd_momentum
  double weight_decay = 0.0;
  std::optional<double> clip_norm;
  std::uint64_t seed = 0;
  std::int64_t eval_every_epochs = 1;
  bool record_wall_time = false;
  std::string config_hash;  // provenance stamped into checkpoints

  OptimizerState make_optimizer() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

enum class MetaInit { uniform, zeros };

struct MetaTrainConfig {
  std::size_t hidden_size = mlrsnet::kDefaultHiddenSize;
  double gamma = 1.0;
  std::int64_t t_val = 10;  // meta update on steps t with (t + 1) % t_val == 0
  std::size_t val_batch_size = 100;
  double adam_lr = 1e-3;
  double adam_weight_decay = 1e-4;
  mlrsnet::LossNormalizer normalizer = mlrsnet::LossNormalizer::identity();
  MetaInit init = MetaInit::uniform;

  void validate() const;

  friend bool operator==(const MetaTrainConfig&, const MetaTrainConfig&) = default;
};

/// True when the meta-network is updated before the model update of step t.
inline bool meta_update_due(std::int64_t step, std::int64_t t_val) { return (step + 1) % t_val == 0; }

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-3;
  double weight_decay = 1e-4;
};

/// Bias-corrected Adam with decoupled weight decay:
/// theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta.
void adam_update(std::span<double> theta, std::span<const double> grad, AdamState& adam);

struct VirtualStep {
  LearnerModel w_hat;
  double alpha;
  mlrsnet::ForwardCache cache;
  std::vector<double> g_train;
  double train_loss;
};

/// Look-ahead model w - alpha(theta) * g_train, computed on a copy of the
/// meta-state so the caller's state is not advanced. No weight decay.
VirtualStep virtual_step(const LearnerModel& model, const MiniBatch& batch, const mlrsnet::Params& theta,
                         const mlrsnet::State& state, const mlrsnet::LossNormalizer& normalizer,
                         std::optional<double> clip_norm = std::nullopt);

/// d L_val(w - alpha(theta) g_train) / d theta = -(g_val . g_train) * d alpha / d theta.
std::vector<double> hypergradient(std::span<const double> g_train, std::span<const double> g_val,
                                  std::span<const double> dalpha_dtheta);

/// Central-difference check of the assembled hypergradient: theta ->
/// L_val(w - alpha(theta) g_train) evaluated in long double with step
/// eps * (1 + |theta_j|), g_train and the meta-state held fixed. Returns the
/// max relative error against hypergradient().
double hypergradient_check(const LearnerModel& model, const MiniBatch& train_batch, const MiniBatch& val_batch,
                           const mlrsnet::Params& theta, const mlrsnet::State& state,
                           const mlrsnet::LossNormalizer& normalizer, double eps = 1e-6);

struct MetaStepResult {
  double val_loss;  // validation batch loss at the look-ahead model
  std::vector<double> grad_theta;
  VirtualStep virtual_step;
};

/// One meta update of `theta` (in place) and `adam`. The model and the
/// persistent meta-state are left untouched.
MetaStepResult meta_step(const LearnerModel& model, mlrsnet::Params& theta, const mlrsnet::State& state,
                         AdamState& adam, const MiniBatch& train_batch, const MiniBatch& val_batch,
                         const mlrsnet::LossNormalizer& normalizer, std::optional<double> clip_norm = std::nullopt);

/// Thrown when a run hits a non-finite loss or gradient; carries the rows
/// recorded before the failure.
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, MetricsTable partial)
      : DivergenceError(what), partial_(std::move(partial)) {}
  const MetricsTable& partial_metrics() const noexcept { return partial_; }

 private:
  MetricsTable partial_;
};

struct MetaTrainResult {
  LearnerModel model;
  mlrsnet::Params theta;
  mlrsnet::State state;
  std::int64_t state_advances = 0;
  std::int64_t meta_updates = 0;
  std::vector<mlrsnet::Checkpoint> checkpoints;  // one per epoch
  MetricsTable metrics;
  std::int64_t step_time_ns = 0;  // excludes evaluation
};

struct ScheduleRunResult {
  LearnerModel model;
  MetricsTable metrics;
  std::int64_t step_time_ns = 0;
};

std::int64_t steps_per_epoch(std::size_t train_size, std::size_t batch_size);

/// The full meta-learning loop. `initial_theta` overrides `meta.init`.
MetaTrainResult train_mlrsnet(const TrainConfig& config, const MetaTrainConfig& meta, const TrainingData& data,
                              const Architecture& arch, std::optional<mlrsnet::Params> initial_theta = std::nullopt);

/// The same loop driven by a fixed schedule, without meta updates.
ScheduleRunResult train_with_schedule(const ScheduleSpec& spec, const TrainConfig& config, const TrainingData& data,
                                      const Architecture& arch,
                                      const mlrsnet::LossNormalizer& normalizer = mlrsnet::LossNormalizer::identity());

struct OverheadMeasurement {
  double ratio;              // median meta / median baseline per-step time
  double baseline_ns_per_step;
  double meta_ns_per_step;
  std::size_t samples;       // timed repetitions per arm
};

/// Per-step wall time with meta updates every `meta.t_val` steps relative to
/// the same loop with the meta-network frozen. One warm-up run per arm.
OverheadMeasurement measure_overhead(const TrainConfig& config, const MetaTrainConfig& meta, const TrainingData& data,
                                     const Architecture& arch, std::size_t repetitions = 5);

}  // namespace metasched
