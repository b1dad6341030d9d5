#include "metasched/metatrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace metasched {

namespace {

// Independent RNG streams derived from TrainConfig::seed.
constexpr std::uint64_t kModelInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kValSampleStream = 3;
constexpr std::uint64_t kMetaInitStream = 4;

using Clock = std::chrono::steady_clock;

VirtualStep virtual_step_from_grads(const LearnerModel& model, std::vector<double> g_train, double train_loss,
                                    const mlrsnet::Params& theta, const mlrsnet::State& state,
                                    const mlrsnet::LossNormalizer& normalizer) {
  const mlrsnet::State scratch = state;
  mlrsnet::StepResult step = mlrsnet::forward(theta, scratch, normalizer(train_loss));
  std::vector<double> w(model.params().begin(), model.params().end());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step.alpha * g_train[i];
  return VirtualStep{LearnerModel(model.architecture(), std::move(w)), step.alpha, std::move(step.cache),
                     std::move(g_train), train_loss};
}

MetaStepResult meta_step_from_virtual(VirtualStep virt, mlrsnet::Params& theta, const mlrsnet::State& state,
                                      AdamState& adam, const MiniBatch& val_batch) {
  const LossResult val = forward_loss(virt.w_hat, val_batch);
  if (!std::isfinite(val.mean_loss)) throw DivergenceError("meta step: validation loss is not finite");
  const std::vector<double> g_val = backward(virt.w_hat, val.cache);
  const std::vector<double> dalpha = mlrsnet::backward_theta(theta, state, virt.cache);
  std::vector<double> grad_theta = hypergradient(virt.g_train, g_val, dalpha);
  adam_update(theta.mutable_theta(), grad_theta, adam);
  if (!all_finite(theta.theta())) throw DivergenceError("meta step: meta-net parameters became non-finite");
  return MetaStepResult{val.mean_loss, std::move(grad_theta), std::move(virt)};
}

void check_data(const TrainingData& data, const Architecture& arch) {
  if (data.train.size() == 0) throw ConfigError("training split is empty");
  data.train.validate(arch.num_classes());
  if (data.train.dim() != arch.input_dim()) throw ConfigError("training data dimension does not match the model");
}

Dataset sample_without_replacement(const Dataset& data, std::size_t count, RngStream& rng) {
  if (count >= data.size()) return data;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(data.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return data.subset(idx);
}

struct LoopOutput {
  LearnerModel model;
  MetricsTable metrics;
  std::int64_t step_time_ns;
};

// Shared driver for scheduled and meta-learned runs. `policy.learning_rate`
// picks the step's LR (and may perform a meta update); `policy.epoch_end` is
// called after each epoch, including a trailing partial one.
template <typename Policy>
LoopOutput run_loop(const TrainConfig& config, const TrainingData& data, const Architecture& arch, Policy& policy) {
  check_data(data, arch);
  if (config.batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (config.eval_every_epochs < 1) throw ConfigError("eval cadence must be >= 1 epoch");

  const RngStream root(config.seed);
  RngStream init_rng = root.fork(kModelInitStream);
  RngStream shuffle_rng = root.fork(kShuffleStream);
  LearnerModel model = LearnerModel::initialize(arch, init_rng);
  OptimizerState opt = config.make_optimizer();

  const std::int64_t per_epoch = steps_per_epoch(data.train.size(), config.batch_size);
  const std::int64_t total = config.max_steps.value_or(config.epochs * per_epoch);
  if (total < 0) throw ConfigError("number of steps must be >= 0");

  MetricsTable metrics;
  const auto start = Clock::now();
  const auto elapsed_us = [&] {
    if (!config.record_wall_time) return std::int64_t{0};
    return static_cast<std::int64_t>(
        std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - start).count());
  };
  const auto eval_row = [&](std::int64_t step, std::int64_t epoch) {
    TrainStepRecord row;
    row.step = step;
    row.epoch = epoch;
    row.phase = Phase::eval;
    row.train_loss = evaluate(model, data.train).mean_loss;
    if (data.val.size() > 0) row.val_loss = evaluate(model, data.val).mean_loss;
    if (data.test.size() > 0) {
      const Evaluation test = evaluate(model, data.test);
      row.test_loss = test.mean_loss;
      row.test_acc = test.accuracy;
    }
    row.wall_us = elapsed_us();
    return row;
  };

  metrics.push_back(eval_row(0, 0));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t step_time_ns = 0;

  for (std::int64_t t = 0; t < total; ++t) {
    const std::int64_t epoch = t / per_epoch;
    const auto in_epoch = static_cast<std::size_t>(t % per_epoch);
    if (in_epoch == 0) shuffle_rng.shuffle(std::span<std::size_t>(order));
    const std::size_t first = in_epoch * config.batch_size;
    const std::size_t last = std::min(order.size(), first + config.batch_size);
    const MiniBatch batch = data.train.subset(std::span<const std::size_t>(order).subspan(first, last - first));

    const auto step_start = Clock::now();
    const LossResult fwd = forward_loss(model, batch);
    if (!std::isfinite(fwd.mean_loss)) {
      throw TrainingDiverged("training loss became non-finite at step " + std::to_string(t), metrics);
    }
    std::vector<double> grads = backward(model, fwd.cache);
    if (config.clip_norm) clip_grad_norm_inplace(grads, *config.clip_norm);

    TrainStepRecord row;
    row.step = t;
    row.epoch = epoch;
    row.train_loss = fwd.mean_loss;
    const StepContext ctx{t, epoch, per_epoch};
    double lr = 0.0;
    try {
      lr = policy.learning_rate(ctx, model, batch, fwd.mean_loss, grads, row);
      sgd_step(model, grads, lr, opt);
    } catch (const DivergenceError& e) {
      throw TrainingDiverged(std::string(e.what()) + " (step " + std::to_string(t) + ")", metrics);
    }
    step_time_ns += std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - step_start).count();
    row.lr = lr;
    row.wall_us = elapsed_us();
    metrics.push_back(row);

    if ((t + 1) % per_epoch == 0 || t + 1 == total) {
      const std::int64_t completed = epoch + 1;
      policy.epoch_end(completed, t + 1);
      if (completed % config.eval_every_epochs == 0 || t + 1 == total) metrics.push_back(eval_row(t + 1, completed));
    }
  }
  return LoopOutput{std::move(model), std::move(metrics), step_time_ns};
}

class ScheduledPolicy {
 public:
  ScheduledPolicy(const ScheduleSpec& spec, mlrsnet::LossNormalizer normalizer) : spec_(spec) {
    if (auto* frozen = std::get_if<FrozenMetaNetLr>(&spec_)) frozen->normalizer = normalizer;
  }

  double learning_rate(const StepContext& ctx, const LearnerModel&, const MiniBatch&, double loss,
                       std::span<const double> grads, TrainStepRecord&) {
    return lr_at(spec_, runtime_, ctx, loss, grads);
  }
  void epoch_end(std::int64_t, std::int64_t) {}

 private:
  ScheduleSpec spec_;
  SchedulerRuntime runtime_;
};

class MetaPolicy {
 public:
  MetaPolicy(const TrainConfig& config, const MetaTrainConfig& meta, const TrainingData& data, mlrsnet::Params theta)
      : config_(config),
        meta_(meta),
        val_(data.val),
        val_rng_(RngStream(config.seed).fork(kValSampleStream)),
        theta_(std::move(theta)),
        state_(mlrsnet::State::zeros(theta_.hidden_size())) {
    adam_.lr = meta.adam_lr;
    adam_.weight_decay = meta.adam_weight_decay;
  }

  double learning_rate(const StepContext& ctx, const LearnerModel& model, const MiniBatch&, double loss,
                       std::span<const double> grads, TrainStepRecord& row) {
    if (meta_update_due(ctx.step, meta_.t_val)) {
      const Dataset val_batch = sample_without_replacement(val_, meta_.val_batch_size, val_rng_);
      VirtualStep virt = virtual_step_from_grads(model, std::vector<double>(grads.begin(), grads.end()), loss,
                                                 theta_, state_, meta_.normalizer);
      const MetaStepResult result = meta_step_from_virtual(std::move(virt), theta_, state_, adam_, val_batch);
      row.val_loss = result.val_loss;
      ++meta_updates_;
    }
    mlrsnet::StepResult step = mlrsnet::forward(theta_, state_, meta_.normalizer(loss));
    state_ = std::move(step.state);
    ++advances_;
    return step.alpha;
  }

  void epoch_end(std::int64_t, std::int64_t step) {
    checkpoints_.push_back(mlrsnet::Checkpoint{mlrsnet::kCheckpointFormatVersion, theta_, step, config_.seed,
                                               config_.config_hash});
  }

  const TrainConfig& config_;
  const MetaTrainConfig& meta_;
  const Dataset& val_;
  RngStream val_rng_;
  mlrsnet::Params theta_;
  mlrsnet::State state_;
  AdamState adam_;
  std::int64_t advances_ = 0;
  std::int64_t meta_updates_ = 0;
  std::vector<mlrsnet::Checkpoint> checkpoints_;
};

}  // namespace

// ---------------------------------------------------------------------------

OptimizerState TrainConfig::make_optimizer() const {
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (optimizer == OptimizerKind::sgd) return OptimizerState::sgd(weight_decay);
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  return OptimizerState::sgd_momentum(momentum, weight_decay);
}

void MetaTrainConfig::validate() const {
  if (hidden_size < 1) throw ConfigError("meta-net hidden size must be >= 1");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  if (t_val < 1) throw ConfigError("t_val must be >= 1");
  if (val_batch_size < 1) throw ConfigError("validation batch size must be >= 1");
  if (!(adam_lr > 0.0)) throw ConfigError("adam lr must be > 0");
  if (!(adam_weight_decay >= 0.0)) throw ConfigError("adam weight decay must be >= 0");
}

std::int64_t steps_per_epoch(std::size_t train_size, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  return static_cast<std::int64_t>((train_size + batch_size - 1) / batch_size);
}

void adam_update(std::span<double> theta, std::span<const double> grad, AdamState& adam) {
  if (theta.size() != grad.size()) throw DomainError("adam_update: gradient shape mismatch");
  if (adam.m.empty()) {
    adam.m.assign(theta.size(), 0.0);
    adam.v.assign(theta.size(), 0.0);
  }
  if (adam.m.size() != theta.size()) throw DomainError("adam_update: moment shape mismatch");
  ++adam.t;
  const double correction1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.t));
  const double correction2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    adam.m[i] = adam.beta1 * adam.m[i] + (1.0 - adam.beta1) * grad[i];
    adam.v[i] = adam.beta2 * adam.v[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
    const double m_hat = adam.m[i] / correction1;
    const double v_hat = adam.v[i] / correction2;
    theta[i] -= adam.lr * m_hat / (std::sqrt(v_hat) + adam.eps) + adam.lr * adam.weight_decay * theta[i];
  }
}

VirtualStep virtual_step(const LearnerModel& model, const MiniBatch& batch, const mlrsnet::Params& theta,
                         const mlrsnet::State& state, const mlrsnet::LossNormalizer& normalizer,
                         std::optional<double> clip_norm) {
  const LossResult fwd = forward_loss(model, batch);
  if (!std::isfinite(fwd.mean_loss)) throw DivergenceError("virtual step: training loss is not finite");
  std::vector<double> grads = backward(model, fwd.cache);
  if (clip_norm) clip_grad_norm_inplace(grads, *clip_norm);
  return virtual_step_from_grads(model, std::move(grads), fwd.mean_loss, theta, state, normalizer);
}

std::vector<double> hypergradient(std::span<const double> g_train, std::span<const double> g_val,
                                  std::span<const double> dalpha_dtheta) {
  if (g_train.size() != g_val.size()) throw DomainError("hypergradient: gradient length mismatch");
  const double scale = -dot(g_val, g_train);
  std::vector<double> out(dalpha_dtheta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * dalpha_dtheta[i];
  return out;
}

double hypergradient_check(const LearnerModel& model, const MiniBatch& train_batch, const MiniBatch& val_batch,
                           const mlrsnet::Params& theta, const mlrsnet::State& state,
                           const mlrsnet::LossNormalizer& normalizer, double eps) {
  if (!(eps > 0.0)) throw DomainError("hypergradient_check: eps must be positive");
  const VirtualStep virt = virtual_step(model, train_batch, theta, state, normalizer);
  const LossResult val = forward_loss(virt.w_hat, val_batch);
  const std::vector<double> g_val = backward(virt.w_hat, val.cache);
  const std::vector<double> analytic =
      hypergradient(virt.g_train, g_val, mlrsnet::backward_theta(theta, state, virt.cache));

  const Architecture& arch = model.architecture();
  const auto w = model.params();
  const auto loss_in = static_cast<long double>(normalizer(virt.train_loss));
  const auto gamma = static_cast<long double>(theta.gamma());
  std::vector<long double> th(theta.theta().begin(), theta.theta().end());
  std::vector<long double> w_hat(w.size());
  const auto val_loss_at = [&]() {
    const long double alpha = mlrsnet::alpha_value<long double>(theta.hidden_size(), gamma, th, state.h, state.c, loss_in);
    for (std::size_t i = 0; i < w.size(); ++i) w_hat[i] = w[i] - alpha * virt.g_train[i];
    return mean_loss<long double>(arch, w_hat, val_batch);
  };
  std::vector<double> numeric(th.size());
  for (std::size_t j = 0; j < th.size(); ++j) {
    const long double original = th[j];
    const long double h = eps * (1.0L + std::fabs(original));
    th[j] = original + h;
    const long double up = val_loss_at();
    th[j] = original - h;
    const long double down = val_loss_at();
    th[j] = original;
    numeric[j] = static_cast<double>((up - down) / (2.0L * h));
  }
  return max_relative_error(analytic, numeric);
}

MetaStepResult meta_step(const LearnerModel& model, mlrsnet::Params& theta, const mlrsnet::State& state,
                         AdamState& adam, const MiniBatch& train_batch, const MiniBatch& val_batch,
                         const mlrsnet::LossNormalizer& normalizer, std::optional<double> clip_norm) {
  VirtualStep virt = virtual_step(model, train_batch, theta, state, normalizer, clip_norm);
  return meta_step_from_virtual(std::move(virt), theta, state, adam, val_batch);
}

MetaTrainResult train_mlrsnet(const TrainConfig& config, const MetaTrainConfig& meta, const TrainingData& data,
                              const Architecture& arch, std::optional<mlrsnet::Params> initial_theta) {
  meta.validate();
  if (data.val.size() == 0) throw ConfigError("meta-training needs a non-empty validation split");
  data.val.validate(arch.num_classes());

  mlrsnet::Params theta = [&] {
    if (initial_theta) return std::move(*initial_theta);
    if (meta.init == MetaInit::zeros) return mlrsnet::Params::zeros(meta.hidden_size, meta.gamma);
    RngStream rng = RngStream(config.seed).fork(kMetaInitStream);
    return mlrsnet::init_params(meta.hidden_size, meta.gamma, rng);
  }();

  MetaPolicy policy(config, meta, data, std::move(theta));
  LoopOutput out = run_loop(config, data, arch, policy);
  return MetaTrainResult{std::move(out.model),          std::move(policy.theta_),
                         std::move(policy.state_),       policy.advances_,
                         policy.meta_updates_,           std::move(policy.checkpoints_),
                         std::move(out.metrics),         out.step_time_ns};
}

ScheduleRunResult train_with_schedule(const ScheduleSpec& spec, const TrainConfig& config, const TrainingData& data,
                                      const Architecture& arch, const mlrsnet::LossNormalizer& normalizer) {
  validate(spec);
  ScheduledPolicy policy(spec, normalizer);
  LoopOutput out = run_loop(config, data, arch, policy);
  return ScheduleRunResult{std::move(out.model), std::move(out.metrics), out.step_time_ns};
}

OverheadMeasurement measure_overhead(const TrainConfig& config, const MetaTrainConfig& meta, const TrainingData& data,
                                     const Architecture& arch, std::size_t repetitions) {
  if (repetitions == 0) throw ConfigError("measure_overhead needs at least one repetition");
  TrainConfig timed = config;
  timed.eval_every_epochs = std::numeric_limits<std::int64_t>::max();
  MetaTrainConfig frozen = meta;
  frozen.t_val = std::numeric_limits<std::int64_t>::max();

  const auto per_step_ns = [&](const MetaTrainConfig& m) {
    const MetaTrainResult r = train_mlrsnet(timed, m, data, arch);
    const auto steps = static_cast<double>(std::max<std::int64_t>(1, r.state_advances));
    return static_cast<double>(r.step_time_ns) / steps;
  };

  per_step_ns(frozen);
  per_step_ns(meta);
  std::vector<double> base;
  std::vector<double> with_meta;
  for (std::size_t i = 0; i < repetitions; ++i) {
    base.push_back(per_step_ns(frozen));
    with_meta.push_back(per_step_ns(meta));
  }
  const auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  };
  const double b = median(base);
  const double m = median(with_meta);
  return OverheadMeasurement{m / b, b, m, repetitions};
}

}  // namespace metasched
