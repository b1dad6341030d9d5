#include "metasched/schedules.hpp"

#include <cmath>
#include <numbers>

namespace metasched {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

void validate(const ScheduleSpec& spec) {
  std::visit(overloaded{
                 [](const FixedLr& s) { require(s.lr >= 0.0 && std::isfinite(s.lr), "fixed: lr must be >= 0"); },
                 [](const ExponentialLr& s) {
                   require(s.lr0 > 0.0, "exponential: lr0 must be > 0");
                   require(s.rate > 0.0, "exponential: rate must be > 0");
                 },
                 [](const MultiStepLr& s) {
                   require(s.lr0 > 0.0, "multistep: lr0 must be > 0");
                   require(s.period_epochs >= 1, "multistep: period must be >= 1 epoch");
                   require(s.factor > 0.0 && s.factor < 1.0, "multistep: factor must lie in (0, 1)");
                 },
                 [](const SgdrLr& s) {
                   require(s.eta_max > 0.0 && s.eta_min > 0.0, "sgdr: learning rates must be > 0");
                   require(s.eta_min <= s.eta_max, "sgdr: eta_min must not exceed eta_max");
                   require(s.t0 >= 1 && s.t_mult >= 1, "sgdr: t0 and t_mult must be >= 1");
                 },
                 [](const HypergradientLr& s) {
                   require(s.alpha0 > 0.0, "hd: alpha0 must be > 0");
                   require(s.hyper_lr > 0.0, "hd: hyper_lr must be > 0");
                 },
                 [](const FrozenMetaNetLr& s) {
                   require(!s.nets.empty(), "frozen meta-net schedule has no checkpoints");
                   for (const auto& net : s.nets) {
                     require(net.hidden_size() == s.nets.front().hidden_size(),
                             "frozen meta-net checkpoints disagree on hidden size");
                   }
                   if (s.nets.size() > 1) {
                     require(s.boundaries.size() == s.nets.size() + 1,
                             "frozen meta-net schedule needs k+1 segment boundaries");
                     require(s.boundaries.front() == 0, "first segment must start at step 0");
                     for (std::size_t i = 1; i < s.boundaries.size(); ++i) {
                       require(s.boundaries[i] > s.boundaries[i - 1], "segment boundaries must increase");
                     }
                   }
                   if (s.gamma_override) require(*s.gamma_override > 0.0, "gamma override must be > 0");
                 },
             },
             spec);
}

std::string schedule_name(const ScheduleSpec& spec) {
  return std::visit(overloaded{
                        [](const FixedLr&) { return std::string("fixed"); },
                        [](const ExponentialLr&) { return std::string("exponential"); },
                        [](const MultiStepLr&) { return std::string("multistep"); },
                        [](const SgdrLr&) { return std::string("sgdr"); },
                        [](const HypergradientLr&) { return std::string("hd"); },
                        [](const FrozenMetaNetLr&) { return std::string("frozen-meta"); },
                    },
                    spec);
}

double sgdr_lr(double t_cur, double t_i, double eta_min, double eta_max) {
  return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(std::numbers::pi * t_cur / t_i));
}

SgdrPosition sgdr_position(double epoch, std::int64_t t0, std::int64_t t_mult) {
  double start = 0.0;
  auto period = static_cast<double>(t0);
  while (epoch >= start + period) {
    start += period;
    period *= static_cast<double>(t_mult);
  }
  return {epoch - start, period};
}

double hd_update(double alpha_prev, std::span<const double> g_t, std::span<const double> g_prev, double hyper_lr) {
  const double next = alpha_prev + hyper_lr * dot(g_t, g_prev);
  return next > 0.0 ? next : 0.0;
}

double frozen_meta_lr(const FrozenMetaNetLr& spec, SchedulerRuntime& runtime, std::int64_t step,
                      double observed_loss) {
  if (spec.nets.empty()) throw ConfigError("frozen meta-net schedule has no checkpoints");
  if (!std::isfinite(observed_loss)) throw DomainError("frozen meta-net: observed loss is not finite");

  std::size_t active = 0;
  if (spec.nets.size() > 1) {
    while (active + 1 < spec.nets.size() && step >= spec.boundaries[active + 1]) ++active;
  }
  const std::size_t hidden = spec.nets[active].hidden_size();
  if (!runtime.meta_state || (spec.reset_state_on_switch && active != runtime.active_net)) {
    runtime.meta_state = mlrsnet::State::zeros(hidden);
  }
  runtime.active_net = active;

  const mlrsnet::Params* net = &spec.nets[active];
  mlrsnet::Params scaled = *net;
  if (spec.gamma_override) {
    scaled.set_gamma(*spec.gamma_override);
    net = &scaled;
  }
  mlrsnet::StepResult result = mlrsnet::forward(*net, *runtime.meta_state, spec.normalizer(observed_loss));
  runtime.meta_state = std::move(result.state);
  ++runtime.meta_advances;
  return result.alpha;
}

double lr_at(const ScheduleSpec& spec, SchedulerRuntime& runtime, const StepContext& ctx,
             std::optional<double> observed_loss, std::span<const double> observed_grad) {
  return std::visit(
      overloaded{
          [](const FixedLr& s) { return s.lr; },
          [&](const ExponentialLr& s) { return s.lr0 * std::pow(s.rate, static_cast<double>(ctx.epoch)); },
          [&](const MultiStepLr& s) {
            return s.lr0 * std::pow(s.factor, static_cast<double>(ctx.epoch / s.period_epochs));
          },
          [&](const SgdrLr& s) {
            const double epoch = static_cast<double>(ctx.step) / static_cast<double>(ctx.steps_per_epoch);
            const SgdrPosition pos = sgdr_position(epoch, s.t0, s.t_mult);
            runtime.sgdr_t_cur = pos.t_cur;
            runtime.sgdr_t_i = pos.t_i;
            return sgdr_lr(pos.t_cur, pos.t_i, s.eta_min, s.eta_max);
          },
          [&](const HypergradientLr& s) {
            double alpha = runtime.hd_alpha.value_or(s.alpha0);
            if (!observed_grad.empty() && runtime.previous_grad.size() == observed_grad.size()) {
              alpha = hd_update(alpha, observed_grad, runtime.previous_grad, s.hyper_lr);
            }
            runtime.hd_alpha = alpha;
            runtime.previous_grad.assign(observed_grad.begin(), observed_grad.end());
            return alpha;
          },
          [&](const FrozenMetaNetLr& s) {
            if (!observed_loss) throw UsageError("frozen meta-net schedule needs the observed training loss");
            return frozen_meta_lr(s, runtime, ctx.step, *observed_loss);
          },
      },
      spec);
}

}  // namespace metasched
