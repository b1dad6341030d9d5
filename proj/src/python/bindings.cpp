#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "metasched/checkpoint.hpp"
#include "metasched/cli.hpp"
#include "metasched/config.hpp"
#include "metasched/errors.hpp"
#include "metasched/experiment.hpp"
#include "metasched/gradcheck.hpp"
#include "metasched/metrics.hpp"
#include "metasched/mlrsnet.hpp"
#include "metasched/schedules.hpp"
#include "metasched/transfer.hpp"

namespace py = pybind11;
using namespace metasched;

namespace {

mlrsnet::Params make_params(std::size_t hidden_size, double gamma, std::vector<double> theta) {
  return mlrsnet::Params(hidden_size, gamma, std::move(theta));
}

mlrsnet::State make_state(std::size_t hidden_size, const std::optional<std::vector<double>>& h,
                          const std::optional<std::vector<double>>& c) {
  auto state = mlrsnet::State::zeros(hidden_size);
  if (h) state.h = *h;
  if (c) state.c = *c;
  if (state.h.size() != hidden_size || state.c.size() != hidden_size) {
    throw DomainError("h and c must have hidden_size entries");
  }
  return state;
}

py::dict row_to_dict(const TrainStepRecord& r) {
  py::dict d;
  d["step"] = r.step;
  d["epoch"] = r.epoch;
  d["phase"] = r.phase == Phase::train ? "train" : "eval";
  d["lr"] = r.lr;
  d["train_loss"] = r.train_loss;
  d["val_loss"] = r.val_loss;
  d["test_loss"] = r.test_loss;
  d["test_acc"] = r.test_acc;
  d["wall_us"] = r.wall_us;
  return d;
}

py::list table_to_list(const MetricsTable& table) {
  py::list rows;
  for (const auto& r : table) rows.append(row_to_dict(r));
  return rows;
}

py::dict checkpoint_to_dict(const mlrsnet::Checkpoint& c) {
  py::dict d;
  d["format_version"] = c.format_version;
  d["hidden_size"] = c.params.hidden_size();
  d["gamma"] = c.params.gamma();
  d["theta"] = std::vector<double>(c.params.theta().begin(), c.params.theta().end());
  d["step"] = c.step;
  d["seed"] = c.seed;
  d["config_hash"] = c.config_hash;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Meta-learned learning-rate schedules (C++ core)";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IncompatibleVersionError>(m, "IncompatibleVersionError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

  m.attr("DEFAULT_HIDDEN_SIZE") = mlrsnet::kDefaultHiddenSize;
  m.attr("CHECKPOINT_FORMAT_VERSION") = mlrsnet::kCheckpointFormatVersion;

  m.def("param_count", &mlrsnet::parameter_count, py::arg("hidden_size"));

  m.def(
      "init_params",
      [](std::size_t hidden_size, double gamma, std::uint64_t seed) {
        RngStream rng(seed);
        const auto p = mlrsnet::init_params(hidden_size, gamma, rng);
        return std::vector<double>(p.theta().begin(), p.theta().end());
      },
      py::arg("hidden_size"), py::arg("gamma"), py::arg("seed"));

  m.def(
      "mlrsnet_forward",
      [](std::size_t hidden_size, double gamma, std::vector<double> theta, double loss,
         std::optional<std::vector<double>> h, std::optional<std::vector<double>> c) {
        const auto params = make_params(hidden_size, gamma, std::move(theta));
        const auto r = mlrsnet::forward(params, make_state(hidden_size, h, c), loss);
        return py::make_tuple(r.alpha, r.state.h, r.state.c);
      },
      py::arg("hidden_size"), py::arg("gamma"), py::arg("theta"), py::arg("loss"), py::arg("h") = py::none(),
      py::arg("c") = py::none(), "One recurrent step: (alpha, h, c).");

  m.def(
      "mlrsnet_backward_theta",
      [](std::size_t hidden_size, double gamma, std::vector<double> theta, double loss,
         std::optional<std::vector<double>> h, std::optional<std::vector<double>> c) {
        const auto params = make_params(hidden_size, gamma, std::move(theta));
        const auto state = make_state(hidden_size, h, c);
        const auto r = mlrsnet::forward(params, state, loss);
        return mlrsnet::backward_theta(params, state, r.cache);
      },
      py::arg("hidden_size"), py::arg("gamma"), py::arg("theta"), py::arg("loss"), py::arg("h") = py::none(),
      py::arg("c") = py::none(), "d alpha / d theta with the incoming state held fixed.");

  m.def(
      "schedule_lr",
      [](const std::string& schedule_json, std::int64_t step, std::int64_t steps_per_epoch) {
        const auto config = schedule_from_json(nlohmann::json::parse(schedule_json), ".");
        if (std::holds_alternative<FrozenCheckpoints>(config)) {
          throw ConfigError("schedule_lr takes closed-form schedules only");
        }
        const ScheduleSpec spec = resolve_schedule(config, step + 1, mlrsnet::LossNormalizer::identity());
        SchedulerRuntime rt;
        return lr_at(spec, rt, StepContext{step, step / steps_per_epoch, steps_per_epoch});
      },
      py::arg("schedule_json"), py::arg("step"), py::arg("steps_per_epoch"),
      "Learning rate of a closed-form schedule (JSON, as in config files) at a step.");

  m.def("select_checkpoint_epochs", &select_checkpoint_epochs, py::arg("epochs"), py::arg("k"));

  m.def(
      "transfer_boundaries",
      [](std::size_t k, std::int64_t total_steps) {
        std::vector<mlrsnet::Checkpoint> nets(k, mlrsnet::Checkpoint{mlrsnet::kCheckpointFormatVersion,
                                                                     mlrsnet::Params::zeros(1, 1.0), 0, 0, ""});
        return build_transfer_plan(std::move(nets), total_steps).boundaries;
      },
      py::arg("k"), py::arg("total_steps"));

  m.def(
      "run_experiment",
      [](const std::string& config_json, std::uint64_t seed, const std::filesystem::path& base_dir) {
        ExperimentConfig config;
        RunOutcome outcome;
        {
          py::gil_scoped_release release;
          config = parse_config(config_json, base_dir);
          outcome = run_experiment(config, seed);
        }
        py::dict d;
        d["seed"] = outcome.seed;
        d["config_hash"] = outcome.config_hash;
        d["metrics"] = table_to_list(outcome.metrics);
        d["metrics_csv"] = to_csv(outcome.metrics);
        py::list checkpoints;
        for (const auto& c : outcome.checkpoints) checkpoints.append(checkpoint_to_dict(c));
        d["checkpoints"] = checkpoints;
        d["diverged"] = outcome.diverged;
        d["diagnostic"] = outcome.diagnostic;
        return d;
      },
      py::arg("config_json"), py::arg("seed"), py::arg("base_dir") = std::filesystem::path("."),
      "Runs one experiment config (JSON text) with the given training seed.");

  m.def(
      "gradcheck",
      [](std::size_t instances, std::uint64_t seed) {
        std::vector<GradcheckResult> results;
        {
          py::gil_scoped_release release;
          results = run_gradcheck_suites(instances, seed);
        }
        py::list out;
        for (const auto& r : results) out.append(py::make_tuple(r.name, r.instances, r.max_rel_error));
        return out;
      },
      py::arg("instances") = 3, py::arg("seed") = 0, "(suite, instances, max relative error) per suite.");

  m.def(
      "load_checkpoint", [](const std::filesystem::path& path) { return checkpoint_to_dict(mlrsnet::load_checkpoint(path)); },
      py::arg("path"));

  m.def(
      "parse_metrics_csv", [](const std::string& text) { return table_to_list(parse_csv(text)); }, py::arg("text"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line tool in-process: (exit code, stdout, stderr).");
}
