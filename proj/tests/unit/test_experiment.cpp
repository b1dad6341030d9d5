#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "metasched/errors.hpp"
#include "metasched/experiment.hpp"
#include "metasched/io.hpp"

using namespace metasched;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("metasched_experiment_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json small_config() {
  return json{{"name", "small"},
              {"dataset", {{"n_train", 128}, {"n_test", 60}, {"dim", 4}, {"classes", 2}, {"seed", 5}}},
              {"model", {{"hidden", {8}}}},
              {"training", {{"epochs", 3}, {"batch_size", 32}}},
              {"meta", {{"hidden_size", 4}, {"t_val", 2}, {"val_batch_size", 10}}},
              {"seeds", {1, 2}}};
}

MetricsTable eval_table(std::initializer_list<std::pair<double, double>> acc_and_val) {
  MetricsTable t;
  std::int64_t epoch = 0;
  for (const auto& [acc, val] : acc_and_val) {
    t.push_back({epoch * 4, epoch, Phase::eval, {}, 1.0, val, 1.0, acc, 0});
    ++epoch;
  }
  return t;
}

}  // namespace

TEST_CASE("summarize recomputed by hand") {
  std::vector<LabeledRun> runs;
  runs.push_back({"a", eval_table({{0.1, 9.0}, {0.5, 2.0}, {0.7, 1.0}, {0.6, 0.5}}), false});
  runs.push_back({"b", eval_table({{0.9, 9.0}, {0.2, 3.0}}), false});
  runs.push_back({"a", eval_table({{0.2, 9.0}, {0.8, 1.5}, {0.4, 0.25}}), false});
  runs.push_back({"a", eval_table({{0.2, 9.0}, {0.3, 1.0}, {0.5, 0.75}}), true});
  const auto s = summarize(runs);
  REQUIRE(s.size() == 2);
  CHECK(s[0].label == "a");
  CHECK(s[0].runs == 3);
  CHECK(s[0].diverged == 1);
  // best {0.7, 0.8, 0.5}, last {0.6, 0.4, 0.5}, final val {0.5, 0.25, 0.75}
  CHECK(s[0].best_acc_mean == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(s[0].best_acc_std == doctest::Approx(std::sqrt(((0.7 - 2.0 / 3) * (0.7 - 2.0 / 3) + (0.8 - 2.0 / 3) * (0.8 - 2.0 / 3) +
                                                         (0.5 - 2.0 / 3) * (0.5 - 2.0 / 3)) /
                                                        2.0))
                                 .epsilon(1e-12));
  CHECK(s[0].last_acc_mean == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(s[0].last_acc_std == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(s[0].final_val_loss_mean == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(s[0].final_val_loss_std == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s[1].label == "b");
  CHECK(s[1].runs == 1);
  CHECK(s[1].best_acc_mean == 0.2);
  CHECK(s[1].best_acc_std == 0.0);
  CHECK(s[1].final_val_loss_mean == 3.0);

  const std::string csv = summary_csv(s);
  CHECK(csv.starts_with(std::string(kSummaryHeader) + "\na,3,1,"));
  CHECK(summary_table(s).find("(diverged runs)") != std::string::npos);
}

TEST_CASE("plot rows carry the latest eval forward") {
  MetricsTable t;
  t.push_back({0, 0, Phase::eval, {}, 1.0, 0.9, 1.0, 0.5, 0});
  t.push_back({0, 0, Phase::train, 0.1, 2.0, {}, {}, {}, 0});
  t.push_back({1, 0, Phase::train, 0.2, 1.5, 0.7, {}, {}, 0});
  t.push_back({2, 1, Phase::eval, {}, 1.0, 0.4, 1.0, 0.75, 0});
  t.push_back({2, 1, Phase::train, 0.25, 1.25, {}, {}, {}, 0});
  CHECK(plot_csv(t) == std::string(kPlotHeader) + "\n0,0.1,2,0.9,0.5\n1,0.2,1.5,0.9,0.5\n2,0.25,1.25,0.4,0.75\n");
  MetricsTable no_eval;
  no_eval.push_back({0, 0, Phase::train, 0.1, 2.0, {}, {}, {}, 0});
  CHECK(plot_csv(no_eval) == std::string(kPlotHeader) + "\n0,0.1,2,,\n");
}

TEST_CASE("meta run artifacts") {
  const auto dir = scratch("artifacts");
  const auto config = experiment_from_json(small_config(), dir);
  const auto outcome = run_experiment(config, 1);
  CHECK_FALSE(outcome.diverged);
  CHECK(outcome.checkpoints.size() == 3);
  write_run(outcome, config, dir / "run");
  CHECK(read_metrics(dir / "run" / "metrics.csv") == outcome.metrics);
  CHECK(load_config(dir / "run" / "config.json") == config);
  const auto loaded = load_checkpoint_dir(dir / "run" / "checkpoints");
  CHECK(loaded == outcome.checkpoints);
  CHECK(loaded[0].config_hash == config_hash(config, 1));

  SUBCASE("reruns are byte-identical") {
    write_run(run_experiment(config, 1), config, dir / "again");
    CHECK(read_file(dir / "run" / "metrics.csv") == read_file(dir / "again" / "metrics.csv"));
    for (std::int64_t e = 1; e <= 3; ++e) {
      const auto name = checkpoint_file_name(e);
      CHECK(read_file(dir / "run" / "checkpoints" / name) == read_file(dir / "again" / "checkpoints" / name));
    }
  }
  SUBCASE("a gap in the epochs is rejected") {
    fs::remove(dir / "run" / "checkpoints" / checkpoint_file_name(2));
    CHECK_THROWS_AS(load_checkpoint_dir(dir / "run" / "checkpoints"), ConfigError);
  }
  SUBCASE("transfer from the run") {
    auto j = small_config();
    j["method"] = "transfer";
    j["transfer"] = {{"source_dir", "run/checkpoints"}, {"k", 2}};
    const auto t = run_experiment(experiment_from_json(j, dir), 1);
    CHECK_FALSE(t.diverged);
    CHECK(t.checkpoints.empty());
    for (const auto& row : t.metrics) {
      if (row.phase == Phase::train) CHECK((*row.lr > 0.0 && *row.lr < 1.0));
    }
  }
  SUBCASE("frozen schedule from checkpoint files") {
    auto j = small_config();
    j["method"] = "schedule";
    j["schedule"] = {{"kind", "frozen-meta"},
                     {"checkpoints", {"run/checkpoints/epoch_0001.json", "run/checkpoints/epoch_0003.json"}}};
    auto c = experiment_from_json(j, dir);
    const auto frozen = run_experiment(c, 1);
    j["method"] = "transfer";
    j.erase("schedule");
    j["transfer"] = {{"source_dir", "run/checkpoints"}, {"k", 2}};
    const auto transferred = run_experiment(experiment_from_json(j, dir), 1);
    CHECK(to_csv(frozen.metrics) == to_csv(transferred.metrics));
  }
  CHECK_THROWS_AS(load_checkpoint_dir(dir / "nowhere"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("diverging runs keep their partial metrics") {
  auto j = small_config();
  j["method"] = "schedule";
  j["schedule"] = {{"kind", "fixed"}, {"lr", 1e300}};
  const auto outcome = run_experiment(experiment_from_json(j, "/tmp"), 1);
  CHECK(outcome.diverged);
  CHECK_FALSE(outcome.diagnostic.empty());
  CHECK_FALSE(outcome.metrics.empty());
}

TEST_CASE("METASCHED_THREADS") {
  ::unsetenv("METASCHED_THREADS");
  CHECK(threads_from_env() == 1);
  ::setenv("METASCHED_THREADS", "4", 1);
  CHECK(threads_from_env() == 4);
  ::setenv("METASCHED_THREADS", "0", 1);
  CHECK_THROWS_AS(threads_from_env(), ConfigError);
  ::setenv("METASCHED_THREADS", "two", 1);
  CHECK_THROWS_AS(threads_from_env(), ConfigError);
  ::unsetenv("METASCHED_THREADS");
}

TEST_CASE("compare output does not depend on the worker count") {
  const auto dir = scratch("compare");
  json grid{{"base", small_config()},
            {"seeds", {1, 2, 3}},
            {"methods",
             {{{"label", "meta"}},
              {{"label", "fixed"}, {"overrides", {{"method", "schedule"}, {"schedule", {{"kind", "fixed"}, {"lr", 0.1}}}}}},
              {{"label", "sgdr"},
               {"overrides", {{"method", "schedule"}, {"schedule", {{"kind", "sgdr"}, {"t0", 1}, {"t_mult", 2}}}}}}}}};
  const auto g = parse_grid(grid.dump(), dir);
  const auto serial = run_compare(g, dir / "serial", 1);
  const auto parallel = run_compare(g, dir / "parallel", 4);
  REQUIRE(serial.size() == 3);
  CHECK(serial[0].label == "meta");
  CHECK(serial[0].runs == 3);
  CHECK(read_file(dir / "serial" / "summary.csv") == read_file(dir / "parallel" / "summary.csv"));
  for (const char* label : {"meta", "fixed", "sgdr"}) {
    for (const char* seed : {"seed_1", "seed_2", "seed_3"}) {
      CHECK(read_file(dir / "serial" / label / seed / "metrics.csv") ==
            read_file(dir / "parallel" / label / seed / "metrics.csv"));
    }
  }
  std::vector<LabeledRun> recomputed;
  for (const auto& entry : g.entries) {
    for (const auto seed : g.seeds) {
      recomputed.push_back(
          {entry.label, read_metrics(dir / "serial" / entry.label / ("seed_" + std::to_string(seed)) / "metrics.csv"),
           false});
    }
  }
  CHECK(summary_csv(summarize(recomputed)) == read_file(dir / "serial" / "summary.csv"));
  fs::remove_all(dir);
}
