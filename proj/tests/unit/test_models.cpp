#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "metasched/models.hpp"
#include "support/oracles.hpp"

using namespace metasched;

namespace {

MiniBatch random_batch(RngStream& rng, std::size_t n, std::size_t d, std::size_t classes) {
  MiniBatch b;
  b.inputs = rng_draws(rng, n, d, Distribution::normal);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<std::size_t>(rng.uniform_index(classes)));
  return b;
}

std::vector<std::vector<double>> rows_of(const MiniBatch& b) {
  std::vector<std::vector<double>> xs;
  for (std::size_t s = 0; s < b.size(); ++s) xs.emplace_back(b.inputs.row(s).begin(), b.inputs.row(s).end());
  return xs;
}

// Central differences of the test-side loss oracle in long double.
std::vector<double> oracle_gradient(const LearnerModel& model, const MiniBatch& batch) {
  const auto& widths = model.architecture().widths();
  const auto xs = rows_of(batch);
  std::vector<long double> p(model.params().begin(), model.params().end());
  std::vector<double> out(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    const long double h = 1e-6L * (1.0L + std::fabs(p[j]));
    const long double keep = p[j];
    p[j] = keep + h;
    const long double up = oracle::learner_loss<long double>(widths, p, xs, batch.labels);
    p[j] = keep - h;
    const long double down = oracle::learner_loss<long double>(widths, p, xs, batch.labels);
    p[j] = keep;
    out[j] = static_cast<double>((up - down) / (2 * h));
  }
  return out;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / (std::abs(a[i]) + std::abs(b[i]) + 1e-12));
  }
  return worst;
}

}  // namespace

TEST_CASE("architecture layout") {
  const auto sr = Architecture::softmax_regression(20, 4);
  CHECK(sr.parameter_count() == 84);
  const auto mlp = Architecture::mlp(20, {32}, 4);
  CHECK(mlp.parameter_count() == 20 * 32 + 32 + 32 * 4 + 4);
  CHECK(mlp.weight_offset(1) == 672);
  CHECK(mlp.bias_offset(1) == 672 + 128);
  CHECK_THROWS_AS(Architecture({5}), DomainError);
  CHECK_THROWS_AS(Architecture({5, 1}), DomainError);
}

TEST_CASE("zero softmax regression has loss ln C") {
  RngStream rng(1);
  const auto model = LearnerModel::zeros(Architecture::softmax_regression(6, 4));
  const auto batch = random_batch(rng, 17, 6, 4);
  CHECK(std::abs(forward_loss(model, batch).mean_loss - std::log(4.0)) <= 1e-12);
}

TEST_CASE("duplicating a sample leaves loss and gradient unchanged") {
  RngStream rng(2);
  const auto arch = Architecture::mlp(5, {7}, 3);
  const auto model = LearnerModel::initialize(arch, rng);
  const auto one = random_batch(rng, 1, 5, 3);
  const std::vector<std::size_t> copies(9, 0);
  const auto many = one.subset(copies);
  const auto a = forward_loss(model, one);
  const auto b = forward_loss(model, many);
  CHECK(b.mean_loss == doctest::Approx(a.mean_loss).epsilon(1e-14));
  const auto ga = backward(model, a.cache);
  const auto gb = backward(model, b.cache);
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(gb[i] == doctest::Approx(ga[i]).epsilon(1e-12));

  const auto batch = random_batch(rng, 6, 5, 3);
  std::vector<std::size_t> twice(12);
  for (std::size_t i = 0; i < 12; ++i) twice[i] = i % 6;
  const auto g1 = backward(model, forward_loss(model, batch).cache);
  const auto g2 = backward(model, forward_loss(model, batch.subset(twice)).cache);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(g1[i]).epsilon(1e-12));
}

TEST_CASE("forward loss matches the straight-line oracle") {
  RngStream rng(3);
  for (const auto& widths : std::vector<std::vector<std::size_t>>{{20, 4}, {20, 32, 4}, {3, 8, 6, 2}}) {
    const Architecture arch(widths);
    const auto model = LearnerModel::initialize(arch, rng);
    const auto batch = random_batch(rng, 13, widths.front(), widths.back());
    const std::vector<double> p(model.params().begin(), model.params().end());
    const double expected = oracle::learner_loss<double>(widths, p, rows_of(batch), batch.labels);
    CHECK(std::abs(forward_loss(model, batch).mean_loss - expected) <= 1e-12);
  }
}

TEST_CASE("zero inputs give zero weight gradients for softmax regression") {
  const auto arch = Architecture::softmax_regression(3, 3);
  RngStream rng(4);
  auto model = LearnerModel::initialize(arch, rng);
  auto p = model.mutable_params();
  for (std::size_t k = 0; k < 3; ++k) p[arch.bias_offset(0) + k] = 0.1 * static_cast<double>(k);
  MiniBatch batch;
  batch.inputs = DenseMatrix(4, 3, 0.0);
  batch.labels = {0, 1, 2, 2};
  const auto grads = backward(model, forward_loss(model, batch).cache);
  for (std::size_t i = 0; i < 9; ++i) CHECK(grads[i] == 0.0);
  // softmax of biases (0, 0.1, 0.2) minus the mean one-hot (1/4, 1/4, 1/2)
  const double z = 1.0 + std::exp(0.1) + std::exp(0.2);
  const double expect[3] = {1.0 / z - 0.25, std::exp(0.1) / z - 0.25, std::exp(0.2) / z - 0.5};
  for (std::size_t k = 0; k < 3; ++k) CHECK(grads[9 + k] == doctest::Approx(expect[k]).epsilon(1e-14));
}

TEST_CASE("backward matches central differences of the oracle loss") {
  RngStream rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    const auto sr = LearnerModel::initialize(Architecture::softmax_regression(20, 4), rng);
    const auto sr_batch = random_batch(rng, 8, 20, 4);
    CHECK(rel_error(backward(sr, forward_loss(sr, sr_batch).cache), oracle_gradient(sr, sr_batch)) <= 1e-7);

    const auto mlp = LearnerModel::initialize(Architecture::mlp(20, {32}, 4), rng);
    const auto mlp_batch = random_batch(rng, 8, 20, 4);
    CHECK(rel_error(backward(mlp, forward_loss(mlp, mlp_batch).cache), oracle_gradient(mlp, mlp_batch)) <= 1e-6);
  }
}

TEST_CASE("library gradient check") {
  RngStream rng(6);
  const auto sr = LearnerModel::initialize(Architecture::softmax_regression(20, 4), rng);
  const auto mlp = LearnerModel::initialize(Architecture::mlp(20, {32}, 4), rng);
  const auto batch = random_batch(rng, 8, 20, 4);
  CHECK(gradient_check(sr, batch) <= 1e-7);
  CHECK(gradient_check(mlp, batch) <= 1e-6);

  SUBCASE("a single sign flip is detected") {
    auto grads = backward(mlp, forward_loss(mlp, batch).cache);
    const auto numeric = numeric_gradient(mlp, batch, 1e-6);
    const auto biggest = static_cast<std::size_t>(
        std::max_element(grads.begin(), grads.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }) -
        grads.begin());
    grads[biggest] = -grads[biggest];
    CHECK(max_relative_error(grads, numeric) > 1e-2);
  }
}

TEST_CASE("stale caches are rejected") {
  RngStream rng(7);
  auto model = LearnerModel::initialize(Architecture::mlp(4, {5}, 2), rng);
  const auto batch = random_batch(rng, 3, 4, 2);
  const auto fwd = forward_loss(model, batch);
  model.mutable_params()[0] += 1.0;
  CHECK_THROWS_AS(backward(model, fwd.cache), UsageError);
  const auto other = LearnerModel::initialize(Architecture::mlp(4, {5}, 2), rng);
  CHECK_THROWS_AS(backward(other, forward_loss(model, batch).cache), UsageError);
}

TEST_CASE("shape mismatches raise domain errors") {
  RngStream rng(8);
  const auto model = LearnerModel::initialize(Architecture::softmax_regression(4, 3), rng);
  CHECK_THROWS_AS(forward_loss(model, random_batch(rng, 3, 5, 3)), DomainError);
  auto bad = random_batch(rng, 3, 4, 3);
  bad.labels[1] = 3;
  CHECK_THROWS_AS(forward_loss(model, bad), DomainError);
}

TEST_CASE("sgd step arithmetic") {
  const auto arch = Architecture::softmax_regression(1, 2);  // 4 params
  SUBCASE("plain step") {
    auto model = LearnerModel(arch, {1.0, 0.0, 0.0, 0.0});
    auto opt = OptimizerState::sgd();
    sgd_step(model, std::vector<double>{2.0, 0.0, 0.0, 0.0}, 0.1, opt);
    CHECK(model.params()[0] == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("decay only") {
    auto model = LearnerModel(arch, {1.0, 0.0, 0.0, 0.0});
    auto opt = OptimizerState::sgd(5e-4);
    sgd_step(model, std::vector<double>(4, 0.0), 0.1, opt);
    CHECK(model.params()[0] == doctest::Approx(0.99995).epsilon(1e-15));
  }
  SUBCASE("zero lr is the identity, momentum still accumulates") {
    auto model = LearnerModel(arch, {1.0, -2.0, 3.0, 0.5});
    const std::vector<double> before(model.params().begin(), model.params().end());
    auto plain = OptimizerState::sgd();
    sgd_step(model, std::vector<double>{1.0, 1.0, 1.0, 1.0}, 0.0, plain);
    CHECK(std::equal(before.begin(), before.end(), model.params().begin()));
    auto mom = OptimizerState::sgd_momentum(0.9);
    sgd_step(model, std::vector<double>{1.0, 2.0, 3.0, 4.0}, 0.0, mom);
    sgd_step(model, std::vector<double>{1.0, 2.0, 3.0, 4.0}, 0.0, mom);
    CHECK(std::equal(before.begin(), before.end(), model.params().begin()));
    CHECK(mom.velocity[3] == doctest::Approx(4.0 * 1.9).epsilon(1e-15));
  }
  SUBCASE("momentum update") {
    auto model = LearnerModel(arch, {1.0, 1.0, 1.0, 1.0});
    auto opt = OptimizerState::sgd_momentum(0.9, 0.1);
    sgd_step(model, std::vector<double>{1.0, 0.0, 0.0, 0.0}, 0.5, opt);
    // v = 1 + 0.1 * 1 = 1.1; w = 1 - 0.55
    CHECK(model.params()[0] == doctest::Approx(0.45).epsilon(1e-15));
    sgd_step(model, std::vector<double>{1.0, 0.0, 0.0, 0.0}, 0.5, opt);
    // v = 0.9 * 1.1 + 1 + 0.045 = 2.035; w = 0.45 - 1.0175
    CHECK(model.params()[0] == doctest::Approx(0.45 - 1.0175).epsilon(1e-14));
  }
  SUBCASE("non-finite gradients abort") {
    auto model = LearnerModel(arch, {1.0, 0.0, 0.0, 0.0});
    auto opt = OptimizerState::sgd();
    CHECK_THROWS_AS(sgd_step(model, std::vector<double>{NAN, 0.0, 0.0, 0.0}, 0.1, opt), DivergenceError);
  }
}

TEST_CASE("a small plain step does not increase the batch loss") {
  RngStream rng(9);
  int increases = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto model = LearnerModel::initialize(Architecture::mlp(6, {10}, 3), rng);
    const auto batch = random_batch(rng, 16, 6, 3);
    const auto fwd = forward_loss(model, batch);
    auto opt = OptimizerState::sgd();
    sgd_step(model, backward(model, fwd.cache), 1e-4, opt);
    if (forward_loss(model, batch).mean_loss > fwd.mean_loss) ++increases;
  }
  CHECK(increases == 0);
}

TEST_CASE("evaluate") {
  RngStream rng(10);
  SUBCASE("zero params on a balanced two-class set give ln 2") {
    const auto model = LearnerModel::zeros(Architecture::softmax_regression(3, 2));
    auto data = random_batch(rng, 10, 3, 2);
    for (std::size_t i = 0; i < 10; ++i) data.labels[i] = i % 2;
    CHECK(std::abs(evaluate(model, data).mean_loss - std::log(2.0)) <= 1e-12);
  }
  SUBCASE("perfect predictor") {
    // logits equal the inputs, labels are the argmax
    auto model = LearnerModel(Architecture::softmax_regression(2, 2), {1.0, 0.0, 0.0, 1.0, 0.0, 0.0});
    auto data = random_batch(rng, 50, 2, 2);
    for (std::size_t i = 0; i < 50; ++i) data.labels[i] = data.inputs(i, 1) > data.inputs(i, 0) ? 1 : 0;
    CHECK(evaluate(model, data).accuracy == 1.0);
  }
  SUBCASE("accuracy recount and permutation invariance") {
    const auto model = LearnerModel::initialize(Architecture::mlp(4, {6}, 3), rng);
    const auto data = random_batch(rng, 200, 4, 3);
    const auto eval = evaluate(model, data);
    const auto widths = model.architecture().widths();
    const std::vector<double> p(model.params().begin(), model.params().end());
    std::size_t correct = 0;
    for (std::size_t s = 0; s < data.size(); ++s) {
      std::vector<double> best_loss;
      // the predicted class is the one with the smallest per-class loss
      for (std::size_t k = 0; k < 3; ++k) {
        best_loss.push_back(oracle::learner_loss<double>(widths, p, {std::vector<double>(data.inputs.row(s).begin(),
                                                                                         data.inputs.row(s).end())},
                                                         {k}));
      }
      const auto pred = static_cast<std::size_t>(std::min_element(best_loss.begin(), best_loss.end()) - best_loss.begin());
      if (pred == data.labels[s]) ++correct;
    }
    CHECK(eval.accuracy == doctest::Approx(static_cast<double>(correct) / 200.0).epsilon(1e-15));
    CHECK(eval.accuracy >= 0.0);
    CHECK(eval.accuracy <= 1.0);

    std::vector<std::size_t> perm(200);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(perm));
    const auto shuffled = evaluate(model, data.subset(perm));
    CHECK(shuffled.accuracy == eval.accuracy);
    CHECK(shuffled.mean_loss == doctest::Approx(eval.mean_loss).epsilon(1e-14));
  }
}

TEST_CASE("initialisation statistics") {
  RngStream rng(12);
  const auto arch = Architecture::mlp(400, {300}, 2);
  const auto model = LearnerModel::initialize(arch, rng);
  const auto w = model.weights(0);
  double sum = 0.0, sq = 0.0;
  for (const double v : w.values()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(w.size());
  CHECK(std::abs(sum / n) < 0.002);
  CHECK(std::sqrt(sq / n) == doctest::Approx(1.0 / std::sqrt(400.0)).epsilon(0.01));
  for (const double b : model.bias(0)) CHECK(b == 0.0);
}
