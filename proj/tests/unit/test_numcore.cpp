#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "metasched/numcore.hpp"

using namespace metasched;

TEST_CASE("softmax cross-entropy on uniform logits") {
  const std::vector<double> logits{0.0, 0.0, 0.0};
  const auto ce = softmax_cross_entropy(logits, 1);
  CHECK(ce.loss == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK(ce.grad_logits[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(ce.grad_logits[1] == doctest::Approx(-2.0 / 3.0).epsilon(1e-14));
  CHECK(ce.grad_logits[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax cross-entropy saturates on a confident correct class") {
  const std::vector<double> logits{100.0, 0.0};
  const auto ce = softmax_cross_entropy(logits, 0);
  CHECK(ce.loss >= 0.0);
  CHECK(ce.loss < 1e-40);
  CHECK(std::abs(ce.grad_logits[0]) < 1e-40);
  CHECK(std::abs(ce.grad_logits[1]) < 1e-40);
}

TEST_CASE("uniform logits give ln C for many class counts") {
  for (std::size_t C = 2; C <= 64; ++C) {
    const std::vector<double> logits(C, 3.25);
    CHECK(std::abs(softmax_cross_entropy(logits, C / 2).loss - std::log(static_cast<double>(C))) <= 1e-12);
  }
}

TEST_CASE("cross-entropy gradient sums to zero and matches central differences") {
  RngStream rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(5);
    for (auto& v : logits) v = rng.uniform(-30.0, 30.0);
    const auto label = static_cast<std::size_t>(rng.uniform_index(5));
    const auto ce = softmax_cross_entropy(logits, label);
    CHECK(ce.loss >= 0.0);
    CHECK(std::abs(std::accumulate(ce.grad_logits.begin(), ce.grad_logits.end(), 0.0)) <= 1e-12);
  }
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> as_double(5);
    for (std::size_t i = 0; i < 5; ++i) as_double[i] = rng.uniform(-3.0, 3.0);
    const auto ce = softmax_cross_entropy(as_double, 2);
    for (std::size_t i = 0; i < 5; ++i) {
      // independent loss: log sum exp minus the label logit, in long double
      auto loss = [&](long double shift) {
        long double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += std::exp(static_cast<long double>(as_double[k]) + (k == i ? shift : 0));
        return std::log(s) - (static_cast<long double>(as_double[2]) + (i == 2 ? shift : 0));
      };
      const long double h = 1e-6L;
      const double fd = static_cast<double>((loss(h) - loss(-h)) / (2 * h));
      CHECK(std::abs(fd - ce.grad_logits[i]) / (std::abs(fd) + std::abs(ce.grad_logits[i]) + 1e-12) <= 1e-8);
    }
  }
}

TEST_CASE("cross-entropy rejects an out-of-range label") {
  const std::vector<double> logits{0.1, 0.2};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, 2), DomainError);
}

TEST_CASE("activation values and derivatives") {
  CHECK(sigmoid(0.0).value == 0.5);
  CHECK(sigmoid(0.0).derivative == 0.25);
  CHECK(tanh_activation(0.0).value == 0.0);
  CHECK(tanh_activation(0.0).derivative == 1.0);
  CHECK(relu(-3.0).value == 0.0);
  CHECK(relu(-3.0).derivative == 0.0);
  CHECK(relu(2.5).value == 2.5);
  CHECK(relu(2.5).derivative == 1.0);
  for (double x = -20.0; x <= 20.0; x += 0.37) {
    const auto s = sigmoid(x);
    CHECK(s.value > 0.0);
    CHECK(s.value < 1.0);
    CHECK(s.derivative == doctest::Approx(s.value * (1.0 - s.value)));
    const auto t = tanh_activation(x * 0.1);
    CHECK(std::abs(t.value) < 1.0);
    CHECK(t.derivative == doctest::Approx(1.0 - t.value * t.value));
  }
}

TEST_CASE("gradient clipping") {
  SUBCASE("under the threshold") {
    const std::vector<double> g{0.06, 0.08};
    CHECK(clip_grad_norm(g, 0.25) == g);
  }
  SUBCASE("scaled to the threshold") {
    const std::vector<double> g{0.3, 0.4};
    const auto c = clip_grad_norm(g, 0.25);
    CHECK(c[0] == doctest::Approx(0.15).epsilon(1e-15));
    CHECK(c[1] == doctest::Approx(0.20).epsilon(1e-15));
  }
  SUBCASE("zero vector") {
    const std::vector<double> g(4, 0.0);
    CHECK(clip_grad_norm(g, 0.25) == g);
  }
  SUBCASE("idempotent and direction preserving") {
    RngStream rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> g(7);
      for (auto& v : g) v = rng.uniform(-2.0, 2.0);
      const double max_norm = rng.uniform(0.1, 3.0);
      const auto once = clip_grad_norm(g, max_norm);
      const auto twice = clip_grad_norm(once, max_norm);
      CHECK(l2_norm(once) == doctest::Approx(std::min(l2_norm(g), max_norm)).epsilon(1e-12));
      for (std::size_t i = 0; i < g.size(); ++i) CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-14));
      CHECK(dot(once, g) == doctest::Approx(l2_norm(once) * l2_norm(g)).epsilon(1e-12));
    }
  }
}

TEST_CASE("rng draws are reproducible and seed dependent") {
  RngStream a(42), b(42), c(43);
  const auto ma = rng_draws(a, 8, 9, Distribution::normal);
  const auto mb = rng_draws(b, 8, 9, Distribution::normal);
  const auto mc = rng_draws(c, 8, 9, Distribution::normal);
  CHECK(ma == mb);
  CHECK_FALSE(ma == mc);
  CHECK(a.position() == b.position());
  CHECK(a.position() > 0);
  CHECK(ma.all_finite());
}

TEST_CASE("normal draws have unit moments") {
  RngStream rng(2024);
  const auto m = rng_draws(rng, 1000, 100, Distribution::normal);
  double mean = 0.0;
  for (const double v : m.values()) mean += v;
  mean /= static_cast<double>(m.size());
  double var = 0.0;
  for (const double v : m.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(m.size() - 1);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 0.02);
}

TEST_CASE("uniform draws stay in range and forks are independent") {
  RngStream rng(9);
  const auto m = rng_draws(rng, 100, 100);
  for (const double v : m.values()) {
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  const RngStream root(9);
  RngStream f1 = root.fork(1), f1b = root.fork(1), f2 = root.fork(2);
  const auto x = f1.next_u64();
  CHECK(x == f1b.next_u64());
  CHECK(x != f2.next_u64());
  for (int i = 0; i < 1000; ++i) CHECK(rng.uniform_index(7) < 7u);
}

TEST_CASE("xoshiro256** reference value") {
  // State words from splitmix64 starting at 0; outputs from a Python
  // transcription of the reference generators.
  RngStream rng(0);
  CHECK(rng.next_u64() == 0x99ec5f36cb75f2b4ULL);
  CHECK(rng.next_u64() == 0xbf6e1f784956452aULL);
  CHECK(rng.next_u64() == 0x1a5f849d4933e6e0ULL);
  CHECK(rng.position() == 3);
}
