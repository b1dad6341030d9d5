#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "metasched/mlrsnet.hpp"
#include "support/oracles.hpp"

using namespace metasched;
using namespace metasched::mlrsnet;

namespace {

State random_state(RngStream& rng, std::size_t H) {
  State s = State::zeros(H);
  for (auto& v : s.h) v = rng.uniform(-0.9, 0.9);
  for (auto& v : s.c) v = rng.uniform(-2.0, 2.0);
  return s;
}

Params scaled_init(std::size_t H, double gamma, RngStream& rng, double scale) {
  Params p = init_params(H, gamma, rng);
  for (auto& v : p.mutable_theta()) v = v * scale + rng.uniform(-0.05, 0.05);
  return p;
}

std::vector<double> as_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / (std::abs(a[i]) + std::abs(b[i]) + 1e-12));
  }
  return worst;
}

}  // namespace

TEST_CASE("parameter count and layout") {
  CHECK(parameter_count(40) == 14881);
  CHECK(parameter_count(5) == oracle::meta_param_count(5));
  CHECK(parameter_count(1) == oracle::meta_param_count(1));
  const auto layout = block_layout(40);
  std::size_t expected = 0;
  for (std::size_t b = 0; b < kBlockCount; ++b) {
    CHECK(layout[b].offset == expected);
    CHECK(layout[b].size() == oracle::meta_block_sizes(40)[b]);
    expected += layout[b].size();
  }
}

TEST_CASE("init_params") {
  RngStream a(42), b(42);
  const Params pa = init_params(40, 1.0, a);
  const Params pb = init_params(40, 1.0, b);
  CHECK(pa == pb);
  CHECK(pa.theta().size() == 14881);
  CHECK(pa.gamma() == 1.0);
  RngStream c(42);
  CHECK(init_params(40, 0.37, c).gamma() == 0.37);

  const auto bound = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  for (const double v : pa.block(Block::input_w1)) CHECK(std::abs(v) <= bound(1));
  for (const double v : pa.block(Block::input_w2)) CHECK(std::abs(v) <= bound(40));
  for (const double v : pa.block(Block::hidden_w1)) CHECK(std::abs(v) <= bound(40));
  for (const double v : pa.block(Block::output_w)) CHECK(std::abs(v) <= bound(40));
  for (const Block bias : {Block::input_b1, Block::input_b2, Block::hidden_b1, Block::hidden_b2, Block::output_b}) {
    for (const double v : pa.block(bias)) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(Params(0, 1.0, {}), DomainError);
  CHECK_THROWS_AS(Params::zeros(3, 0.0), DomainError);
}

TEST_CASE("zero parameters predict half of gamma") {
  const Params p = Params::zeros(40, 1.0);
  const auto step = forward(p, State::zeros(40), 2.3);
  CHECK(step.alpha == 0.5);
  CHECK(step.cache.p == 0.5);
  for (std::size_t j = 0; j < 40; ++j) {
    CHECK(step.cache.in_gate[j] == 0.5);
    CHECK(step.cache.forget_gate[j] == 0.5);
    CHECK(step.cache.out_gate[j] == 0.5);
    CHECK(step.cache.cell_input[j] == 0.0);
    CHECK(step.state.c[j] == 0.0);
    CHECK(step.state.h[j] == 0.0);
  }
  CHECK(forward(Params::zeros(40, 20.0), State::zeros(40), -7.0).alpha == 10.0);

  const auto grad = backward_theta(p, State::zeros(40), step.cache);
  CHECK(grad.back() == 0.25);
}

TEST_CASE("forward matches the straight-line oracle") {
  RngStream rng(7);
  for (const std::size_t H : {1u, 5u, 40u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Params p = init_params(H, 1.5, rng);
      const State s = random_state(rng, H);
      const auto step = forward(p, s, 2.3);
      const auto ref = oracle::meta_forward<long double>(
          H, 1.5L, std::vector<long double>(p.theta().begin(), p.theta().end()), s.h, s.c, 2.3L);
      CHECK(std::abs(step.alpha - static_cast<double>(ref.alpha)) <= 1e-12);
      for (std::size_t j = 0; j < H; ++j) {
        CHECK(std::abs(step.state.h[j] - static_cast<double>(ref.h[j])) <= 1e-12);
        CHECK(std::abs(step.state.c[j] - static_cast<double>(ref.c[j])) <= 1e-12);
      }
    }
  }
}

TEST_CASE("forward leaves its input state alone and is deterministic") {
  RngStream rng(8);
  const Params p = init_params(5, 1.0, rng);
  const State s = random_state(rng, 5);
  const State copy = s;
  const auto a = forward(p, s, 0.7);
  const auto b = forward(p, s, 0.7);
  CHECK(s == copy);
  CHECK(a.alpha == b.alpha);
  CHECK(a.state == b.state);
  CHECK_THROWS_AS(forward(p, s, NAN), DomainError);
  CHECK_THROWS_AS(forward(p, State::zeros(4), 0.7), DomainError);
}

TEST_CASE("backward_theta matches quad-precision differences of the oracle") {
  RngStream rng(9);
  SUBCASE("H = 5, every coordinate") {
    for (int trial = 0; trial < 5; ++trial) {
      const Params p = scaled_init(5, rng.uniform(0.5, 2.0), rng, 1.0);
      const State s = random_state(rng, 5);
      const double x = rng.uniform(0.05, 3.0);
      const auto step = forward(p, s, x);
      const auto analytic = backward_theta(p, s, step.cache);
      std::vector<std::size_t> coords(analytic.size());
      std::iota(coords.begin(), coords.end(), std::size_t{0});
      const auto numeric = oracle::meta_fd(5, p.gamma(), as_vector(p.theta()), s.h, s.c, x, coords);
      CHECK(rel_error(analytic, numeric) <= 1e-6);
    }
  }
  SUBCASE("H = 40, sampled coordinates from every block") {
    const Params p = scaled_init(40, 1.0, rng, 1.0);
    const State s = random_state(rng, 40);
    const auto step = forward(p, s, 1.1);
    const auto analytic = backward_theta(p, s, step.cache);
    std::vector<std::size_t> coords;
    for (const auto& shape : block_layout(40)) {
      for (int i = 0; i < 6; ++i) coords.push_back(shape.offset + static_cast<std::size_t>(rng.uniform_index(shape.size())));
    }
    const auto numeric = oracle::meta_fd(40, 1.0, as_vector(p.theta()), s.h, s.c, 1.1, coords);
    std::vector<double> picked;
    for (auto j : coords) picked.push_back(analytic[j]);
    CHECK(rel_error(picked, numeric) <= 1e-6);
  }
}

TEST_CASE("library gradient_check agrees with the oracle") {
  RngStream rng(10);
  for (const std::size_t H : {5u, 40u}) {
    const Params p = scaled_init(H, 1.0, rng, 1.0);
    const State s = random_state(rng, H);
    CHECK(gradient_check(p, s, 0.8) <= 1e-6);
  }
}

TEST_CASE("gradients scale linearly with gamma") {
  RngStream rng(11);
  Params p = init_params(5, 1.0, rng);
  const State s = random_state(rng, 5);
  const auto g1 = backward_theta(p, s, forward(p, s, 1.3).cache);
  const double a1 = forward(p, s, 1.3).alpha;
  p.set_gamma(2.0);
  const auto g2 = backward_theta(p, s, forward(p, s, 1.3).cache);
  CHECK(forward(p, s, 1.3).alpha == doctest::Approx(2.0 * a1).epsilon(1e-15));
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-14));

  p.set_gamma(7.5);
  CHECK(forward(p, s, 1.3).alpha / a1 == doctest::Approx(7.5).epsilon(1e-14));
}

TEST_CASE("stale caches are rejected") {
  RngStream rng(12);
  Params p = init_params(5, 1.0, rng);
  const State s = random_state(rng, 5);
  const auto step = forward(p, s, 0.4);
  State other = s;
  other.h[0] += 0.1;
  CHECK_THROWS_AS(backward_theta(p, other, step.cache), UsageError);
  p.mutable_theta()[3] += 0.01;
  CHECK_THROWS_AS(backward_theta(p, s, step.cache), UsageError);
}

TEST_CASE("alpha stays strictly inside (0, gamma)") {
  RngStream rng(13);
  for (int trial = 0; trial < 2000; ++trial) {
    const double gamma = std::exp(rng.uniform(-5.0, 5.0));
    Params p = init_params(5, gamma, rng);
    const double scale = std::exp(rng.uniform(0.0, 6.0));
    for (auto& v : p.mutable_theta()) v = rng.uniform(-1.0, 1.0) * scale;
    const double a = forward(p, random_state(rng, 5), rng.uniform(-1e3, 1e3)).alpha;
    CHECK(a > 0.0);
    CHECK(a < gamma);
  }
}

TEST_CASE("hidden state stays bounded over long runs") {
  RngStream rng(14);
  Params p = init_params(8, 1.0, rng);
  for (auto& v : p.mutable_theta()) v *= 5.0;
  State s = State::zeros(8);
  for (int t = 0; t < 5000; ++t) {
    s = forward(p, s, rng.uniform(0.0, 10.0)).state;
    // o * tanh(c) rounds to exactly 1 once both factors saturate
    for (const double h : s.h) CHECK(std::abs(h) <= 1.0);
  }
}

TEST_CASE("loss normalisation") {
  CHECK(normalize_loss(2.5, LossNormalizer::identity()) == 2.5);
  CHECK(normalize_loss(std::log(10000.0), LossNormalizer::log_cardinality(10000)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(normalize_loss(std::log(4.0), LossNormalizer::log_cardinality(4)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(LossNormalizer::log_cardinality(1), DomainError);
}
