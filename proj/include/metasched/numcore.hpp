#pragma once

// Dense float64 kernels, a portable seeded RNG, activations and loss primitives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "metasched/errors.hpp"

namespace metasched {

/// Row-major matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool all_finite() const noexcept;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// xoshiro256** seeded through splitmix64. Every value derives from integer
/// arithmetic on the 64-bit state, so a (seed, draw sequence) pair reproduces
/// the same bits on every platform.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "xoshiro256starstar-splitmix64";

  explicit RngStream(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  /// Number of 64-bit words drawn so far.
  std::uint64_t position() const noexcept { return position_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; consumes exactly two words.
  double normal();
  /// Uniform integer in [0, n), rejection sampled (unbiased).
  std::uint64_t uniform_index(std::uint64_t n);

  /// Independent child stream, a pure function of (seed, stream_id).
  RngStream fork(std::uint64_t stream_id) const;

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t position_ = 0;
  std::uint64_t s_[4];
};

enum class Distribution { uniform, normal };

/// Fills a rows x cols matrix from `stream`, row-major, advancing it.
DenseMatrix rng_draws(RngStream& stream, std::size_t rows, std::size_t cols,
                      Distribution dist = Distribution::uniform);

// ---------------------------------------------------------------------------
// Activations

struct Activation {
  double value;
  double derivative;
};

template <typename Real>
Real logistic(Real x) {
  using std::exp;
  if (x >= Real(0)) return Real(1) / (Real(1) + exp(-x));
  const Real e = exp(x);
  return e / (Real(1) + e);
}

inline Activation sigmoid(double x) {
  const double s = logistic(x);
  return {s, s * (1.0 - s)};
}

inline Activation tanh_activation(double x) {
  const double t = std::tanh(x);
  return {t, 1.0 - t * t};
}

inline Activation relu(double x) { return x > 0.0 ? Activation{x, 1.0} : Activation{0.0, 0.0}; }

// ---------------------------------------------------------------------------
// Losses and vector helpers

struct CrossEntropy {
  double loss;
  std::vector<double> grad_logits;
};

/// Max-shifted softmax followed by negative log-likelihood of `label`.
CrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t label);

/// Loss-only variant used by extended-precision finite-difference checks.
template <typename Real>
Real cross_entropy_loss(std::span<const Real> logits, std::size_t label) {
  using std::exp;
  using std::log;
  Real peak = logits[0];
  for (const Real v : logits) peak = std::max(peak, v);
  Real total = 0;
  for (const Real v : logits) total += exp(v - peak);
  return log(total) + peak - logits[label];
}

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
bool all_finite(std::span<const double> v) noexcept;

/// Rescales `grads` so its L2 norm is at most `max_norm`.
std::vector<double> clip_grad_norm(std::span<const double> grads, double max_norm);
void clip_grad_norm_inplace(std::span<double> grads, double max_norm);

/// FNV-1a over the raw bytes of a double sequence.
std::uint64_t fingerprint(std::span<const double> values) noexcept;

}  // namespace metasched
