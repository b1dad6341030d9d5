#include "metasched/numcore.hpp"

#include <bit>
#include <cstring>
#include <numbers>
#include <string>

namespace metasched {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DomainError("DenseMatrix: data length " + std::to_string(data_.size()) +
                      " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

bool DenseMatrix::all_finite() const noexcept { return metasched::all_finite(data_); }

// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& word : s_) word = splitmix64(x);
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = std::rotl(s_[3], 45);
  ++position_;
  return result;
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  if (n == 0) throw DomainError("uniform_index: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

RngStream RngStream::fork(std::uint64_t stream_id) const {
  std::uint64_t x = seed_ ^ (0xd1b54a32d192ed03ULL * (stream_id + 1));
  return RngStream(splitmix64(x));
}

DenseMatrix rng_draws(RngStream& stream, std::size_t rows, std::size_t cols, Distribution dist) {
  if (rows == 0 || cols == 0) throw DomainError("rng_draws: shape must be positive");
  DenseMatrix out(rows, cols);
  for (double& v : out.values()) v = dist == Distribution::normal ? stream.normal() : stream.uniform();
  return out;
}

// ---------------------------------------------------------------------------

CrossEntropy softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (logits.size() < 2) throw DomainError("softmax_cross_entropy: need at least two classes");
  if (label >= logits.size()) {
    throw DomainError("softmax_cross_entropy: label " + std::to_string(label) +
                      " out of range for " + std::to_string(logits.size()) + " classes");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  CrossEntropy out{0.0, std::vector<double>(logits.size())};
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out.grad_logits[k] = std::exp(logits[k] - peak);
    total += out.grad_logits[k];
  }
  for (double& g : out.grad_logits) g /= total;
  out.loss = std::log(total) + peak - logits[label];
  out.grad_logits[label] -= 1.0;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::vector<double> clip_grad_norm(std::span<const double> grads, double max_norm) {
  std::vector<double> out(grads.begin(), grads.end());
  clip_grad_norm_inplace(out, max_norm);
  return out;
}

void clip_grad_norm_inplace(std::span<double> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw DomainError("clip_grad_norm: max_norm must be positive");
  const double norm = l2_norm(grads);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (double& g : grads) g *= scale;
}

std::uint64_t fingerprint(std::span<const double> values) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (bits >> (8 * byte)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace metasched
