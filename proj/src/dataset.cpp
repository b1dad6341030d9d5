#include "metasched/dataset.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "metasched/errors.hpp"

namespace metasched {

namespace {

constexpr double kRadius = 2.0;

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kValStream = 2;
constexpr std::uint64_t kTestStream = 3;
constexpr std::uint64_t kCorruptionStream = 4;

}  // namespace

Dataset make_synthetic_dataset(DatasetKind kind, std::size_t n, std::size_t d, std::size_t classes,
                               double noise_sigma, std::uint64_t seed) {
  if (classes < 2) throw DomainError("synthetic dataset needs at least 2 classes");
  if (n < classes) throw DomainError("synthetic dataset needs n >= classes");
  if (d == 0) throw DomainError("synthetic dataset needs d >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw DomainError("noise_sigma must be finite and >= 0");
  if (kind == DatasetKind::gaussian_blobs && classes > 2 * d) {
    throw DomainError("gaussian blobs place at most 2*d class means (" + std::to_string(classes) + " classes, d=" +
                      std::to_string(d) + ")");
  }
  if (kind == DatasetKind::two_moons && (classes != 2 || d < 2)) {
    throw DomainError("two moons needs exactly 2 classes and d >= 2");
  }

  RngStream rng(seed);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % classes;
  rng.shuffle(std::span<std::size_t>(labels));

  DenseMatrix inputs(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = labels[i];
    auto row = inputs.row(i);
    if (kind == DatasetKind::gaussian_blobs) {
      row[k % d] = k < d ? kRadius : -kRadius;
    } else {
      const double t = std::numbers::pi * rng.uniform();
      if (k == 0) {
        row[0] = std::cos(t);
        row[1] = std::sin(t);
      } else {
        row[0] = 1.0 - std::cos(t);
        row[1] = 0.5 - std::sin(t);
      }
    }
    for (std::size_t j = 0; j < d; ++j) row[j] += noise_sigma * rng.normal();
  }
  return Dataset{std::move(inputs), std::move(labels)};
}

Dataset corrupt_labels(const Dataset& data, double fraction, std::uint64_t seed, std::size_t num_classes) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw DomainError("corruption fraction must lie in [0, 1]");
  Dataset out = data;
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  if (count == 0) return out;
  if (num_classes < 2) throw DomainError("label corruption needs at least 2 classes");

  RngStream rng(seed);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // partial Fisher-Yates: the first `count` entries are a uniform sample
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t& label = out.labels[idx[i]];
    if (label >= num_classes) throw DomainError("label out of range in corrupt_labels");
    const auto shift = 1 + static_cast<std::size_t>(rng.uniform_index(num_classes - 1));
    label = (label + shift) % num_classes;
  }
  return out;
}

TrainingData make_splits(const DatasetSpec& spec) {
  const RngStream root(spec.seed);
  TrainingData data;
  data.train = make_synthetic_dataset(spec.kind, spec.n_train, spec.dim, spec.classes, spec.noise,
                                      root.fork(kTrainStream).next_u64());
  if (spec.n_val > 0) {
    data.val = make_synthetic_dataset(spec.kind, spec.n_val, spec.dim, spec.classes, spec.noise,
                                      root.fork(kValStream).next_u64());
  }
  if (spec.n_test > 0) {
    data.test = make_synthetic_dataset(spec.kind, spec.n_test, spec.dim, spec.classes, spec.noise,
                                       root.fork(kTestStream).next_u64());
  }
  if (spec.corruption > 0.0) {
    data.train = corrupt_labels(data.train, spec.corruption, root.fork(kCorruptionStream).next_u64(), spec.classes);
  }
  return data;
}

}  // namespace metasched
