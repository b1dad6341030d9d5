#pragma once

// Synthetic classification data and label corruption.

#include <cstddef>
#include <cstdint>

#include "metasched/metatrain.hpp"
#include "metasched/models.hpp"

namespace metasched {

enum class DatasetKind { gaussian_blobs, two_moons };

/// Class means sit at radius 2 on coordinate axes: class k < d at +2 e_k,
/// class d <= k < 2d at -2 e_(k-d). Points are mean + noise_sigma * N(0, I).
/// two_moons uses two interleaved half circles in the first two coordinates;
/// the remaining coordinates carry noise only. Labels are assigned
/// round-robin and then shuffled, so classes are balanced within one.
Dataset make_synthetic_dataset(DatasetKind kind, std::size_t n, std::size_t d, std::size_t classes,
                               double noise_sigma, std::uint64_t seed);

/// Exactly round(fraction * n) distinct samples receive a uniformly drawn
/// label different from their original one.
Dataset corrupt_labels(const Dataset& data, double fraction, std::uint64_t seed, std::size_t num_classes);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::gaussian_blobs;
  std::size_t n_train = 1000;
  std::size_t n_val = 20;  // a small clean split, 10 per class by default
  std::size_t n_test = 1000;
  std::size_t dim = 20;
  std::size_t classes = 2;
  double noise = 0.5;
  double corruption = 0.0;  // training split only
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

/// Train, validation and test splits drawn from independent streams of `seed`.
TrainingData make_splits(const DatasetSpec& spec);

}  // namespace metasched
