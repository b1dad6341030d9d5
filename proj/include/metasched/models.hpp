#pragma once

// Inner learners (softmax regression and ReLU MLPs) with analytic gradients,
// plus the SGD / SGD-with-momentum update.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "metasched/numcore.hpp"

namespace metasched {

/// Labeled samples. A mini-batch is just a small Dataset.
struct Dataset {
  DenseMatrix inputs;               // n x d
  std::vector<std::size_t> labels;  // n

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return inputs.cols(); }

  Dataset subset(std::span<const std::size_t> indices) const;
  /// Throws DomainError unless n >= 1, shapes agree and labels < num_classes.
  void validate(std::size_t num_classes) const;
};

using MiniBatch = Dataset;

/// Layer widths d -> H1 -> ... -> C. Hidden layers use ReLU; the output feeds
/// softmax cross-entropy. Two widths means softmax regression.
class Architecture {
 public:
  explicit Architecture(std::vector<std::size_t> widths);

  static Architecture softmax_regression(std::size_t input_dim, std::size_t num_classes);
  static Architecture mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                          std::size_t num_classes);

  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  std::size_t input_dim() const noexcept { return widths_.front(); }
  std::size_t num_classes() const noexcept { return widths_.back(); }
  std::size_t num_layers() const noexcept { return widths_.size() - 1; }
  std::size_t parameter_count() const noexcept { return offsets_.back(); }

  /// Offset of layer `l`'s weight block (out x in, row-major); the bias
  /// (length out) follows immediately.
  std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }
  std::size_t bias_offset(std::size_t l) const { return offsets_[l] + widths_[l + 1] * widths_[l]; }

  friend bool operator==(const Architecture& a, const Architecture& b) { return a.widths_ == b.widths_; }

 private:
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
};

/// Parameters are stored flat in layer order. Every mutation receives a fresh
/// revision so caches from an older forward pass are detected.
class LearnerModel {
 public:
  LearnerModel(Architecture arch, std::vector<double> params);

  /// Weights ~ normal(0, 1/sqrt(fan_in)), biases zero.
  static LearnerModel initialize(const Architecture& arch, RngStream& rng);
  static LearnerModel zeros(const Architecture& arch);

  const Architecture& architecture() const noexcept { return arch_; }
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> mutable_params();
  void set_params(std::vector<double> params);
  std::uint64_t revision() const noexcept { return revision_; }

  DenseMatrix weights(std::size_t layer) const;
  std::vector<double> bias(std::size_t layer) const;

 private:
  Architecture arch_;
  std::vector<double> params_;
  std::uint64_t revision_;
};

struct ForwardCache {
  std::uint64_t revision = 0;
  std::size_t param_count = 0;
  std::vector<DenseMatrix> activations;  // layer inputs: x, relu(h1), ...
  DenseMatrix grad_logits;               // d(mean loss)/d(logits), n x C
};

struct LossResult {
  double mean_loss;
  ForwardCache cache;
};

LossResult forward_loss(const LearnerModel& model, const MiniBatch& batch);

/// Gradient of the batch-mean loss, laid out like `model.params()`.
std::vector<double> backward(const LearnerModel& model, const ForwardCache& cache);

/// Batch-mean cross-entropy evaluated in `Real` arithmetic. Straight per-sample
/// loops, used for finite-difference checks.
template <typename Real>
Real mean_loss(const Architecture& arch, std::span<const Real> params, const MiniBatch& batch) {
  Real total = 0;
  std::vector<Real> current;
  std::vector<Real> next;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    current.assign(batch.inputs.row(s).begin(), batch.inputs.row(s).end());
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
      const std::size_t in = arch.widths()[l];
      const std::size_t out = arch.widths()[l + 1];
      const Real* w = params.data() + arch.weight_offset(l);
      const Real* b = params.data() + arch.bias_offset(l);
      next.assign(out, Real(0));
      for (std::size_t o = 0; o < out; ++o) {
        Real z = b[o];
        for (std::size_t i = 0; i < in; ++i) z += w[o * in + i] * current[i];
        const bool hidden = l + 1 < arch.num_layers();
        next[o] = hidden && z < Real(0) ? Real(0) : z;
      }
      current.swap(next);
    }
    total += cross_entropy_loss<Real>(current, batch.labels[s]);
  }
  return total / static_cast<Real>(batch.size());
}

enum class OptimizerKind { sgd, sgd_momentum };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::vector<double> velocity;  // zero-initialised on first use

  static OptimizerState sgd(double weight_decay = 0.0);
  static OptimizerState sgd_momentum(double momentum, double weight_decay = 0.0);
};

/// Plain: w -= lr * (g + wd*w). Momentum: v = mu*v + (g + wd*w); w -= lr * v.
/// Throws DivergenceError on non-finite gradients.
void sgd_step(LearnerModel& model, std::span<const double> grads, double lr, OptimizerState& opt);

struct Evaluation {
  double mean_loss;
  double accuracy;
};

Evaluation evaluate(const LearnerModel& model, const Dataset& data);

/// Central differences of the loss (evaluated in long double) with step
/// eps * (1 + |p|) for every parameter.
std::vector<double> numeric_gradient(const LearnerModel& model, const MiniBatch& batch, double eps);

/// max_i |a_i - n_i| / (|a_i| + |n_i| + 1e-12)
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Largest relative error between backward() and numeric_gradient().
double gradient_check(const LearnerModel& model, const MiniBatch& batch, double eps = 1e-6);

}  // namespace metasched
