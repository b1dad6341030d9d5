#include "metasched/models.hpp"

#include <atomic>
#include <cmath>
#include <string>

namespace metasched {

namespace {

std::uint64_t next_revision() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{DenseMatrix(indices.size(), dim()), {}};
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = inputs.row(indices[r]);
    std::copy(src.begin(), src.end(), out.inputs.row(r).begin());
    out.labels.push_back(labels[indices[r]]);
  }
  return out;
}

void Dataset::validate(std::size_t num_classes) const {
  if (labels.empty()) throw DomainError("dataset is empty");
  if (inputs.rows() != labels.size()) throw DomainError("dataset: inputs/labels row mismatch");
  for (const auto label : labels) {
    if (label >= num_classes) {
      throw DomainError("dataset: label " + std::to_string(label) + " >= " + std::to_string(num_classes));
    }
  }
}

// ---------------------------------------------------------------------------

Architecture::Architecture(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw DomainError("architecture needs input and output widths");
  for (const auto w : widths_) {
    if (w == 0) throw DomainError("architecture widths must be positive");
  }
  if (widths_.back() < 2) throw DomainError("architecture needs at least two classes");
  offsets_.push_back(0);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(offsets_.back() + widths_[l + 1] * (widths_[l] + 1));
  }
}

Architecture Architecture::softmax_regression(std::size_t input_dim, std::size_t num_classes) {
  return Architecture({input_dim, num_classes});
}

Architecture Architecture::mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                               std::size_t num_classes) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(num_classes);
  return Architecture(std::move(widths));
}

// ---------------------------------------------------------------------------

LearnerModel::LearnerModel(Architecture arch, std::vector<double> params)
    : arch_(std::move(arch)), params_(std::move(params)), revision_(next_revision()) {
  if (params_.size() != arch_.parameter_count()) {
    throw DomainError("LearnerModel: expected " + std::to_string(arch_.parameter_count()) +
                      " parameters, got " + std::to_string(params_.size()));
  }
}

LearnerModel LearnerModel::initialize(const Architecture& arch, RngStream& rng) {
  std::vector<double> params(arch.parameter_count(), 0.0);
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const std::size_t fan_in = arch.widths()[l];
    const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const std::size_t count = fan_in * arch.widths()[l + 1];
    for (std::size_t i = 0; i < count; ++i) params[arch.weight_offset(l) + i] = stddev * rng.normal();
  }
  return LearnerModel(arch, std::move(params));
}

LearnerModel LearnerModel::zeros(const Architecture& arch) {
  return LearnerModel(arch, std::vector<double>(arch.parameter_count(), 0.0));
}

std::span<double> LearnerModel::mutable_params() {
  revision_ = next_revision();
  return params_;
}

void LearnerModel::set_params(std::vector<double> params) {
  if (params.size() != params_.size()) throw DomainError("set_params: parameter count mismatch");
  params_ = std::move(params);
  revision_ = next_revision();
}

DenseMatrix LearnerModel::weights(std::size_t layer) const {
  const std::size_t in = arch_.widths()[layer];
  const std::size_t out = arch_.widths()[layer + 1];
  const auto* first = params_.data() + arch_.weight_offset(layer);
  return DenseMatrix(out, in, std::vector<double>(first, first + in * out));
}

std::vector<double> LearnerModel::bias(std::size_t layer) const {
  const auto* first = params_.data() + arch_.bias_offset(layer);
  return std::vector<double>(first, first + arch_.widths()[layer + 1]);
}

// ---------------------------------------------------------------------------

namespace {

// Runs every layer on `inputs`; hidden activations are appended to
// `activations` when it is non-null. Returns the logits.
DenseMatrix propagate(const LearnerModel& model, const DenseMatrix& inputs,
                      std::vector<DenseMatrix>* activations) {
  const Architecture& arch = model.architecture();
  const auto params = model.params();
  const std::size_t n = inputs.rows();
  DenseMatrix current;
  const DenseMatrix* a = &inputs;
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const std::size_t in = arch.widths()[l];
    const std::size_t out = arch.widths()[l + 1];
    const double* w = params.data() + arch.weight_offset(l);
    const double* b = params.data() + arch.bias_offset(l);
    DenseMatrix z(n, out);
    for (std::size_t s = 0; s < n; ++s) {
      const double* x = a->row(s).data();
      for (std::size_t o = 0; o < out; ++o) {
        double acc = b[o];
        const double* wo = w + o * in;
        for (std::size_t i = 0; i < in; ++i) acc += wo[i] * x[i];
        z(s, o) = acc;
      }
    }
    if (l + 1 == arch.num_layers()) return z;
    for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
    if (activations != nullptr) {
      activations->push_back(std::move(z));
      a = &activations->back();
    } else {
      current = std::move(z);
      a = &current;
    }
  }
  return {};
}

void check_batch(const Architecture& arch, const Dataset& batch, const char* who) {
  if (batch.dim() != arch.input_dim()) {
    throw DomainError(std::string(who) + ": data has " + std::to_string(batch.dim()) +
                      " features, model expects " + std::to_string(arch.input_dim()));
  }
  batch.validate(arch.num_classes());
}

}  // namespace

LossResult forward_loss(const LearnerModel& model, const MiniBatch& batch) {
  const Architecture& arch = model.architecture();
  check_batch(arch, batch, "forward_loss");

  const std::size_t n = batch.size();
  ForwardCache cache;
  cache.revision = model.revision();
  cache.param_count = arch.parameter_count();
  cache.activations.reserve(arch.num_layers());
  cache.activations.push_back(batch.inputs);
  const DenseMatrix logits = propagate(model, batch.inputs, &cache.activations);

  const double inv_n = 1.0 / static_cast<double>(n);
  cache.grad_logits = DenseMatrix(n, arch.num_classes());
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const CrossEntropy ce = softmax_cross_entropy(logits.row(s), batch.labels[s]);
    total += ce.loss;
    for (std::size_t k = 0; k < ce.grad_logits.size(); ++k) cache.grad_logits(s, k) = ce.grad_logits[k] * inv_n;
  }
  return {total * inv_n, std::move(cache)};
}

std::vector<double> backward(const LearnerModel& model, const ForwardCache& cache) {
  const Architecture& arch = model.architecture();
  if (cache.revision != model.revision() || cache.param_count != arch.parameter_count() ||
      cache.activations.size() != arch.num_layers()) {
    throw UsageError("backward: cache does not belong to the current model parameters");
  }
  const auto params = model.params();
  std::vector<double> grads(arch.parameter_count(), 0.0);

  DenseMatrix delta = cache.grad_logits;
  for (std::size_t l = arch.num_layers(); l-- > 0;) {
    const std::size_t in = arch.widths()[l];
    const std::size_t out = arch.widths()[l + 1];
    const DenseMatrix& a = cache.activations[l];
    const std::size_t n = a.rows();
    double* gw = grads.data() + arch.weight_offset(l);
    double* gb = grads.data() + arch.bias_offset(l);
    for (std::size_t s = 0; s < n; ++s) {
      const double* x = a.row(s).data();
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta(s, o);
        if (d == 0.0) continue;
        gb[o] += d;
        double* gwo = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) gwo[i] += d * x[i];
      }
    }
    if (l == 0) break;
    const double* w = params.data() + arch.weight_offset(l);
    DenseMatrix prev(n, in);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta(s, o);
        if (d == 0.0) continue;
        const double* wo = w + o * in;
        for (std::size_t i = 0; i < in; ++i) prev(s, i) += d * wo[i];
      }
      for (std::size_t i = 0; i < in; ++i) {
        if (!(a(s, i) > 0.0)) prev(s, i) = 0.0;
      }
    }
    delta = std::move(prev);
  }
  return grads;
}

// ---------------------------------------------------------------------------

OptimizerState OptimizerState::sgd(double weight_decay) {
  return OptimizerState{OptimizerKind::sgd, 0.0, weight_decay, {}};
}

OptimizerState OptimizerState::sgd_momentum(double momentum, double weight_decay) {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("momentum must lie in [0, 1)");
  return OptimizerState{OptimizerKind::sgd_momentum, momentum, weight_decay, {}};
}

void sgd_step(LearnerModel& model, std::span<const double> grads, double lr, OptimizerState& opt) {
  if (grads.size() != model.params().size()) throw DomainError("sgd_step: gradient shape mismatch");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("sgd_step: learning rate must be finite and >= 0");
  if (!all_finite(grads)) throw DivergenceError("sgd_step: non-finite gradient, training diverged");

  auto w = model.mutable_params();
  const double wd = opt.weight_decay;
  if (opt.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (grads[i] + wd * w[i]);
    return;
  }
  if (opt.velocity.empty()) opt.velocity.assign(w.size(), 0.0);
  if (opt.velocity.size() != w.size()) throw DomainError("sgd_step: velocity shape mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) {
    opt.velocity[i] = opt.momentum * opt.velocity[i] + (grads[i] + wd * w[i]);
    w[i] -= lr * opt.velocity[i];
  }
}

Evaluation evaluate(const LearnerModel& model, const Dataset& data) {
  if (data.size() == 0) throw DomainError("evaluate: empty dataset");
  check_batch(model.architecture(), data, "evaluate");
  const DenseMatrix logits = propagate(model, data.inputs, nullptr);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto row = logits.row(s);
    loss_sum += cross_entropy_loss<double>(row, data.labels[s]);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == data.labels[s]) ++correct;
  }
  const auto n = static_cast<double>(data.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

// ---------------------------------------------------------------------------

std::vector<double> numeric_gradient(const LearnerModel& model, const MiniBatch& batch, double eps) {
  if (!(eps > 0.0)) throw DomainError("numeric_gradient: eps must be positive");
  const Architecture& arch = model.architecture();
  std::vector<long double> params(model.params().begin(), model.params().end());
  std::vector<double> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const long double original = params[i];
    const long double h = eps * (1.0L + std::fabs(original));
    params[i] = original + h;
    const long double up = mean_loss<long double>(arch, params, batch);
    params[i] = original - h;
    const long double down = mean_loss<long double>(arch, params, batch);
    params[i] = original;
    out[i] = static_cast<double>((up - down) / (2.0L * h));
  }
  return out;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw DomainError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::fabs(analytic[i] - numeric[i]) / (std::fabs(analytic[i]) + std::fabs(numeric[i]) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

double gradient_check(const LearnerModel& model, const MiniBatch& batch, double eps) {
  const LossResult fwd = forward_loss(model, batch);
  const std::vector<double> analytic = backward(model, fwd.cache);
  return max_relative_error(analytic, numeric_gradient(model, batch, eps));
}

}  // namespace metasched
