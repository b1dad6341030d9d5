#include "metasched/mlrsnet.hpp"

#include <limits>
#include <quadmath.h>
#include <string>

#include "metasched/models.hpp"

namespace metasched::mlrsnet {

std::array<BlockShape, kBlockCount> block_layout(std::size_t hidden_size) {
  const std::size_t H = hidden_size;
  std::array<BlockShape, kBlockCount> layout{{
      {H, 1, 0},      // input_w1
      {H, 0, 0},      // input_b1
      {4 * H, H, 0},  // input_w2
      {4 * H, 0, 0},  // input_b2
      {H, H, 0},      // hidden_w1
      {H, 0, 0},      // hidden_b1
      {4 * H, H, 0},  // hidden_w2
      {4 * H, 0, 0},  // hidden_b2
      {1, H, 0},      // output_w
      {1, 0, 0},      // output_b
  }};
  std::size_t offset = 0;
  for (auto& shape : layout) {
    shape.offset = offset;
    offset += shape.size();
  }
  return layout;
}

std::size_t parameter_count(std::size_t hidden_size) {
  const auto layout = block_layout(hidden_size);
  return layout.back().offset + layout.back().size();
}

Params::Params(std::size_t hidden_size, double gamma, std::vector<double> theta)
    : hidden_size_(hidden_size), gamma_(gamma), theta_(std::move(theta)) {
  if (hidden_size_ == 0) throw DomainError("meta-net hidden size must be at least 1");
  if (!(gamma_ > 0.0) || !std::isfinite(gamma_)) throw DomainError("meta-net gamma must be finite and > 0");
  if (theta_.size() != parameter_count(hidden_size_)) {
    throw DomainError("meta-net expects " + std::to_string(parameter_count(hidden_size_)) +
                      " parameters, got " + std::to_string(theta_.size()));
  }
  if (!all_finite(theta_)) throw DomainError("meta-net parameters must be finite");
}

Params Params::zeros(std::size_t hidden_size, double gamma) {
  return Params(hidden_size, gamma, std::vector<double>(parameter_count(hidden_size), 0.0));
}

void Params::set_gamma(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw DomainError("meta-net gamma must be finite and > 0");
  gamma_ = gamma;
}

std::span<const double> Params::block(Block b) const {
  const BlockShape s = shape(b);
  return std::span<const double>(theta_).subspan(s.offset, s.size());
}

std::span<double> Params::mutable_block(Block b) {
  const BlockShape s = shape(b);
  return std::span<double>(theta_).subspan(s.offset, s.size());
}

Params init_params(std::size_t hidden_size, double gamma, RngStream& rng) {
  Params params = Params::zeros(hidden_size, gamma);
  for (std::size_t b = 0; b < kBlockCount; ++b) {
    const auto block = static_cast<Block>(b);
    const BlockShape s = params.shape(block);
    if (!s.is_matrix()) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.cols));
    for (double& w : params.mutable_block(block)) w = rng.uniform(-bound, bound);
  }
  return params;
}

State State::zeros(std::size_t hidden_size) {
  return State{std::vector<double>(hidden_size, 0.0), std::vector<double>(hidden_size, 0.0)};
}

// ---------------------------------------------------------------------------

StepResult forward(const Params& params, const State& state, double loss_in) {
  const std::size_t H = params.hidden_size();
  if (!std::isfinite(loss_in)) throw DomainError("meta-net forward: loss input is not finite");
  if (state.h.size() != H || state.c.size() != H) throw DomainError("meta-net forward: state size mismatch");

  const auto w_i1 = params.block(Block::input_w1);
  const auto b_i1 = params.block(Block::input_b1);
  const auto w_i2 = params.block(Block::input_w2);
  const auto b_i2 = params.block(Block::input_b2);
  const auto w_h1 = params.block(Block::hidden_w1);
  const auto b_h1 = params.block(Block::hidden_b1);
  const auto w_h2 = params.block(Block::hidden_w2);
  const auto b_h2 = params.block(Block::hidden_b2);
  const auto w_out = params.block(Block::output_w);
  const auto b_out = params.block(Block::output_b);

  ForwardCache cache;
  cache.theta_fingerprint = fingerprint(params.theta());
  cache.gamma = params.gamma();
  cache.loss_in = loss_in;
  cache.h_prev = state.h;
  cache.c_prev = state.c;
  cache.input_hidden.resize(H);
  cache.hidden_hidden.resize(H);
  for (std::size_t j = 0; j < H; ++j) {
    cache.input_hidden[j] = relu(w_i1[j] * loss_in + b_i1[j]).value;
    double acc = b_h1[j];
    for (std::size_t k = 0; k < H; ++k) acc += w_h1[j * H + k] * state.h[k];
    cache.hidden_hidden[j] = relu(acc).value;
  }

  std::vector<double> gates(4 * H);
  for (std::size_t r = 0; r < 4 * H; ++r) {
    double z = b_i2[r] + b_h2[r];
    const double* wi = w_i2.data() + r * H;
    const double* wh = w_h2.data() + r * H;
    for (std::size_t j = 0; j < H; ++j) z += wi[j] * cache.input_hidden[j] + wh[j] * cache.hidden_hidden[j];
    gates[r] = z;
  }

  cache.in_gate.resize(H);
  cache.forget_gate.resize(H);
  cache.out_gate.resize(H);
  cache.cell_input.resize(H);
  cache.c.resize(H);
  cache.tanh_c.resize(H);
  cache.h.resize(H);
  double q = b_out[0];
  for (std::size_t j = 0; j < H; ++j) {
    cache.in_gate[j] = sigmoid(gates[j]).value;
    cache.forget_gate[j] = sigmoid(gates[H + j]).value;
    cache.out_gate[j] = sigmoid(gates[2 * H + j]).value;
    cache.cell_input[j] = std::tanh(gates[3 * H + j]);
    cache.c[j] = cache.forget_gate[j] * state.c[j] + cache.in_gate[j] * cache.cell_input[j];
    cache.tanh_c[j] = std::tanh(cache.c[j]);
    cache.h[j] = cache.out_gate[j] * cache.tanh_c[j];
    q += w_out[j] * cache.h[j];
  }
  if (!std::isfinite(q)) throw DomainError("meta-net forward: non-finite output pre-activation");

  cache.p = sigmoid(q).value;
  double alpha = params.gamma() * cache.p;
  if (!(alpha < params.gamma())) alpha = std::nextafter(params.gamma(), 0.0);
  if (!(alpha > 0.0)) alpha = std::numeric_limits<double>::denorm_min();
  cache.alpha = alpha;

  return {alpha, State{cache.h, cache.c}, std::move(cache)};
}

std::vector<double> backward_theta(const Params& params, const State& state_in, const ForwardCache& cache) {
  const std::size_t H = params.hidden_size();
  if (cache.h.size() != H || cache.theta_fingerprint != fingerprint(params.theta()) ||
      cache.gamma != params.gamma()) {
    throw UsageError("backward_theta: cache was produced by different meta-net parameters");
  }
  if (state_in.h != cache.h_prev || state_in.c != cache.c_prev) {
    throw UsageError("backward_theta: state does not match the cached forward step");
  }

  const auto layout = block_layout(H);
  const auto off = [&](Block b) { return layout[static_cast<std::size_t>(b)].offset; };
  const auto w_i2 = params.block(Block::input_w2);
  const auto w_h2 = params.block(Block::hidden_w2);
  const auto w_out = params.block(Block::output_w);

  std::vector<double> grad(params.theta().size(), 0.0);

  // alpha = gamma * sigmoid(q)
  const double dq = cache.gamma * cache.p * (1.0 - cache.p);
  grad[off(Block::output_b)] = dq;

  std::vector<double> dgates(4 * H);
  for (std::size_t j = 0; j < H; ++j) {
    grad[off(Block::output_w) + j] = dq * cache.h[j];
    const double dh = dq * w_out[j];
    const double dc = dh * cache.out_gate[j] * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]);
    const double i = cache.in_gate[j];
    const double f = cache.forget_gate[j];
    const double o = cache.out_gate[j];
    const double g = cache.cell_input[j];
    dgates[j] = dc * g * i * (1.0 - i);
    dgates[H + j] = dc * cache.c_prev[j] * f * (1.0 - f);
    dgates[2 * H + j] = dh * cache.tanh_c[j] * o * (1.0 - o);
    dgates[3 * H + j] = dc * i * (1.0 - g * g);
  }

  // Second layers of both paths share the gate gradient.
  std::vector<double> d_input_hidden(H, 0.0);
  std::vector<double> d_hidden_hidden(H, 0.0);
  for (std::size_t r = 0; r < 4 * H; ++r) {
    const double d = dgates[r];
    grad[off(Block::input_b2) + r] = d;
    grad[off(Block::hidden_b2) + r] = d;
    double* gi = grad.data() + off(Block::input_w2) + r * H;
    double* gh = grad.data() + off(Block::hidden_w2) + r * H;
    for (std::size_t j = 0; j < H; ++j) {
      gi[j] = d * cache.input_hidden[j];
      gh[j] = d * cache.hidden_hidden[j];
      d_input_hidden[j] += d * w_i2[r * H + j];
      d_hidden_hidden[j] += d * w_h2[r * H + j];
    }
  }

  for (std::size_t j = 0; j < H; ++j) {
    if (cache.input_hidden[j] > 0.0) {
      grad[off(Block::input_w1) + j] = d_input_hidden[j] * cache.loss_in;
      grad[off(Block::input_b1) + j] = d_input_hidden[j];
    }
    if (cache.hidden_hidden[j] > 0.0) {
      grad[off(Block::hidden_b1) + j] = d_hidden_hidden[j];
      double* gw = grad.data() + off(Block::hidden_w1) + j * H;
      for (std::size_t k = 0; k < H; ++k) gw[k] = d_hidden_hidden[j] * cache.h_prev[k];
    }
  }
  return grad;
}

namespace {

__extension__ typedef __float128 Quad;

Quad quad_logistic(Quad z) {
  if (z >= 0) return 1 / (1 + expq(-z));
  const Quad e = expq(z);
  return e / (1 + e);
}

Quad quad_relu(Quad z) { return z > 0 ? z : Quad(0); }

// alpha in quad precision around a fixed (params, state, loss), re-evaluating
// only the part of the network a single parameter perturbation reaches.
class QuadAlpha {
 public:
  QuadAlpha(const Params& params, const State& state, double loss_in)
      : H_(params.hidden_size()),
        gamma_(params.gamma()),
        x_(loss_in),
        layout_(block_layout(H_)),
        theta_(params.theta().begin(), params.theta().end()),
        hp_(state.h.begin(), state.h.end()),
        cp_(state.c.begin(), state.c.end()),
        u_pre_(H_),
        v_pre_(H_),
        u_(H_),
        v_(H_),
        pre_(4 * H_),
        out_(H_) {
    for (std::size_t j = 0; j < H_; ++j) {
      u_pre_[j] = at(Block::input_w1)[j] * x_ + at(Block::input_b1)[j];
      Quad acc = at(Block::hidden_b1)[j];
      for (std::size_t k = 0; k < H_; ++k) acc += at(Block::hidden_w1)[j * H_ + k] * hp_[k];
      v_pre_[j] = acc;
      u_[j] = quad_relu(u_pre_[j]);
      v_[j] = quad_relu(v_pre_[j]);
    }
    for (std::size_t r = 0; r < 4 * H_; ++r) {
      Quad z = at(Block::input_b2)[r] + at(Block::hidden_b2)[r];
      for (std::size_t j = 0; j < H_; ++j) {
        z += at(Block::input_w2)[r * H_ + j] * u_[j] + at(Block::hidden_w2)[r * H_ + j] * v_[j];
      }
      pre_[r] = z;
    }
    q_ = at(Block::output_b)[0];
    for (std::size_t j = 0; j < H_; ++j) {
      out_[j] = unit(j, pre_[j], pre_[H_ + j], pre_[2 * H_ + j], pre_[3 * H_ + j]);
      q_ += at(Block::output_w)[j] * out_[j];
    }
  }

  /// alpha with theta[block][index] shifted by `delta`.
  Quad alpha_with(Block block, std::size_t index, Quad delta) const {
    switch (block) {
      case Block::output_b:
        return alpha(q_ + delta);
      case Block::output_w:
        return alpha(q_ + delta * out_[index]);
      case Block::input_b2:
      case Block::hidden_b2:
        return gate_shift(index, delta);
      case Block::input_w2:
        return gate_shift(index / H_, delta * u_[index % H_]);
      case Block::hidden_w2:
        return gate_shift(index / H_, delta * v_[index % H_]);
      case Block::input_w1:
        return first_layer_shift(Block::input_w2, index, quad_relu(u_pre_[index] + delta * x_) - u_[index]);
      case Block::input_b1:
        return first_layer_shift(Block::input_w2, index, quad_relu(u_pre_[index] + delta) - u_[index]);
      case Block::hidden_w1: {
        const std::size_t j = index / H_;
        return first_layer_shift(Block::hidden_w2, j, quad_relu(v_pre_[j] + delta * hp_[index % H_]) - v_[j]);
      }
      case Block::hidden_b1:
        return first_layer_shift(Block::hidden_w2, index, quad_relu(v_pre_[index] + delta) - v_[index]);
    }
    return alpha(q_);
  }

 private:
  const Quad* at(Block b) const { return theta_.data() + layout_[static_cast<std::size_t>(b)].offset; }

  Quad alpha(Quad q) const { return gamma_ * quad_logistic(q); }

  Quad unit(std::size_t j, Quad gi, Quad gf, Quad go, Quad gg) const {
    const Quad c = quad_logistic(gf) * cp_[j] + quad_logistic(gi) * tanhq(gg);
    return quad_logistic(go) * tanhq(c);
  }

  Quad gate_shift(std::size_t r, Quad shift) const {
    const std::size_t j = r % H_;
    Quad g[4] = {pre_[j], pre_[H_ + j], pre_[2 * H_ + j], pre_[3 * H_ + j]};
    g[r / H_] += shift;
    return alpha(q_ + at(Block::output_w)[j] * (unit(j, g[0], g[1], g[2], g[3]) - out_[j]));
  }

  // A first-layer unit `col` moved by `change`; every gate sees it through
  // column `col` of the second-layer weights.
  Quad first_layer_shift(Block second, std::size_t col, Quad change) const {
    if (change == 0) return alpha(q_);  // the unit stays inside the flat part of its ReLU
    const Quad* w2 = at(second);
    Quad q = at(Block::output_b)[0];
    for (std::size_t j = 0; j < H_; ++j) {
      const Quad gi = pre_[j] + w2[j * H_ + col] * change;
      const Quad gf = pre_[H_ + j] + w2[(H_ + j) * H_ + col] * change;
      const Quad go = pre_[2 * H_ + j] + w2[(2 * H_ + j) * H_ + col] * change;
      const Quad gg = pre_[3 * H_ + j] + w2[(3 * H_ + j) * H_ + col] * change;
      q += at(Block::output_w)[j] * unit(j, gi, gf, go, gg);
    }
    return alpha(q);
  }

  std::size_t H_;
  Quad gamma_;
  Quad x_;
  std::array<BlockShape, kBlockCount> layout_;
  std::vector<Quad> theta_, hp_, cp_;
  std::vector<Quad> u_pre_, v_pre_, u_, v_, pre_, out_;
  Quad q_ = 0;
};

}  // namespace

double gradient_check(const Params& params, const State& state, double loss_in, double eps) {
  if (!(eps > 0.0)) throw DomainError("gradient_check: eps must be positive");
  const StepResult step = forward(params, state, loss_in);
  const std::vector<double> analytic = backward_theta(params, state, step.cache);

  const QuadAlpha reference(params, state, loss_in);
  std::vector<double> numeric;
  numeric.reserve(analytic.size());
  for (std::size_t b = 0; b < kBlockCount; ++b) {
    const auto block = static_cast<Block>(b);
    const auto values = params.block(block);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Quad h = Quad(eps) * (1 + Quad(std::fabs(values[i])));
      const Quad up = reference.alpha_with(block, i, h);
      const Quad down = reference.alpha_with(block, i, -h);
      numeric.push_back(static_cast<double>((up - down) / (2 * h)));
    }
  }
  return max_relative_error(analytic, numeric);
}

// ---------------------------------------------------------------------------

LossNormalizer LossNormalizer::log_cardinality(std::size_t cardinality) {
  if (cardinality < 2) throw DomainError("log-cardinality normalizer needs at least two classes");
  return LossNormalizer(Kind::log_cardinality, cardinality);
}

double LossNormalizer::operator()(double raw_loss) const {
  if (kind_ == Kind::identity) return raw_loss;
  return raw_loss / std::log(static_cast<double>(cardinality_));
}

}  // namespace metasched::mlrsnet
