#pragma once

// The learning-rate meta-network: an LSTM-style cell whose input is the
// (normalised) training loss and whose output is a learning rate in (0, gamma).
//
//   gates = input_path(loss) + hidden_path(h_prev)         (4H, split i|f|o|g)
//   input_path(x)  = W_i2 relu(W_i1 x + b_i1) + b_i2
//   hidden_path(h) = W_h2 relu(W_h1 h + b_h1) + b_h2
//   c = sigmoid(f) * c_prev + sigmoid(i) * tanh(g)
//   h = sigmoid(o) * tanh(c)
//   alpha = gamma * sigmoid(w_out . h + b_out)

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "metasched/numcore.hpp"

namespace metasched::mlrsnet {

inline constexpr std::size_t kDefaultHiddenSize = 40;

/// Parameter blocks in storage (and checkpoint) order.
enum class Block : std::size_t {
  input_w1,
  input_b1,
  input_w2,
  input_b2,
  hidden_w1,
  hidden_b1,
  hidden_w2,
  hidden_b2,
  output_w,
  output_b,
};

inline constexpr std::size_t kBlockCount = 10;

inline constexpr std::array<std::string_view, kBlockCount> kBlockNames = {
    "input_path_w1",  "input_path_b1",  "input_path_w2",  "input_path_b2", "hidden_path_w1",
    "hidden_path_b1", "hidden_path_w2", "hidden_path_b2", "output_w",      "output_b",
};

struct BlockShape {
  std::size_t rows;
  std::size_t cols;  // 0 for bias vectors
  std::size_t offset;

  std::size_t size() const noexcept { return cols == 0 ? rows : rows * cols; }
  bool is_matrix() const noexcept { return cols != 0; }
};

/// Shapes and flat offsets of every block for hidden size H.
std::array<BlockShape, kBlockCount> block_layout(std::size_t hidden_size);
std::size_t parameter_count(std::size_t hidden_size);

/// Meta-network parameters theta (flat, block order above) and the scale gamma.
class Params {
 public:
  Params(std::size_t hidden_size, double gamma, std::vector<double> theta);

  static Params zeros(std::size_t hidden_size, double gamma);

  std::size_t hidden_size() const noexcept { return hidden_size_; }
  double gamma() const noexcept { return gamma_; }
  void set_gamma(double gamma);

  std::span<const double> theta() const noexcept { return theta_; }
  std::span<double> mutable_theta() noexcept { return theta_; }

  std::span<const double> block(Block b) const;
  std::span<double> mutable_block(Block b);
  BlockShape shape(Block b) const { return block_layout(hidden_size_)[static_cast<std::size_t>(b)]; }

  friend bool operator==(const Params&, const Params&) = default;

 private:
  std::size_t hidden_size_;
  double gamma_;
  std::vector<double> theta_;
};

/// Weights ~ uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
Params init_params(std::size_t hidden_size, double gamma, RngStream& rng);

struct State {
  std::vector<double> h;
  std::vector<double> c;

  static State zeros(std::size_t hidden_size);
  friend bool operator==(const State&, const State&) = default;
};

struct ForwardCache {
  std::uint64_t theta_fingerprint = 0;
  double gamma = 0.0;
  double loss_in = 0.0;
  std::vector<double> h_prev, c_prev;
  std::vector<double> input_hidden;   // relu(W_i1 x + b_i1)
  std::vector<double> hidden_hidden;  // relu(W_h1 h_prev + b_h1)
  std::vector<double> in_gate, forget_gate, out_gate, cell_input;
  std::vector<double> c, tanh_c, h;
  double p = 0.0;
  double alpha = 0.0;
};

struct StepResult {
  double alpha;
  State state;
  ForwardCache cache;
};

/// One recurrent step. `state` is taken by const reference and never modified;
/// the advanced state is returned. alpha is kept strictly inside (0, gamma)
/// even when the output sigmoid saturates in double precision.
StepResult forward(const Params& params, const State& state, double loss_in);

/// d alpha / d theta for the step recorded in `cache`, holding (h_prev, c_prev)
/// fixed. Same layout as `params.theta()`.
std::vector<double> backward_theta(const Params& params, const State& state_in, const ForwardCache& cache);

/// Straight-line alpha in `Real` arithmetic, for finite-difference checks.
template <typename Real>
Real alpha_value(std::size_t hidden_size, Real gamma, std::span<const Real> theta, std::span<const double> h_prev,
                 std::span<const double> c_prev, Real loss_in) {
  using std::tanh;
  const std::size_t H = hidden_size;
  const auto layout = block_layout(H);
  const auto at = [&](Block b) { return theta.data() + layout[static_cast<std::size_t>(b)].offset; };

  std::vector<Real> u(H), v(H), gates(4 * H);
  for (std::size_t j = 0; j < H; ++j) {
    const Real a = at(Block::input_w1)[j] * loss_in + at(Block::input_b1)[j];
    u[j] = a > Real(0) ? a : Real(0);
    Real b = at(Block::hidden_b1)[j];
    for (std::size_t k = 0; k < H; ++k) b += at(Block::hidden_w1)[j * H + k] * Real(h_prev[k]);
    v[j] = b > Real(0) ? b : Real(0);
  }
  for (std::size_t r = 0; r < 4 * H; ++r) {
    Real z = at(Block::input_b2)[r] + at(Block::hidden_b2)[r];
    for (std::size_t j = 0; j < H; ++j) {
      z += at(Block::input_w2)[r * H + j] * u[j] + at(Block::hidden_w2)[r * H + j] * v[j];
    }
    gates[r] = z;
  }
  Real q = at(Block::output_b)[0];
  for (std::size_t j = 0; j < H; ++j) {
    const Real i = logistic(gates[j]);
    const Real f = logistic(gates[H + j]);
    const Real o = logistic(gates[2 * H + j]);
    const Real g = tanh(gates[3 * H + j]);
    const Real c = f * Real(c_prev[j]) + i * g;
    q += at(Block::output_w)[j] * o * tanh(c);
  }
  return gamma * logistic(q);
}

/// Central-difference check of backward_theta with step eps * (1 + |theta_j|).
/// alpha is evaluated in quad precision, recomputing only the units each
/// parameter reaches. Returns the max relative error.
double gradient_check(const Params& params, const State& state, double loss_in, double eps = 1e-6);

/// Maps the raw training loss to the network input.
class LossNormalizer {
 public:
  enum class Kind { identity, log_cardinality };

  static LossNormalizer identity() { return LossNormalizer(Kind::identity, 0); }
  /// raw / ln(cardinality); used for many-class tasks.
  static LossNormalizer log_cardinality(std::size_t cardinality);

  Kind kind() const noexcept { return kind_; }
  std::size_t cardinality() const noexcept { return cardinality_; }
  double operator()(double raw_loss) const;

  friend bool operator==(const LossNormalizer&, const LossNormalizer&) = default;

 private:
  LossNormalizer(Kind kind, std::size_t cardinality) : kind_(kind), cardinality_(cardinality) {}
  Kind kind_;
  std::size_t cardinality_;
};

inline double normalize_loss(double raw_loss, const LossNormalizer& normalizer) { return normalizer(raw_loss); }

}  // namespace metasched::mlrsnet
