#pragma once

// Finite-difference suites over random instances: learner gradients, the
// meta-network's d alpha / d theta, and the assembled hypergradient.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace metasched {

struct GradcheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
};

/// Suites: softmax regression (20 -> 4), MLP (20 -> 32 -> 4), meta-net with
/// H = 5 and H = 40, hypergradient (softmax regression 4 -> 3, H = 5).
std::vector<GradcheckResult> run_gradcheck_suites(std::size_t instances, std::uint64_t seed);

}  // namespace metasched
