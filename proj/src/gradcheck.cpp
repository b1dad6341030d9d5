#include "metasched/gradcheck.hpp"

#include <algorithm>

#include "metasched/dataset.hpp"
#include "metasched/metatrain.hpp"
#include "metasched/mlrsnet.hpp"

namespace metasched {

namespace {

constexpr std::size_t kBatch = 8;

mlrsnet::State random_state(std::size_t hidden, RngStream& rng) {
  mlrsnet::State s = mlrsnet::State::zeros(hidden);
  for (auto& v : s.h) v = rng.uniform(-0.9, 0.9);
  for (auto& v : s.c) v = rng.uniform(-2.0, 2.0);
  return s;
}

double learner_case(const Architecture& arch, RngStream& rng) {
  const Dataset batch = make_synthetic_dataset(DatasetKind::gaussian_blobs, kBatch, arch.input_dim(),
                                               arch.num_classes(), 1.0, rng.next_u64());
  const LearnerModel model = LearnerModel::initialize(arch, rng);
  return gradient_check(model, batch);
}

double meta_case(std::size_t hidden, RngStream& rng) {
  const mlrsnet::Params params = mlrsnet::init_params(hidden, rng.uniform(0.5, 2.0), rng);
  const mlrsnet::State state = random_state(hidden, rng);
  return mlrsnet::gradient_check(params, state, rng.uniform(0.05, 3.0));
}

double hypergradient_case(RngStream& rng) {
  const Architecture arch = Architecture::softmax_regression(4, 3);
  const Dataset train = make_synthetic_dataset(DatasetKind::gaussian_blobs, kBatch, 4, 3, 1.0, rng.next_u64());
  const Dataset val = make_synthetic_dataset(DatasetKind::gaussian_blobs, kBatch, 4, 3, 1.0, rng.next_u64());
  const LearnerModel model = LearnerModel::initialize(arch, rng);
  const mlrsnet::Params theta = mlrsnet::init_params(5, 1.0, rng);
  const mlrsnet::State state = random_state(5, rng);
  return hypergradient_check(model, train, val, theta, state, mlrsnet::LossNormalizer::identity());
}

template <typename Case>
GradcheckResult suite(std::string name, std::size_t instances, RngStream rng, Case&& run_case) {
  GradcheckResult r{std::move(name), instances, 0.0};
  for (std::size_t i = 0; i < instances; ++i) r.max_rel_error = std::max(r.max_rel_error, run_case(rng));
  return r;
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suites(std::size_t instances, std::uint64_t seed) {
  const RngStream root(seed);
  const Architecture softmax = Architecture::softmax_regression(20, 4);
  const Architecture mlp = Architecture::mlp(20, {32}, 4);
  return {
      suite("learner/softmax-regression", instances, root.fork(1), [&](RngStream& r) { return learner_case(softmax, r); }),
      suite("learner/mlp-20-32-4", instances, root.fork(2), [&](RngStream& r) { return learner_case(mlp, r); }),
      suite("meta-net/H=5", instances, root.fork(3), [](RngStream& r) { return meta_case(5, r); }),
      suite("meta-net/H=40", instances, root.fork(4), [](RngStream& r) { return meta_case(40, r); }),
      suite("hypergradient/H=5", instances, root.fork(5), [](RngStream& r) { return hypergradient_case(r); }),
  };
}

}  // namespace metasched
