#pragma once

#include <cstdint>
#include <random>

#include "zsr/losses.hpp"
#include "zsr/model.hpp"
#include "zsr/numerics/gradcheck.hpp"

namespace zsr {

struct ToyProblem {
  ModelDims dims{8, 8, 8, 4, 4, 2, 3};
  std::uint32_t batch = 4;
};

// Gradient check of the full objective on a small random model in 64-bit.
// Inputs, labels and the reparameterization noise are drawn from `seed`
// and held fixed while differencing.
inline GradCheckReport check_objective_gradients(std::uint64_t seed,
                                                 const LossOptions& options = {},
                                                 const ToyProblem& toy = {},
                                                 double step = 1e-5) {
  auto model = DisentangleModel<float>::initialize(toy.dims, seed).cast<double>();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Non-zero biases keep the check away from the all-zero-bias special case.
  for (auto& [name, t] : model.params) {
    if (t.shape.size() == 1) {
      for (Eigen::Index i = 0; i < t.values.size(); ++i) t.values.data()[i] = 0.1 * normal(rng);
    }
  }
  PairBatch<double> batch;
  batch.images.resize(toy.batch, toy.dims.image_dim);
  batch.sketches.resize(toy.batch, toy.dims.sketch_dim);
  for (Eigen::Index i = 0; i < batch.images.size(); ++i) batch.images.data()[i] = unit(rng);
  for (Eigen::Index i = 0; i < batch.sketches.size(); ++i) batch.sketches.data()[i] = unit(rng);
  std::uniform_int_distribution<int> label(0, static_cast<int>(toy.dims.num_classes) - 1);
  for (std::uint32_t i = 0; i < toy.batch; ++i) batch.labels.push_back(label(rng));
  Matrix<double> eps(toy.batch, toy.dims.latent_dim);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);

  const ModelDims dims = toy.dims;
  GraphObjective<double> objective = [&](Graph<double>& g, const ParameterSet<double>& p) {
    return build_objective(g, p, dims, batch, eps, options).total;
  };
  return finite_diff_check(objective, model.params, step);
}

}  // namespace zsr
