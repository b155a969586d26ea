#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "zsr/errors.hpp"
#include "zsr/numerics/tensor.hpp"

namespace zsr {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  Gradients<T> first_moment;
  Gradients<T> second_moment;

  static AdamState init(const ParameterSet<T>& params, AdamOptions options = {}) {
    AdamState s;
    s.options = options;
    for (const auto& [name, p] : params) {
      s.first_moment.emplace(name, Tensor<T>::zeros(p.shape));
      s.second_moment.emplace(name, Tensor<T>::zeros(p.shape));
    }
    return s;
  }
};

// One bias-corrected Adam update over every parameter in `params`.
template <typename T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads, AdamState<T>& state) {
  for (const auto& [name, p] : params) {
    if (!grads.contains(name)) throw ContractError("adam_step: no gradient for '" + name + "'");
    if (!state.first_moment.contains(name)) {
      throw ContractError("adam_step: no optimizer state for '" + name + "'");
    }
  }
  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(o.beta1);
  const T b2 = static_cast<T>(o.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(o.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(o.beta2, t));
  const T lr = static_cast<T>(o.learning_rate);
  const T eps = static_cast<T>(o.epsilon);

  for (auto& [name, p] : params) {
    const auto& g = grads.at(name).values;
    auto& m = state.first_moment.at(name).values;
    auto& v = state.second_moment.at(name).values;
    if (g.rows() != p.values.rows() || g.cols() != p.values.cols()) {
      throw DimensionError("adam_step: gradient shape mismatch for '" + name + "'");
    }
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    p.values.array() -=
        lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  }
}

}  // namespace zsr
