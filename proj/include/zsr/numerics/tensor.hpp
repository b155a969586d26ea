#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "zsr/errors.hpp"

namespace zsr {

// Every value flowing through a graph is a rank-2 row-major block
// (batch x features); vectors are 1 x n and scalars 1 x 1.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A named, shaped parameter. Rank-1 tensors are stored as 1 x n matrices.
template <typename T>
struct Tensor {
  std::vector<std::uint32_t> shape;
  Matrix<T> values;

  static Tensor zeros(std::vector<std::uint32_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    if (t.shape.empty() || t.shape.size() > 2) {
      throw DimensionError("tensor rank must be 1 or 2");
    }
    const auto rows = t.shape.size() == 2 ? t.shape[0] : 1u;
    const auto cols = t.shape.back();
    t.values = Matrix<T>::Zero(rows, cols);
    return t;
  }

  std::size_t size() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t b) { return a * b; });
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>{shape, values.template cast<U>()};
  }

  // Bitwise comparison: NaN payloads and signed zeros must match too.
  bool identical(const Tensor& other) const {
    if (shape != other.shape) return false;
    return std::memcmp(values.data(), other.values.data(), size() * sizeof(T)) == 0;
  }
};

// Parameters and gradients are both keyed by stable names; std::map keeps
// iteration (and therefore serialization) order deterministic.
template <typename T>
using ParameterSet = std::map<std::string, Tensor<T>>;

template <typename T>
using Gradients = std::map<std::string, Tensor<T>>;

template <typename U, typename T>
ParameterSet<U> cast_parameters(const ParameterSet<T>& params) {
  ParameterSet<U> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<U>());
  return out;
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  return m.allFinite();
}

template <typename T>
bool all_finite(const ParameterSet<T>& params) {
  for (const auto& [name, t] : params) {
    if (!t.values.allFinite()) return false;
  }
  return true;
}

}  // namespace zsr
