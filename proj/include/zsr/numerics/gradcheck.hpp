#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>

#include "zsr/errors.hpp"
#include "zsr/numerics/graph.hpp"
#include "zsr/numerics/tensor.hpp"

namespace zsr {

// Builds a scalar objective on `graph` from `params`. Must be deterministic:
// any noise it consumes has to be fixed before the check starts.
template <typename T>
using GraphObjective = std::function<Var(Graph<T>& graph, const ParameterSet<T>& params)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;

  bool passed(double tolerance) const { return max_relative_error <= tolerance; }
};

// Compares `analytic` against central differences of `value_of` for every
// entry of every parameter. Relative error is |a - n| / (|a| + |n| + 1e-12).
template <typename T>
GradCheckReport compare_with_finite_differences(
    const std::function<T(const ParameterSet<T>&)>& value_of, ParameterSet<T> params,
    const Gradients<T>& analytic, T step) {
  auto evaluate = [&](const std::string& name, std::size_t index) {
    const T v = value_of(params);
    if (!std::isfinite(static_cast<double>(v))) {
      std::ostringstream msg;
      msg << "finite-difference check: non-finite loss " << v << " while perturbing " << name
          << "[" << index << "]";
      throw NumericalError(msg.str());
    }
    return v;
  };

  GradCheckReport report;
  for (auto& [name, tensor] : params) {
    const auto it = analytic.find(name);
    if (it == analytic.end()) throw ContractError("no analytic gradient for '" + name + "'");
    T* data = tensor.values.data();
    const T* grad = it->second.values.data();
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const T saved = data[i];
      data[i] = saved + step;
      const T plus = evaluate(name, i);
      data[i] = saved - step;
      const T minus = evaluate(name, i);
      data[i] = saved;
      const double numeric = (static_cast<double>(plus) - static_cast<double>(minus)) /
                             (2.0 * static_cast<double>(step));
      const double a = static_cast<double>(grad[i]);
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      ++report.entries_checked;
      if (rel > report.max_relative_error || report.worst_parameter.empty()) {
        report.max_relative_error = rel;
        report.worst_parameter = name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

template <typename T>
GradCheckReport finite_diff_check(const GraphObjective<T>& objective,
                                  const ParameterSet<T>& params, T step = T(1e-5)) {
  Graph<T> graph;
  const Var loss = objective(graph, params);
  const T base = graph.scalar(loss);
  if (!std::isfinite(static_cast<double>(base))) {
    throw NumericalError("finite-difference check: objective is non-finite at the base point");
  }
  const Gradients<T> analytic = graph.backward(loss);
  std::function<T(const ParameterSet<T>&)> value_of = [&](const ParameterSet<T>& p) {
    Graph<T> g;
    return g.scalar(objective(g, p));
  };
  return compare_with_finite_differences(value_of, params, analytic, step);
}

}  // namespace zsr
