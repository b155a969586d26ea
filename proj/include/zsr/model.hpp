#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <utility>

#include "zsr/errors.hpp"
#include "zsr/numerics/graph.hpp"
#include "zsr/numerics/tensor.hpp"

namespace zsr {

struct ModelDims {
  std::uint32_t image_dim = 0;
  std::uint32_t sketch_dim = 0;
  std::uint32_t hidden = 512;
  std::uint32_t structure_dim = 256;
  std::uint32_t appearance_dim = 256;
  std::uint32_t latent_dim = 64;
  std::uint32_t num_classes = 0;

  bool operator==(const ModelDims&) const = default;

  void validate() const {
    const std::array<std::pair<std::string_view, std::uint32_t>, 7> fields{{
        {"image_dim", image_dim},
        {"sketch_dim", sketch_dim},
        {"hidden", hidden},
        {"structure_dim", structure_dim},
        {"appearance_dim", appearance_dim},
        {"latent_dim", latent_dim},
        {"num_classes", num_classes},
    }};
    for (const auto& [name, v] : fields) {
      if (v == 0) throw ValidationError("model dimension '" + std::string(name) + "' must be positive");
    }
  }
};

// The two-layer networks of the model. The appearance estimator's second
// layer is linear (it emits mean and log-variance); all others end in ReLU.
enum class Net {
  kImageStructureEncoder,
  kImageAppearanceEncoder,
  kSketchStructureEncoder,
  kSketchDecoder,
  kImageDecoder,
  kAppearanceEstimator,
};

inline constexpr std::array<Net, 6> kAllNets{
    Net::kImageStructureEncoder, Net::kImageAppearanceEncoder, Net::kSketchStructureEncoder,
    Net::kSketchDecoder,         Net::kImageDecoder,           Net::kAppearanceEstimator,
};

inline std::string_view net_name(Net net) {
  switch (net) {
    case Net::kImageStructureEncoder: return "image_structure_encoder";
    case Net::kImageAppearanceEncoder: return "image_appearance_encoder";
    case Net::kSketchStructureEncoder: return "sketch_structure_encoder";
    case Net::kSketchDecoder: return "sketch_decoder";
    case Net::kImageDecoder: return "image_decoder";
    case Net::kAppearanceEstimator: return "appearance_estimator";
  }
  return "";
}

inline constexpr std::string_view kClassifierName = "structure_classifier";

inline std::pair<std::uint32_t, std::uint32_t> net_io(Net net, const ModelDims& d) {
  switch (net) {
    case Net::kImageStructureEncoder: return {d.image_dim, d.structure_dim};
    case Net::kImageAppearanceEncoder: return {d.image_dim, d.appearance_dim};
    case Net::kSketchStructureEncoder: return {d.sketch_dim, d.structure_dim};
    case Net::kSketchDecoder: return {d.structure_dim, d.sketch_dim};
    case Net::kImageDecoder: return {d.latent_dim + d.structure_dim, d.image_dim};
    case Net::kAppearanceEstimator: return {d.appearance_dim, 2 * d.latent_dim};
  }
  return {0, 0};
}

inline bool net_has_output_relu(Net net) { return net != Net::kAppearanceEstimator; }

inline std::string param_name(std::string_view owner, std::string_view leaf) {
  return std::string(owner) + "." + std::string(leaf);
}

// Names of the parameters belonging to `net`, in initialization order.
inline std::array<std::string, 4> net_parameter_names(Net net) {
  const auto n = net_name(net);
  return {param_name(n, "fc1.weight"), param_name(n, "fc1.bias"), param_name(n, "fc2.weight"),
          param_name(n, "fc2.bias")};
}

// Shapes every parameter must have for `dims`, keyed by name.
inline std::map<std::string, std::vector<std::uint32_t>> expected_parameter_shapes(
    const ModelDims& dims) {
  std::map<std::string, std::vector<std::uint32_t>> shapes;
  for (Net net : kAllNets) {
    const auto [in, out] = net_io(net, dims);
    const auto names = net_parameter_names(net);
    shapes[names[0]] = {in, dims.hidden};
    shapes[names[1]] = {dims.hidden};
    shapes[names[2]] = {dims.hidden, out};
    shapes[names[3]] = {out};
  }
  shapes[param_name(kClassifierName, "weight")] = {dims.structure_dim, dims.num_classes};
  shapes[param_name(kClassifierName, "bias")] = {dims.num_classes};
  return shapes;
}

template <typename T>
struct DisentangleModel {
  ModelDims dims;
  ParameterSet<T> params;

  // Glorot-uniform weights, zero biases, drawn in a fixed order from `seed`.
  static DisentangleModel initialize(const ModelDims& dims, std::uint64_t seed) {
    dims.validate();
    DisentangleModel m;
    m.dims = dims;
    std::mt19937_64 rng(seed);
    auto glorot = [&rng](std::uint32_t fan_in, std::uint32_t fan_out) {
      Tensor<T> w = Tensor<T>::zeros({fan_in, fan_out});
      const double limit = std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index i = 0; i < w.values.size(); ++i) {
        w.values.data()[i] = static_cast<T>(dist(rng));
      }
      return w;
    };
    for (Net net : kAllNets) {
      const auto [in, out] = net_io(net, dims);
      const auto names = net_parameter_names(net);
      m.params[names[0]] = glorot(in, dims.hidden);
      m.params[names[1]] = Tensor<T>::zeros({dims.hidden});
      m.params[names[2]] = glorot(dims.hidden, out);
      m.params[names[3]] = Tensor<T>::zeros({out});
    }
    m.params[param_name(kClassifierName, "weight")] =
        glorot(dims.structure_dim, dims.num_classes);
    m.params[param_name(kClassifierName, "bias")] = Tensor<T>::zeros({dims.num_classes});
    return m;
  }

  static DisentangleModel zeros(const ModelDims& dims) {
    dims.validate();
    DisentangleModel m;
    m.dims = dims;
    for (const auto& [name, shape] : expected_parameter_shapes(dims)) {
      m.params[name] = Tensor<T>::zeros(shape);
    }
    return m;
  }

  template <typename U>
  DisentangleModel<U> cast() const {
    return DisentangleModel<U>{dims, cast_parameters<U>(params)};
  }

  const Tensor<T>& param(const std::string& name) const {
    const auto it = params.find(name);
    if (it == params.end()) throw ContractError("model has no parameter '" + name + "'");
    return it->second;
  }
};

// ---------------------------------------------------------------------------
// Inference (no graph). Inputs are [batch, dim] blocks; a single vector is a
// 1 x dim block.

namespace detail {

template <typename T>
void require_cols(const Matrix<T>& x, std::uint32_t expected, std::string_view what) {
  if (x.cols() != static_cast<Eigen::Index>(expected)) {
    throw DimensionError(std::string(what) + ": expected width " + std::to_string(expected) +
                         ", got " + std::to_string(x.cols()));
  }
}

template <typename T>
Matrix<T> affine(const Matrix<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Matrix<T> y = x * w.values;
  y.rowwise() += b.values.row(0);
  return y;
}

template <typename T>
Matrix<T> run_net(const DisentangleModel<T>& model, Net net, const Matrix<T>& x) {
  const auto names = net_parameter_names(net);
  Matrix<T> h = affine(x, model.param(names[0]), model.param(names[1])).cwiseMax(T(0));
  Matrix<T> y = affine(h, model.param(names[2]), model.param(names[3]));
  if (net_has_output_relu(net)) y = y.cwiseMax(T(0));
  return y;
}

}  // namespace detail

template <typename T>
struct ImageEncoding {
  Matrix<T> structure;
  Matrix<T> appearance;
};

template <typename T>
ImageEncoding<T> encode_image(const DisentangleModel<T>& model, const Matrix<T>& f_im) {
  detail::require_cols(f_im, model.dims.image_dim, "encode_image");
  return {detail::run_net(model, Net::kImageStructureEncoder, f_im),
          detail::run_net(model, Net::kImageAppearanceEncoder, f_im)};
}

template <typename T>
Matrix<T> encode_sketch(const DisentangleModel<T>& model, const Matrix<T>& f_sk) {
  detail::require_cols(f_sk, model.dims.sketch_dim, "encode_sketch");
  return detail::run_net(model, Net::kSketchStructureEncoder, f_sk);
}

template <typename T>
struct GaussianParams {
  Matrix<T> mu;
  Matrix<T> sigma;
};

template <typename T>
GaussianParams<T> estimate_appearance(const DisentangleModel<T>& model,
                                      const Matrix<T>& f_im_ap) {
  detail::require_cols(f_im_ap, model.dims.appearance_dim, "estimate_appearance");
  const Matrix<T> out = detail::run_net(model, Net::kAppearanceEstimator, f_im_ap);
  const auto z = static_cast<Eigen::Index>(model.dims.latent_dim);
  GaussianParams<T> g{out.leftCols(z), (T(0.5) * out.rightCols(z).array()).exp().matrix()};
  if (!g.mu.allFinite() || !g.sigma.allFinite() || !(g.sigma.array() > T(0)).all()) {
    const auto names = net_parameter_names(Net::kAppearanceEstimator);
    double max_abs = 0.0;
    for (const auto& n : names) {
      max_abs = std::max(max_abs, static_cast<double>(model.param(n).values.cwiseAbs().maxCoeff()));
    }
    throw NumericalError("appearance estimator produced non-finite or non-positive output; "
                         "max |parameter| = " + std::to_string(max_abs) +
                         ", max |mu| = " + std::to_string(static_cast<double>(g.mu.cwiseAbs().maxCoeff())));
  }
  return g;
}

template <typename T>
Matrix<T> reparameterize(const Matrix<T>& mu, const Matrix<T>& sigma, const Matrix<T>& eps) {
  if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols() || mu.rows() != eps.rows() ||
      mu.cols() != eps.cols()) {
    throw DimensionError("reparameterize: mu, sigma and eps must share a shape");
  }
  return mu + eps.cwiseProduct(sigma);
}

template <typename T>
Matrix<T> decode_sketch(const DisentangleModel<T>& model, const Matrix<T>& f_im_st) {
  detail::require_cols(f_im_st, model.dims.structure_dim, "decode_sketch");
  return detail::run_net(model, Net::kSketchDecoder, f_im_st);
}

// Decoder input is [z, f_sk_st] in that order.
template <typename T>
Matrix<T> decode_image(const DisentangleModel<T>& model, const Matrix<T>& z,
                       const Matrix<T>& f_sk_st) {
  detail::require_cols(z, model.dims.latent_dim, "decode_image (latent)");
  detail::require_cols(f_sk_st, model.dims.structure_dim, "decode_image (structure)");
  if (z.rows() != f_sk_st.rows()) throw DimensionError("decode_image: batch size mismatch");
  Matrix<T> in(z.rows(), z.cols() + f_sk_st.cols());
  in << z, f_sk_st;
  return detail::run_net(model, Net::kImageDecoder, in);
}

template <typename T>
Matrix<T> classify_structure(const DisentangleModel<T>& model, const Matrix<T>& f_st) {
  detail::require_cols(f_st, model.dims.structure_dim, "classify_structure");
  return detail::affine(f_st, model.param(param_name(kClassifierName, "weight")),
                        model.param(param_name(kClassifierName, "bias")));
}

// ---------------------------------------------------------------------------
// Graph binding for training and gradient checks.

template <typename T>
class ModelGraph {
 public:
  ModelGraph(Graph<T>& graph, const ParameterSet<T>& params, const ModelDims& dims)
      : graph_(graph), params_(params), dims_(dims) {}

  Var net(Net which, Var x) {
    const auto names = net_parameter_names(which);
    Var h = graph_.relu(graph_.dense(x, leaf(names[0]), leaf(names[1])));
    Var y = graph_.dense(h, leaf(names[2]), leaf(names[3]));
    return net_has_output_relu(which) ? graph_.relu(y) : y;
  }

  Var classify(Var f_st) {
    return graph_.dense(f_st, leaf(param_name(kClassifierName, "weight")),
                        leaf(param_name(kClassifierName, "bias")));
  }

  // (mu, sigma) with sigma = exp(log_variance / 2).
  std::pair<Var, Var> estimate(Var f_ap) {
    Var out = net(Net::kAppearanceEstimator, f_ap);
    const auto z = static_cast<Eigen::Index>(dims_.latent_dim);
    Var mu = graph_.columns(out, 0, z);
    Var sigma = graph_.exp(graph_.scale(graph_.columns(out, z, z), T(0.5)));
    return {mu, sigma};
  }

  // Puts every remaining parameter on the graph so backward reports a
  // (zero) gradient for parameters the objective never touched.
  void bind_all() {
    for (const auto& [name, _] : params_) leaf(name);
  }

  Graph<T>& graph() { return graph_; }
  const ModelDims& dims() const { return dims_; }

 private:
  // Each parameter enters the graph once, however often it is used.
  Var leaf(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    const auto p = params_.find(name);
    if (p == params_.end()) throw ContractError("model has no parameter '" + name + "'");
    Var v = graph_.parameter(name, p->second);
    bound_.emplace(name, v);
    return v;
  }

  Graph<T>& graph_;
  const ParameterSet<T>& params_;
  ModelDims dims_;
  std::map<std::string, Var> bound_;
};

}  // namespace zsr
