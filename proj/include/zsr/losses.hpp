#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zsr/errors.hpp"
#include "zsr/model.hpp"
#include "zsr/numerics/graph.hpp"

namespace zsr {

inline constexpr double kCosineGuard = 1e-12;

enum class Term { kCls = 0, kOr, kKl, kL2Sketch, kL2Image };

inline constexpr std::array<Term, 5> kAllTerms{Term::kCls, Term::kOr, Term::kKl, Term::kL2Sketch,
                                               Term::kL2Image};

inline std::string_view term_name(Term t) {
  switch (t) {
    case Term::kCls: return "l_cls";
    case Term::kOr: return "l_or";
    case Term::kKl: return "l_kl";
    case Term::kL2Sketch: return "l2_sk";
    case Term::kL2Image: return "l2_im";
  }
  return "";
}

enum class Reduction { kMean, kSum };

struct LossOptions {
  std::array<bool, 5> enabled{true, true, true, true, true};
  std::array<double, 5> weights{1.0, 1.0, 1.0, 1.0, 1.0};
  // Reconstruction terms use the plain Euclidean norm unless this is set.
  bool squared_l2 = false;
  Reduction reduction = Reduction::kMean;

  bool on(Term t) const { return enabled[static_cast<std::size_t>(t)]; }
  double weight(Term t) const { return weights[static_cast<std::size_t>(t)]; }
};

struct LossBreakdown {
  double l_cls = 0.0;
  double l_or = 0.0;
  double l_kl = 0.0;
  double l2_sk = 0.0;
  double l2_im = 0.0;
  double total = 0.0;

  double& operator[](Term t) {
    switch (t) {
      case Term::kCls: return l_cls;
      case Term::kOr: return l_or;
      case Term::kKl: return l_kl;
      case Term::kL2Sketch: return l2_sk;
      case Term::kL2Image: return l2_im;
    }
    return total;
  }
  double operator[](Term t) const { return const_cast<LossBreakdown&>(*this)[t]; }
};

// Weighted sum of the enabled terms; disabled terms are reported as 0.
inline LossBreakdown total_loss(const LossBreakdown& terms, const LossOptions& options) {
  LossBreakdown out;
  for (Term t : kAllTerms) {
    if (!options.on(t)) continue;
    out[t] = terms[t];
    out.total += options.weight(t) * terms[t];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph-level building blocks. Each returns a 1 x 1 node.

template <typename T>
Var reduce(Graph<T>& g, Var per_row, Reduction r) {
  Var m = g.mean(per_row);
  return r == Reduction::kMean ? m : g.scale(m, T(g.value(per_row).rows()));
}

template <typename T>
Var classification_term(Graph<T>& g, Var logits_im, Var logits_sk, std::span<const int> labels,
                        Reduction r = Reduction::kMean) {
  return g.add(reduce(g, g.softmax_cross_entropy(logits_im, labels), r),
               reduce(g, g.softmax_cross_entropy(logits_sk, labels), r));
}

template <typename T>
Var orthogonality_term(Graph<T>& g, Var f_ap, Var f_st, Reduction r = Reduction::kMean) {
  return reduce(g, g.row_cosine(f_ap, f_st, T(kCosineGuard)), r);
}

template <typename T>
Var reconstruction_term(Graph<T>& g, Var target, Var generated, bool squared,
                        Reduction r = Reduction::kMean) {
  Var diff = g.sub(target, generated);
  return reduce(g, squared ? g.row_sum_squares(diff) : g.row_norm(diff), r);
}

template <typename T>
Var kl_term(Graph<T>& g, Var mu, Var sigma, Reduction r = Reduction::kMean) {
  return reduce(g, g.kl_standard_normal(mu, sigma), r);
}

// ---------------------------------------------------------------------------
// The full training objective.

template <typename T>
struct PairBatch {
  Matrix<T> images;    // [batch, image_dim]
  Matrix<T> sketches;  // [batch, sketch_dim]
  std::vector<int> labels;  // seen-class index per row
};

struct ObjectiveNodes {
  Var total;
  std::array<std::optional<Var>, 5> terms;
};

// Builds only the subgraphs that enabled terms need, so a disabled term
// contributes exactly zero gradient. `eps` is the standard-normal draw used
// by the reparameterized latent, [batch, latent_dim].
template <typename T>
ObjectiveNodes build_objective(Graph<T>& g, const ParameterSet<T>& params, const ModelDims& dims,
                               const PairBatch<T>& batch, const Matrix<T>& eps,
                               const LossOptions& options) {
  const auto rows = batch.images.rows();
  if (batch.sketches.rows() != rows || static_cast<Eigen::Index>(batch.labels.size()) != rows) {
    throw DimensionError("build_objective: images, sketches and labels disagree on batch size");
  }
  detail::require_cols(batch.images, dims.image_dim, "build_objective (images)");
  detail::require_cols(batch.sketches, dims.sketch_dim, "build_objective (sketches)");

  ModelGraph<T> model(g, params, dims);
  std::optional<Var> f_im, f_sk, f_im_st, f_im_ap, f_sk_st, mu, sigma;
  auto images = [&] { return f_im ? *f_im : *(f_im = g.constant(batch.images)); };
  auto sketches = [&] { return f_sk ? *f_sk : *(f_sk = g.constant(batch.sketches)); };
  auto im_st = [&] {
    return f_im_st ? *f_im_st : *(f_im_st = model.net(Net::kImageStructureEncoder, images()));
  };
  auto im_ap = [&] {
    return f_im_ap ? *f_im_ap : *(f_im_ap = model.net(Net::kImageAppearanceEncoder, images()));
  };
  auto sk_st = [&] {
    return f_sk_st ? *f_sk_st : *(f_sk_st = model.net(Net::kSketchStructureEncoder, sketches()));
  };
  auto variational = [&] {
    if (!mu) std::tie(mu, sigma) = model.estimate(im_ap());
    return std::pair{*mu, *sigma};
  };

  ObjectiveNodes out;
  auto& terms = out.terms;
  const Reduction r = options.reduction;
  if (options.on(Term::kCls)) {
    terms[0] = classification_term(g, model.classify(im_st()), model.classify(sk_st()),
                                   std::span<const int>(batch.labels), r);
  }
  if (options.on(Term::kOr)) terms[1] = orthogonality_term(g, im_ap(), im_st(), r);
  if (options.on(Term::kKl)) {
    auto [m, s] = variational();
    terms[2] = kl_term(g, m, s, r);
  }
  if (options.on(Term::kL2Sketch)) {
    Var generated = model.net(Net::kSketchDecoder, im_st());
    terms[3] = reconstruction_term(g, sketches(), generated, options.squared_l2, r);
  }
  if (options.on(Term::kL2Image)) {
    auto [m, s] = variational();
    if (eps.rows() != rows || eps.cols() != static_cast<Eigen::Index>(dims.latent_dim)) {
      throw DimensionError("build_objective: eps must be [batch, latent_dim]");
    }
    Var z = g.add(m, g.mul(g.constant(eps), s));
    Var generated = model.net(Net::kImageDecoder, g.concat(z, sk_st()));
    terms[4] = reconstruction_term(g, images(), generated, options.squared_l2, r);
  }

  std::optional<Var> total;
  for (Term t : kAllTerms) {
    const auto& node = terms[static_cast<std::size_t>(t)];
    if (!node) continue;
    Var weighted = options.weight(t) == 1.0 ? *node : g.scale(*node, T(options.weight(t)));
    total = total ? g.add(*total, weighted) : weighted;
  }
  if (!total) {
    Matrix<T> zero = Matrix<T>::Zero(1, 1);
    total = g.constant(zero);
  }
  out.total = *total;
  model.bind_all();
  return out;
}

template <typename T>
LossBreakdown read_breakdown(const Graph<T>& g, const ObjectiveNodes& nodes) {
  LossBreakdown b;
  for (Term t : kAllTerms) {
    if (const auto& v = nodes.terms[static_cast<std::size_t>(t)]) {
      b[t] = static_cast<double>(g.scalar(*v));
    }
  }
  b.total = static_cast<double>(g.scalar(nodes.total));
  return b;
}

// ---------------------------------------------------------------------------
// Value-level loss functions over [batch, dim] blocks, batch-averaged.
// They run the same graph primitives the trainer differentiates.

template <typename T>
T classification_loss(const Matrix<T>& f_im_st, const Matrix<T>& f_sk_st,
                      std::span<const int> labels, const Tensor<T>& weight,
                      const Tensor<T>& bias) {
  Graph<T> g;
  Var w = g.constant(weight.values);
  Var b = g.constant(bias.values);
  Var li = g.dense(g.constant(f_im_st), w, b);
  Var ls = g.dense(g.constant(f_sk_st), w, b);
  return g.scalar(classification_term(g, li, ls, labels));
}

template <typename T>
T orthogonality_loss(const Matrix<T>& f_im_ap, const Matrix<T>& f_im_st) {
  Graph<T> g;
  return g.scalar(orthogonality_term(g, g.constant(f_im_ap), g.constant(f_im_st)));
}

template <typename T>
T sketch_reconstruction_loss(const Matrix<T>& f_sk, const Matrix<T>& f_hat_sk,
                             bool squared = false) {
  Graph<T> g;
  return g.scalar(reconstruction_term(g, g.constant(f_sk), g.constant(f_hat_sk), squared));
}

template <typename T>
T image_reconstruction_loss(const Matrix<T>& f_im, const Matrix<T>& f_hat_im,
                            bool squared = false) {
  return sketch_reconstruction_loss(f_im, f_hat_im, squared);
}

template <typename T>
T kl_loss(const Matrix<T>& mu, const Matrix<T>& sigma) {
  Graph<T> g;
  return g.scalar(kl_term(g, g.constant(mu), g.constant(sigma)));
}

}  // namespace zsr
