#pragma once

// Tape-based reverse-mode differentiation over row-major batch matrices.
// Nodes are appended in evaluation order, so reverse insertion order is a
// valid topological order for the backward sweep.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "zsr/errors.hpp"
#include "zsr/numerics/tensor.hpp"

namespace zsr {

// Handle to a node on a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::size_t id = 0;
};

template <typename T>
class Graph {
 public:
  using Mat = Matrix<T>;

  Var constant(Mat value) { return push(std::move(value), {}); }

  // Leaf that reports its gradient under `name`. The tensor is copied.
  Var parameter(const std::string& name, const Tensor<T>& tensor) {
    Var v = push(tensor.values, {});
    nodes_[v.id].param_name = name;
    nodes_[v.id].param_shape = tensor.shape;
    return v;
  }

  // y = xW + b, with x [batch, in], W [in, out], b [1, out].
  Var dense(Var x, Var w, Var b) {
    const Mat& xv = value(x);
    const Mat& wv = value(w);
    const Mat& bv = value(b);
    if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
      throw DimensionError("dense: x is " + shape_str(xv) + ", W is " + shape_str(wv) +
                           ", b is " + shape_str(bv));
    }
    Mat y = xv * wv;
    y.rowwise() += bv.row(0);
    return push(std::move(y), [x, w, b](Graph& g, const Mat& grad) {
      g.accumulate(x, grad * g.value(w).transpose());
      g.accumulate(w, g.value(x).transpose() * grad);
      g.accumulate(b, grad.colwise().sum());
    });
  }

  Var relu(Var x) {
    Mat y = value(x).cwiseMax(T(0));
    return push(std::move(y), [x](Graph& g, const Mat& grad) {
      const Mat& xv = g.value(x);
      Mat dx = (xv.array() > T(0)).select(grad, Mat::Zero(grad.rows(), grad.cols()));
      g.accumulate(x, dx);
    });
  }

  Var add(Var a, Var b) {
    require_same_shape("add", a, b);
    return push(value(a) + value(b), [a, b](Graph& g, const Mat& grad) {
      g.accumulate(a, grad);
      g.accumulate(b, grad);
    });
  }

  Var sub(Var a, Var b) {
    require_same_shape("sub", a, b);
    return push(value(a) - value(b), [a, b](Graph& g, const Mat& grad) {
      g.accumulate(a, grad);
      g.accumulate(b, -grad);
    });
  }

  // Elementwise product.
  Var mul(Var a, Var b) {
    require_same_shape("mul", a, b);
    Mat y = value(a).cwiseProduct(value(b));
    return push(std::move(y), [a, b](Graph& g, const Mat& grad) {
      g.accumulate(a, grad.cwiseProduct(g.value(b)));
      g.accumulate(b, grad.cwiseProduct(g.value(a)));
    });
  }

  Var scale(Var a, T factor) {
    return push(value(a) * factor,
                [a, factor](Graph& g, const Mat& grad) { g.accumulate(a, grad * factor); });
  }

  Var exp(Var a) {
    Mat y = value(a).array().exp().matrix();
    const std::size_t out = nodes_.size();
    return push(std::move(y), [a, out](Graph& g, const Mat& grad) {
      g.accumulate(a, grad.cwiseProduct(g.nodes_[out].value));
    });
  }

  // Column-wise concatenation [a, b].
  Var concat(Var a, Var b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.rows() != bv.rows()) {
      throw DimensionError("concat: row mismatch " + shape_str(av) + " vs " + shape_str(bv));
    }
    Mat y(av.rows(), av.cols() + bv.cols());
    y << av, bv;
    const auto split = av.cols();
    return push(std::move(y), [a, b, split](Graph& g, const Mat& grad) {
      g.accumulate(a, grad.leftCols(split));
      g.accumulate(b, grad.rightCols(grad.cols() - split));
    });
  }

  Var columns(Var a, Eigen::Index begin, Eigen::Index count) {
    const Mat& av = value(a);
    if (begin < 0 || count < 0 || begin + count > av.cols()) {
      throw DimensionError("columns: slice out of range for " + shape_str(av));
    }
    Mat y = av.middleCols(begin, count);
    return push(std::move(y), [a, begin, count](Graph& g, const Mat& grad) {
      const Mat& src = g.value(a);
      Mat full = Mat::Zero(src.rows(), src.cols());
      full.middleCols(begin, count) = grad;
      g.accumulate(a, full);
    });
  }

  // Per-row Euclidean norm, [batch, 1]. The subgradient at 0 is taken as 0.
  Var row_norm(Var a) {
    Mat y = value(a).rowwise().norm();
    const std::size_t out = nodes_.size();
    return push(std::move(y), [a, out](Graph& g, const Mat& grad) {
      const Mat& av = g.value(a);
      const Mat& n = g.nodes_[out].value;
      Mat da(av.rows(), av.cols());
      for (Eigen::Index r = 0; r < av.rows(); ++r) {
        if (n(r, 0) > T(0)) {
          da.row(r) = av.row(r) * (grad(r, 0) / n(r, 0));
        } else {
          da.row(r).setZero();
        }
      }
      g.accumulate(a, da);
    });
  }

  Var row_sum_squares(Var a) {
    Mat y = value(a).rowwise().squaredNorm();
    return push(std::move(y), [a](Graph& g, const Mat& grad) {
      const Mat& av = g.value(a);
      Mat da = av.array().colwise() * (T(2) * grad.col(0).array());
      g.accumulate(a, da);
    });
  }

  // Per-row (a.b) / (|a||b| + guard), [batch, 1].
  Var row_cosine(Var a, Var b, T guard) {
    require_same_shape("row_cosine", a, b);
    const Mat& av = value(a);
    const Mat& bv = value(b);
    Mat y(av.rows(), 1);
    for (Eigen::Index r = 0; r < av.rows(); ++r) {
      y(r, 0) = av.row(r).dot(bv.row(r)) / (av.row(r).norm() * bv.row(r).norm() + guard);
    }
    return push(std::move(y), [a, b, guard](Graph& g, const Mat& grad) {
      const Mat& av = g.value(a);
      const Mat& bv = g.value(b);
      Mat da(av.rows(), av.cols());
      Mat db(bv.rows(), bv.cols());
      for (Eigen::Index r = 0; r < av.rows(); ++r) {
        const T na = av.row(r).norm();
        const T nb = bv.row(r).norm();
        const T s = av.row(r).dot(bv.row(r));
        const T denom = na * nb + guard;
        const T gr = grad(r, 0);
        // d/da [s / (na nb + guard)] = b / D - s nb a / (na D^2)
        da.row(r) = bv.row(r) * (gr / denom);
        db.row(r) = av.row(r) * (gr / denom);
        if (na > T(0)) da.row(r) -= av.row(r) * (gr * s * nb / (na * denom * denom));
        if (nb > T(0)) db.row(r) -= bv.row(r) * (gr * s * na / (nb * denom * denom));
      }
      g.accumulate(a, da);
      g.accumulate(b, db);
    });
  }

  // Per-row -log softmax(logits)[label], [batch, 1], with the max-shift.
  Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const Mat& lv = value(logits);
    if (static_cast<Eigen::Index>(labels.size()) != lv.rows()) {
      throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                           " labels for logits " + shape_str(lv));
    }
    Mat probs(lv.rows(), lv.cols());
    Mat y(lv.rows(), 1);
    std::vector<int> owned(labels.begin(), labels.end());
    for (Eigen::Index r = 0; r < lv.rows(); ++r) {
      const int label = owned[static_cast<std::size_t>(r)];
      if (label < 0 || label >= lv.cols()) {
        throw IndexError("softmax_cross_entropy: label " + std::to_string(label) +
                         " outside [0, " + std::to_string(lv.cols()) + ")");
      }
      const T m = lv.row(r).maxCoeff();
      auto shifted = (lv.row(r).array() - m).exp();
      const T z = shifted.sum();
      probs.row(r) = shifted / z;
      y(r, 0) = m + std::log(z) - lv(r, label);
    }
    return push(std::move(y), [logits, probs = std::move(probs), owned = std::move(owned)](
                                  Graph& g, const Mat& grad) {
      Mat d = probs;
      for (Eigen::Index r = 0; r < d.rows(); ++r) {
        d(r, owned[static_cast<std::size_t>(r)]) -= T(1);
        d.row(r) *= grad(r, 0);
      }
      g.accumulate(logits, d);
    });
  }

  // Per-row KL(N(mu, sigma^2) || N(0, 1)), [batch, 1]. sigma must be > 0.
  Var kl_standard_normal(Var mu, Var sigma) {
    require_same_shape("kl_standard_normal", mu, sigma);
    const Mat& m = value(mu);
    const Mat& s = value(sigma);
    if (!(s.array() > T(0)).all()) {
      throw ContractError("kl_standard_normal: sigma must be strictly positive");
    }
    Mat y = (T(0.5) * (m.array().square() + s.array().square() - T(2) * s.array().log() - T(1)))
                .rowwise()
                .sum()
                .matrix();
    return push(std::move(y), [mu, sigma](Graph& g, const Mat& grad) {
      const auto gcol = grad.col(0).array();
      const Mat& mv = g.value(mu);
      const Mat& sv = g.value(sigma);
      Mat dmu = mv.array().colwise() * gcol;
      Mat dsig = (sv.array() - sv.array().inverse()).colwise() * gcol;
      g.accumulate(mu, dmu);
      g.accumulate(sigma, dsig);
    });
  }

  // Mean over every entry; returns a 1 x 1 node.
  Var mean(Var a) {
    const Mat& av = value(a);
    if (av.size() == 0) throw DimensionError("mean of an empty tensor");
    Mat y(1, 1);
    y(0, 0) = av.mean();
    return push(std::move(y), [a](Graph& g, const Mat& grad) {
      const Mat& src = g.value(a);
      g.accumulate(a, Mat::Constant(src.rows(), src.cols(), grad(0, 0) / T(src.size())));
    });
  }

  const Mat& value(Var v) const {
    if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
    return nodes_[v.id].value;
  }

  T scalar(Var v) const {
    const Mat& m = value(v);
    if (m.size() != 1) throw ContractError("scalar() on non-scalar node " + shape_str(m));
    return m(0, 0);
  }

  std::size_t size() const { return nodes_.size(); }

  // Exact gradients of `loss` for every parameter leaf on this graph.
  // Parameters not reachable from `loss` get a zero tensor.
  Gradients<T> backward(Var loss) {
    const Mat& root = value(loss);
    if (root.rows() != 1 || root.cols() != 1) {
      throw ContractError("backward requires a scalar root, got " + shape_str(root));
    }
    grads_.assign(nodes_.size(), Mat());
    grads_[loss.id] = Mat::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (grads_[i].size() == 0 || !nodes_[i].backward) continue;
      const Mat grad = grads_[i];
      nodes_[i].backward(*this, grad);
    }
    Gradients<T> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.param_name.empty()) continue;
      auto [it, inserted] = out.try_emplace(n.param_name, Tensor<T>{n.param_shape, Mat()});
      if (inserted) it->second.values = Mat::Zero(n.value.rows(), n.value.cols());
      if (grads_[i].size() != 0) it->second.values += grads_[i];
    }
    grads_.clear();
    return out;
  }

 private:
  using Backward = std::function<void(Graph&, const Mat&)>;

  struct Node {
    Mat value;
    Backward backward;
    std::string param_name;
    std::vector<std::uint32_t> param_shape;
  };

  Var push(Mat value, Backward backward) {
    nodes_.push_back(Node{std::move(value), std::move(backward), {}, {}});
    return Var{nodes_.size() - 1};
  }

  void accumulate(Var v, const Mat& grad) {
    Mat& slot = grads_[v.id];
    if (slot.size() == 0) {
      slot = grad;
    } else {
      slot += grad;
    }
  }

  void require_same_shape(const char* op, Var a, Var b) const {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
      throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(av) + " vs " +
                           shape_str(bv));
    }
  }

  static std::string shape_str(const Mat& m) {
    return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
  }

  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
};

// Scalar helper: -log softmax(logits)[label] for a single logit vector.
template <typename T>
T softmax_cross_entropy(std::span<const T> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw IndexError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                     std::to_string(logits.size()) + ")");
  }
  T m = logits[0];
  for (T l : logits) m = std::max(m, l);
  T z = 0;
  for (T l : logits) z += std::exp(l - m);
  return m + std::log(z) - logits[static_cast<std::size_t>(label)];
}

}  // namespace zsr
