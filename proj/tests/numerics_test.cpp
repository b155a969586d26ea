#include <cmath>
#include <random>
#include <vector>

#include "gtest/gtest.h"
#include "zsr/diagnostics.hpp"
#include "zsr/numerics/adam.hpp"
#include "zsr/numerics/gradcheck.hpp"
#include "zsr/numerics/graph.hpp"

namespace zsr {
namespace {

using Mat = Matrix<double>;

Mat row(std::initializer_list<double> v) {
  Mat m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

Tensor<double> tensor(std::vector<std::uint32_t> shape, std::initializer_list<double> v) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  Eigen::Index i = 0;
  for (double x : v) t.values.data()[i++] = x;
  return t;
}

TEST(DenseTest, IdentityWeights) {
  Graph<double> g;
  Var y = g.dense(g.constant(row({1, 2})), g.constant(Mat::Identity(2, 2)),
                  g.constant(Mat::Zero(1, 2)));
  EXPECT_EQ(g.value(y), row({1, 2}));
}

TEST(DenseTest, ZeroInputGivesBias) {
  Graph<double> g;
  Mat w(2, 2);
  w << 5, -7, 11, 13;
  Var y = g.dense(g.constant(row({0, 0})), g.constant(w), g.constant(row({3, 4})));
  EXPECT_EQ(g.value(y), row({3, 4}));
}

TEST(DenseTest, HandMultiply) {
  Graph<double> g;
  Mat w(2, 2);
  w << 1, 2, 3, 4;
  Var y = g.dense(g.constant(row({1, 1})), g.constant(w), g.constant(row({0, 0})));
  // [1 1] * [[1 2] [3 4]] = [1+3, 2+4]
  EXPECT_EQ(g.value(y), row({4, 6}));
}

TEST(DenseTest, ShapeMismatchNamesOperands) {
  Graph<double> g;
  try {
    g.dense(g.constant(row({1, 2, 3})), g.constant(Mat::Identity(2, 2)),
            g.constant(Mat::Zero(1, 2)));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[1x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2x2]"), std::string::npos);
  }
}

TEST(ReluTest, Definition) {
  Graph<double> g;
  EXPECT_EQ(g.value(g.relu(g.constant(row({-1, 0, 2})))), row({0, 0, 2}));
  EXPECT_EQ(g.value(g.relu(g.constant(row({-1, -3, -0.5})))), row({0, 0, 0}));
  EXPECT_EQ(g.value(g.relu(g.constant(row({1, 3, 0.5})))), row({1, 3, 0.5}));
}

TEST(SoftmaxCrossEntropyTest, Examples) {
  const std::vector<double> equal{0.3, 0.3, 0.3};
  for (int label = 0; label < 3; ++label) {
    EXPECT_NEAR(softmax_cross_entropy<double>(equal, label), std::log(3.0), 1e-12);
  }
  const std::vector<double> saturated{100, 0};
  EXPECT_NEAR(softmax_cross_entropy<double>(saturated, 0), 0.0, 1e-12);
  const std::vector<double> small{1, 2};
  EXPECT_NEAR(softmax_cross_entropy<double>(small, 0), std::log(1 + std::exp(1.0)), 1e-12);
  EXPECT_NEAR(softmax_cross_entropy<double>(small, 0), 1.3133, 5e-5);
}

TEST(SoftmaxCrossEntropyTest, LabelOutOfRange) {
  const std::vector<double> logits{1, 2};
  EXPECT_THROW(softmax_cross_entropy<double>(logits, 2), IndexError);
  EXPECT_THROW(softmax_cross_entropy<double>(logits, -1), IndexError);
  Graph<double> g;
  const std::vector<int> labels{5};
  EXPECT_THROW(g.softmax_cross_entropy(g.constant(row({1, 2})), labels), IndexError);
}

TEST(SoftmaxCrossEntropyTest, NoOverflowForHugeLogits) {
  const std::vector<double> logits{1e6, -1e6, 0};
  EXPECT_TRUE(std::isfinite(softmax_cross_entropy<double>(logits, 1)));
  EXPECT_NEAR(softmax_cross_entropy<double>(logits, 1), 2e6, 1e-3);
  const std::vector<float> flogits{1e4f, 0.f};
  EXPECT_TRUE(std::isfinite(softmax_cross_entropy<float>(flogits, 1)));
}

TEST(SoftmaxCrossEntropyTest, ShiftInvariance) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(5), shifted(5);
    const double c = n(rng) * 100;
    for (int i = 0; i < 5; ++i) {
      logits[i] = n(rng);
      shifted[i] = logits[i] + c;
    }
    const int label = trial % 5;
    EXPECT_NEAR(softmax_cross_entropy<double>(logits, label),
                softmax_cross_entropy<double>(shifted, label), 1e-10);
  }
}

TEST(BackwardTest, SquareDerivative) {
  Graph<double> g;
  Var w = g.parameter("w", tensor({1}, {3.0}));
  Var loss = g.mean(g.mul(w, w));
  const auto grads = g.backward(loss);
  EXPECT_DOUBLE_EQ(grads.at("w").values(0, 0), 6.0);
}

TEST(BackwardTest, UnusedParameterGetsExactZero) {
  Graph<double> g;
  Var w = g.parameter("w", tensor({2}, {3.0, -1.0}));
  g.parameter("unused", tensor({2, 2}, {1, 2, 3, 4}));
  Var loss = g.mean(g.mul(w, w));
  const auto grads = g.backward(loss);
  ASSERT_TRUE(grads.contains("unused"));
  EXPECT_EQ(grads.at("unused").shape, (std::vector<std::uint32_t>{2, 2}));
  EXPECT_TRUE((grads.at("unused").values.array() == 0.0).all());
}

TEST(BackwardTest, ParameterUsedOnlyAfterRootIsZero) {
  Graph<double> g;
  Var w = g.parameter("w", tensor({1}, {2.0}));
  Var v = g.parameter("v", tensor({1}, {5.0}));
  Var loss = g.mean(w);
  g.mean(g.mul(v, w));  // built after the loss; unreachable from it
  const auto grads = g.backward(loss);
  EXPECT_EQ(grads.at("w").values(0, 0), 1.0);
  EXPECT_EQ(grads.at("v").values(0, 0), 0.0);
}

TEST(BackwardTest, NonScalarRootRejected) {
  Graph<double> g;
  Var w = g.parameter("w", tensor({2}, {1.0, 2.0}));
  EXPECT_THROW(g.backward(w), ContractError);
}

TEST(BackwardTest, SharedParameterAccumulates) {
  Graph<double> g;
  Var w = g.parameter("w", tensor({1}, {3.0}));
  Var loss = g.mean(g.add(g.mul(w, w), g.scale(w, 2.0)));  // w^2 + 2w
  EXPECT_DOUBLE_EQ(g.backward(loss).at("w").values(0, 0), 8.0);
}

// Central differences on each primitive in isolation.
class PrimitiveGradientTest : public ::testing::Test {
 protected:
  GradCheckReport check(const GraphObjective<double>& f, std::vector<std::string> names) {
    ParameterSet<double> subset;
    for (const auto& n : names) subset[n] = params_.at(n);
    return finite_diff_check<double>(f, subset, 1e-5);
  }

  void SetUp() override {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    auto fill = [&](std::vector<std::uint32_t> shape) {
      Tensor<double> t = Tensor<double>::zeros(std::move(shape));
      for (Eigen::Index i = 0; i < t.values.size(); ++i) t.values.data()[i] = u(rng);
      return t;
    };
    params_["a"] = fill({3, 4});
    params_["b"] = fill({3, 4});
    params_["w"] = fill({4, 5});
    params_["bias"] = fill({5});
  }

  ParameterSet<double> params_;
};

TEST_F(PrimitiveGradientTest, DenseReluSoftmax) {
  const std::vector<int> labels{0, 4, 2};
  auto r = check([&](Graph<double>& g, const ParameterSet<double>& p) {
    Var a = g.parameter("a", p.at("a"));
    Var y = g.dense(a, g.parameter("w", p.at("w")), g.parameter("bias", p.at("bias")));
    Var h = g.relu(g.sub(y, g.constant(Mat::Constant(3, 5, 1.2))));
    return g.mean(g.softmax_cross_entropy(h, labels));
  }, {"a", "w", "bias"});
  EXPECT_LE(r.max_relative_error, 1e-7) << r.worst_parameter;
}

TEST_F(PrimitiveGradientTest, CosineNormKl) {
  auto r = check([&](Graph<double>& g, const ParameterSet<double>& p) {
    Var a = g.parameter("a", p.at("a"));
    Var b = g.parameter("b", p.at("b"));
    Var cos = g.mean(g.row_cosine(a, b, 1e-12));
    Var norm = g.mean(g.row_norm(g.sub(a, b)));
    Var sq = g.mean(g.row_sum_squares(b));
    Var kl = g.mean(g.kl_standard_normal(g.columns(a, 1, 2), g.exp(g.columns(b, 0, 2))));
    Var cat = g.mean(g.concat(a, g.scale(b, -0.5)));
    return g.add(g.add(g.add(cos, norm), g.add(sq, kl)), cat);
  }, {"a", "b"});
  EXPECT_LE(r.max_relative_error, 1e-7) << r.worst_parameter;
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  for (double g0 : {3.5, -0.002}) {
    ParameterSet<double> p{{"x", tensor({1}, {1.0})}};
    auto state = AdamState<double>::init(p, {0.1, 0.9, 0.999, 1e-8});
    adam_step(p, Gradients<double>{{"x", tensor({1}, {g0})}}, state);
    EXPECT_NEAR(p.at("x").values(0, 0), 1.0 - 0.1 * (g0 > 0 ? 1 : -1), 1e-6);
  }
}

TEST(AdamTest, ZeroGradientIsNoOp) {
  ParameterSet<double> p{{"x", tensor({2}, {1.0, -2.0})}};
  auto state = AdamState<double>::init(p, {0.1, 0.9, 0.999, 1e-8});
  adam_step(p, Gradients<double>{{"x", Tensor<double>::zeros({2})}}, state);
  EXPECT_EQ(p.at("x").values, row({1.0, -2.0}));
  EXPECT_EQ(state.step, 1u);
  EXPECT_TRUE((state.first_moment.at("x").values.array() == 0).all());
  EXPECT_TRUE((state.second_moment.at("x").values.array() == 0).all());
}

TEST(AdamTest, TwoConstantSteps) {
  // Oracle: m1 = 0.1, v1 = 0.001 -> mhat = vhat = 1, step 0.1/(1+1e-8);
  // m2 = 0.19, v2 = 0.001999 -> mhat = 0.19/0.19, vhat = 0.001999/0.001999.
  ParameterSet<double> p{{"x", tensor({1}, {0.0})}};
  auto state = AdamState<double>::init(p, {0.1, 0.9, 0.999, 1e-8});
  const Gradients<double> g{{"x", tensor({1}, {1.0})}};
  adam_step(p, g, state);
  adam_step(p, g, state);
  EXPECT_NEAR(p.at("x").values(0, 0), -0.2, 1e-8);
  EXPECT_EQ(state.step, 2u);
}

TEST(AdamTest, MissingGradientKey) {
  ParameterSet<double> p{{"x", tensor({1}, {0.0})}, {"y", tensor({1}, {0.0})}};
  auto state = AdamState<double>::init(p);
  EXPECT_THROW(adam_step(p, Gradients<double>{{"x", tensor({1}, {1.0})}}, state), ContractError);
}

TEST(AdamTest, StepCounterStrictlyIncreases) {
  ParameterSet<double> p{{"x", tensor({1}, {0.0})}};
  auto state = AdamState<double>::init(p);
  for (std::uint64_t i = 1; i <= 5; ++i) {
    adam_step(p, Gradients<double>{{"x", tensor({1}, {0.5})}}, state);
    EXPECT_EQ(state.step, i);
  }
}

TEST(GradCheckTest, QuadraticIsExact) {
  ParameterSet<double> p{{"w", tensor({1}, {0.7})}};
  auto r = finite_diff_check<double>(
      [](Graph<double>& g, const ParameterSet<double>& ps) {
        Var w = g.parameter("w", ps.at("w"));
        return g.mean(g.add(g.scale(g.mul(w, w), 3.0), g.scale(w, -2.0)));
      },
      p, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-9);
}

TEST(GradCheckTest, CorruptedGradientIsCaught) {
  // Doubling the analytic gradient gives |2g - g| / (2|g| + |g|) = 1/3.
  ParameterSet<double> p{{"w", tensor({2}, {0.7, -1.3})}};
  GraphObjective<double> f = [](Graph<double>& g, const ParameterSet<double>& ps) {
    Var w = g.parameter("w", ps.at("w"));
    return g.mean(g.mul(g.mul(w, w), w));
  };
  Graph<double> g;
  Gradients<double> grads = g.backward(f(g, p));
  grads.at("w").values *= 2.0;
  std::function<double(const ParameterSet<double>&)> value_of = [&](const ParameterSet<double>& ps) {
    Graph<double> gg;
    return gg.scalar(f(gg, ps));
  };
  auto r = compare_with_finite_differences<double>(value_of, p, grads, 1e-5);
  EXPECT_NEAR(r.max_relative_error, 1.0 / 3.0, 1e-6);
  EXPECT_FALSE(r.passed(1e-5));
}

TEST(GradCheckTest, NonFiniteLossAborts) {
  ParameterSet<double> p{{"w", tensor({1}, {1e-300})}};
  GraphObjective<double> f = [](Graph<double>& g, const ParameterSet<double>& ps) {
    Var w = g.parameter("w", ps.at("w"));
    // exp(1/w-ish) overflows once w is perturbed
    return g.mean(g.exp(g.scale(w, 1e308)));
  };
  EXPECT_THROW(finite_diff_check<double>(f, p, 1e-5), NumericalError);
}

TEST(GradCheckTest, FullObjectiveOnToyModel) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = check_objective_gradients(seed);
    EXPECT_LE(r.max_relative_error, 1e-5)
        << "seed " << seed << " worst " << r.worst_parameter << "[" << r.worst_index << "]";
    EXPECT_GT(r.entries_checked, 500u);
  }
}

TEST(GradCheckTest, EachTermAlone) {
  for (Term t : kAllTerms) {
    LossOptions only;
    only.enabled.fill(false);
    only.enabled[static_cast<std::size_t>(t)] = true;
    const auto r = check_objective_gradients(5, only);
    EXPECT_LE(r.max_relative_error, 1e-5) << term_name(t) << " worst " << r.worst_parameter;
  }
}

TEST(GradCheckTest, SquaredAndSummedVariants) {
  LossOptions opt;
  opt.squared_l2 = true;
  opt.reduction = Reduction::kSum;
  opt.weights = {0.5, 2.0, 1.0, 0.25, 3.0};
  const auto r = check_objective_gradients(9, opt);
  EXPECT_LE(r.max_relative_error, 1e-5) << r.worst_parameter;
}

}  // namespace
}  // namespace zsr
