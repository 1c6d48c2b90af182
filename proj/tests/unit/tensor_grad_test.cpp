#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ssdrl/adam.h"
#include "ssdrl/grad_check.h"
#include "ssdrl/ops.h"
#include "test_util.h"

namespace ssdrl {
namespace {

using testing::random_tensor;
using TapeD = Tape<double>;
using StoreD = ParamStore<double>;

double check(const ScalarFunction& f, StoreD& store, std::size_t max_elems = 0) {
  GradCheckOptions opt;
  opt.max_elements_per_param = max_elems;
  return grad_check(f, store, opt).max_rel_error;
}

TEST(TensorTest, RejectsZeroExtentAndMismatchedData) {
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  Tensor<float> t(Shape{2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(shape_numel(t.shape()), t.size());
}

TEST(MatmulTest, IdentityTimesMatrix) {
  TapeD t(false);
  Var i = t.constant(Tensor<double>::matrix({{1, 0}, {0, 1}}));
  Var m = t.constant(Tensor<double>::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(t.value(ops::matmul(t, i, m)), Tensor<double>::matrix({{1, 2}, {3, 4}}));
}

TEST(MatmulTest, HandArithmetic) {
  TapeD t(false);
  Var a = t.constant(Tensor<double>::matrix({{1, 0}, {0, 0}}));
  Var b = t.constant(Tensor<double>::matrix({{0, 1}, {1, 0}}));
  EXPECT_EQ(t.value(ops::matmul(t, a, b)), Tensor<double>::matrix({{0, 1}, {0, 0}}));
}

TEST(MatmulTest, ShapeMismatchNamesBothShapes) {
  TapeD t(false);
  Var a = t.constant(Tensor<double>(Shape{2, 3}));
  Var b = t.constant(Tensor<double>(Shape{4, 5}));
  try {
    ops::matmul(t, a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(MatmulTest, BackwardMatchesFiniteDifferences) {
  Rng rng(11);
  StoreD store;
  store.add("a", random_tensor<double>({5, 7}, rng));
  store.add("b", random_tensor<double>({7, 3}, rng));
  const Tensor<double> w = random_tensor<double>({5, 3}, rng);
  auto f = [&](TapeD& t, const StoreD& s) {
    Var p = ops::matmul(t, t.param(s, "a"), t.param(s, "b"));
    return ops::sum(t, ops::mul(t, p, t.constant(w)));
  };
  EXPECT_LT(check(f, store), 1e-6);
}

TEST(ElementwiseTest, ClosedFormValues) {
  TapeD t(false);
  EXPECT_DOUBLE_EQ(t.value(ops::sigmoid(t, t.constant(Tensor<double>::scalar(0))))[0], 0.5);
  EXPECT_DOUBLE_EQ(t.value(ops::relu(t, t.constant(Tensor<double>::scalar(-3))))[0], 0.0);
}

TEST(ElementwiseTest, DomainErrors) {
  TapeD t(false);
  EXPECT_THROW(ops::log(t, t.constant(Tensor<double>::scalar(0))), DomainError);
  EXPECT_THROW(ops::log(t, t.constant(Tensor<double>::scalar(-1))), DomainError);
  EXPECT_THROW(ops::sqrt(t, t.constant(Tensor<double>::scalar(-1e-3))), DomainError);
}

TEST(ElementwiseTest, IncompatibleBroadcastRejected) {
  TapeD t(false);
  Var a = t.constant(Tensor<double>(Shape{2, 3}));
  Var b = t.constant(Tensor<double>(Shape{2}));
  EXPECT_THROW(ops::add(t, a, b), DimensionError);
}

// Inputs kept away from kinks (relu at 0) and domain edges.
Tensor<double> away_from_zero(Shape shape, Rng& rng) {
  Tensor<double> x(std::move(shape));
  for (double& v : x.data()) {
    const double m = rng.uniform(0.2, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return x;
}

TEST(ElementwiseTest, EveryKindMatchesFiniteDifferences) {
  using Unary = std::function<Var(TapeD&, Var)>;
  const std::vector<std::pair<std::string, Unary>> kinds = {
      {"sigmoid", [](TapeD& t, Var x) { return ops::sigmoid(t, x); }},
      {"relu", [](TapeD& t, Var x) { return ops::relu(t, x); }},
      {"tanh", [](TapeD& t, Var x) { return ops::tanh(t, x); }},
      {"exp", [](TapeD& t, Var x) { return ops::exp(t, x); }},
      {"log", [](TapeD& t, Var x) { return ops::log(t, ops::square(t, x)); }},
      {"square", [](TapeD& t, Var x) { return ops::square(t, x); }},
      {"sqrt", [](TapeD& t, Var x) { return ops::sqrt(t, ops::square(t, x)); }},
      {"neg", [](TapeD& t, Var x) { return ops::neg(t, x); }},
      {"scale", [](TapeD& t, Var x) { return ops::scale(t, x, 2.5); }},
      {"add_scalar", [](TapeD& t, Var x) { return ops::add_scalar(t, x, 0.3); }},
      {"clamp", [](TapeD& t, Var x) { return ops::clamp(t, x, -0.5, 0.5); }},
  };
  Rng rng(3);
  for (const auto& [name, op] : kinds) {
    StoreD store;
    store.add("x", away_from_zero({4, 6}, rng));
    // Keep clamp inputs away from its edges as well.
    if (name == "clamp") {
      for (double& v : store.value("x").data()) {
        if (std::abs(std::abs(v) - 0.5) < 0.05) v *= 1.3;
      }
    }
    const Tensor<double> w = random_tensor<double>({4, 6}, rng);
    auto f = [&, op = op](TapeD& t, const StoreD& s) {
      return ops::sum(t, ops::mul(t, op(t, t.param(s, "x")), t.constant(w)));
    };
    EXPECT_LT(check(f, store), 1e-6) << name;
  }
}

TEST(ElementwiseTest, BinaryOpsWithBroadcastMatchFiniteDifferences) {
  using Binary = std::function<Var(TapeD&, Var, Var)>;
  const std::vector<std::pair<std::string, Binary>> kinds = {
      {"add", [](TapeD& t, Var a, Var b) { return ops::add(t, a, b); }},
      {"sub", [](TapeD& t, Var a, Var b) { return ops::sub(t, a, b); }},
      {"mul", [](TapeD& t, Var a, Var b) { return ops::mul(t, a, b); }},
  };
  Rng rng(5);
  for (const auto& [name, op] : kinds) {
    for (const Shape& bshape : {Shape{3, 4, 5}, Shape{4, 5}, Shape{1, 5}, Shape{5}}) {
      StoreD store;
      store.add("a", random_tensor<double>({3, 4, 5}, rng));
      store.add("b", random_tensor<double>(bshape, rng));
      const Tensor<double> w = random_tensor<double>({3, 4, 5}, rng);
      auto f = [&, op = op](TapeD& t, const StoreD& s) {
        Var y = op(t, t.param(s, "a"), t.param(s, "b"));
        return ops::sum(t, ops::mul(t, y, t.constant(w)));
      };
      EXPECT_LT(check(f, store), 1e-6) << name << " " << shape_string(bshape);
    }
  }
}

TEST(BroadcastTest, GradientMassEqualsAxisSumOfExpandedGradient) {
  Rng rng(8);
  TapeD t;
  Var a = t.leaf(random_tensor<double>({3, 4, 5}, rng));
  Var b = t.leaf(random_tensor<double>({5}, rng));
  const Tensor<double> w = random_tensor<double>({3, 4, 5}, rng);
  Var y = ops::sum(t, ops::mul(t, ops::add(t, a, b), t.constant(w)));
  t.backward(y);
  const Tensor<double>& gb = *t.grad(b);
  for (std::size_t j = 0; j < 5; ++j) {
    double expect = 0;
    for (std::size_t i = 0; i < 12; ++i) expect += w[i * 5 + j];
    EXPECT_NEAR(gb[j], expect, 1e-12);
  }
  double mass_a = 0, mass_b = 0;
  for (double g : t.grad(a)->data()) mass_a += g;
  for (double g : gb.data()) mass_b += g;
  EXPECT_NEAR(mass_a, mass_b, 1e-12);
}

TEST(TapeTest, LeafReadTwiceReceivesSum) {
  TapeD t;
  Var x = t.leaf(Tensor<double>::scalar(3.0));
  Var y = ops::add(t, ops::mul(t, x, x), x);  // x² + x
  t.backward(y);
  EXPECT_DOUBLE_EQ((*t.grad(x))[0], 7.0);
}

TEST(TapeTest, ReplayIsBitDeterministic) {
  auto run = [] {
    Rng rng(99);
    StoreD store;
    store.add("w", random_tensor<double>({6, 6}, rng));
    TapeD t;
    Var x = t.constant(random_tensor<double>({2, 3, 6}, rng));
    Var y = ops::tanh(t, ops::linear(t, x, t.param(store, "w")));
    t.backward(ops::mean(t, ops::square(t, y)));
    t.accumulate_into(store);
    return store.grad("w");
  };
  EXPECT_EQ(run(), run());
}

TEST(TapeTest, NoGradTapeRecordsNoBackward) {
  TapeD t(false);
  Var x = t.leaf(Tensor<double>::scalar(1.0));
  EXPECT_FALSE(t.requires_grad(ops::exp(t, x)));
}

TEST(StructuralOpsTest, FiniteDifferences) {
  Rng rng(21);
  StoreD store;
  store.add("x", random_tensor<double>({2, 5, 4}, rng));
  store.add("p", random_tensor<double>({1, 4}, rng));
  store.add("e", random_tensor<double>({3, 4}, rng));
  store.add("w", random_tensor<double>({8, 3}, rng));
  store.add("bias", random_tensor<double>({3}, rng));
  const Tensor<double> wt = random_tensor<double>({2, 3}, rng);
  auto f = [&](TapeD& t, const StoreD& s) {
    Var x = t.param(s, "x");
    Var seq = ops::concat_tokens(t, ops::repeat_batch(t, t.param(s, "p"), 2), x);
    seq = ops::concat_tokens(t, seq, ops::repeat_batch(t, t.param(s, "e"), 2));
    Var first = ops::select_token(t, seq, 0);
    Var pooled = ops::mean_tokens(t, seq, 1, 9);
    Var h = ops::concat_last(t, first, pooled);
    Var o = ops::linear(t, h, t.param(s, "w"), t.param(s, "bias"));
    Var r = ops::reshape(t, o, Shape{6});
    return ops::add(t, ops::sum(t, ops::mul(t, o, t.constant(wt))),
                    ops::mean(t, ops::square(t, r)));
  };
  EXPECT_LT(check(f, store), 1e-6);
}

TEST(StructuralOpsTest, EmptyTokenMeanIsZero) {
  TapeD t(false);
  Var x = t.constant(Tensor<double>(Shape{2, 1, 3}, 4.0));
  const Tensor<double>& m = t.value(ops::mean_tokens(t, x, 1, 1));
  EXPECT_EQ(m.shape(), (Shape{2, 3}));
  EXPECT_EQ(max_abs(m), 0.0);
}

TEST(LayerNormTest, ConstantTokenMapsToZeros) {
  TapeD t(false);
  Var x = t.constant(Tensor<double>::vector({5, 5, 5, 5}));
  Var y = ops::layernorm(t, x, t.constant(Tensor<double>(Shape{4}, 1.0)),
                         t.constant(Tensor<double>(Shape{4}, 0.0)));
  EXPECT_EQ(max_abs(t.value(y)), 0.0);
}

TEST(LayerNormTest, UnitVariancePreservedUpToEpsilon) {
  TapeD t(false);
  Var y = ops::layernorm(t, t.constant(Tensor<double>::vector({1, -1})),
                         t.constant(Tensor<double>(Shape{2}, 1.0)),
                         t.constant(Tensor<double>(Shape{2}, 0.0)));
  EXPECT_NEAR(t.value(y)[0], 1.0, 1e-5);
  EXPECT_NEAR(t.value(y)[1], -1.0, 1e-5);
}

TEST(LayerNormTest, RowStatistics) {
  Rng rng(4);
  TapeD t(false);
  Var y = ops::layernorm(t, t.constant(random_tensor<double>({3, 8}, rng, -3, 3)),
                         t.constant(Tensor<double>(Shape{8}, 1.0)),
                         t.constant(Tensor<double>(Shape{8}, 0.0)));
  const Tensor<double>& v = t.value(y);
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 8; ++j) mean += v[r * 8 + j] / 8;
    for (std::size_t j = 0; j < 8; ++j) var += (v[r * 8 + j] - mean) * (v[r * 8 + j] - mean) / 8;
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_LT(std::abs(var - 1.0), 1e-3);
  }
}

TEST(LayerNormTest, RejectsWidthOne) {
  TapeD t(false);
  EXPECT_THROW(ops::layernorm(t, t.constant(Tensor<double>(Shape{3, 1})),
                              t.constant(Tensor<double>(Shape{1}, 1.0)),
                              t.constant(Tensor<double>(Shape{1}))),
               DimensionError);
}

TEST(LayerNormTest, FiniteDifferences) {
  Rng rng(6);
  StoreD store;
  store.add("x", random_tensor<double>({3, 8}, rng));
  store.add("g", random_tensor<double>({8}, rng, 0.5, 1.5));
  store.add("b", random_tensor<double>({8}, rng));
  const Tensor<double> w = random_tensor<double>({3, 8}, rng);
  auto f = [&](TapeD& t, const StoreD& s) {
    Var y = ops::layernorm(t, t.param(s, "x"), t.param(s, "g"), t.param(s, "b"));
    return ops::sum(t, ops::mul(t, y, t.constant(w)));
  };
  EXPECT_LT(check(f, store), 1e-6);
}

TEST(AttentionOpTest, FiniteDifferencesAndPathAgreement) {
  Rng rng(12);
  StoreD store;
  store.add("q", random_tensor<double>({2, 5, 4}, rng));
  store.add("k", random_tensor<double>({2, 5, 4}, rng));
  store.add("v", random_tensor<double>({2, 5, 4}, rng));
  const Tensor<double> w = random_tensor<double>({2, 5, 4}, rng);
  auto f = [&](TapeD& t, const StoreD& s) {
    Var y = ops::softmax_attention(t, t.param(s, "q"), t.param(s, "k"), t.param(s, "v"));
    return ops::sum(t, ops::mul(t, y, t.constant(w)));
  };
  EXPECT_LT(check(f, store), 1e-6);

  TapeD with_grad, without_grad(false);
  auto eval = [&](TapeD& t) {
    return t.value(ops::softmax_attention(t, t.leaf(store.value("q")), t.leaf(store.value("k")),
                                          t.leaf(store.value("v"))));
  };
  EXPECT_EQ(eval(with_grad), eval(without_grad));
}

TEST(RandomShapesTest, EveryOpPassesFiniteDifferencesOnRandomExtents) {
  Rng rng(1234);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t m = rng.uniform_int(1, 64);
    const std::size_t k = rng.uniform_int(2, 64);
    const std::size_t n = rng.uniform_int(1, 64);
    StoreD store;
    store.add("x", random_tensor<double>({m, k}, rng));
    store.add("w", random_tensor<double>({k, n}, rng, -0.3, 0.3));
    store.add("g", random_tensor<double>({k}, rng, 0.5, 1.5));
    store.add("b", random_tensor<double>({k}, rng));
    auto f = [&](TapeD& t, const StoreD& s) {
      Var x = ops::layernorm(t, t.param(s, "x"), t.param(s, "g"), t.param(s, "b"));
      Var h = ops::matmul(t, x, t.param(s, "w"));
      Var a = ops::add(t, ops::sigmoid(t, h), ops::tanh(t, h));
      Var e = ops::exp(t, ops::scale(t, h, 0.1));
      Var l = ops::log(t, ops::add_scalar(t, ops::square(t, h), 1.0));
      return ops::mean(t, ops::add(t, ops::mul(t, a, e), l));
    };
    EXPECT_LT(check(f, store, 48), 1e-4) << m << "x" << k << "x" << n;
  }
}

TEST(AdamTest, ZeroGradientLeavesValuesAndCountsStep) {
  ParamStore<double> store;
  store.add("w", Tensor<double>::vector({1.0, -2.0}));
  Adam<double> adam;
  EXPECT_TRUE(adam.step(store));
  EXPECT_EQ(store.value("w"), Tensor<double>::vector({1.0, -2.0}));
  EXPECT_EQ(adam.steps(), 1);
}

TEST(AdamTest, FirstStepIsMinusLearningRate) {
  ParamStore<double> store;
  store.add("w", Tensor<double>::scalar(0.0));
  store.entry("w").grad[0] = 1.0;
  Adam<double> adam(AdamConfig{1e-4});
  adam.step(store);
  EXPECT_NEAR(store.value("w")[0], -1e-4, 1e-12);
  EXPECT_EQ(store.grad("w")[0], 0.0);
}

TEST(AdamTest, QuadraticDescent) {
  ParamStore<double> store;
  store.add("w", Tensor<double>::scalar(1.0));
  Adam<double> adam(AdamConfig{1e-2});
  for (int i = 0; i < 100; ++i) {
    store.entry("w").grad[0] = 2.0 * store.value("w")[0];
    adam.step(store);
  }
  EXPECT_LT(std::abs(store.value("w")[0]), 0.5);
}

TEST(AdamTest, NonFiniteGradientAbortsWholeStore) {
  ParamStore<double> store;
  store.add("a", Tensor<double>::scalar(1.0));
  store.add("b", Tensor<double>::scalar(2.0));
  store.entry("a").grad[0] = 0.5;
  store.entry("b").grad[0] = std::nan("");
  Adam<double> adam;
  EXPECT_FALSE(adam.step(store));
  EXPECT_EQ(store.value("a")[0], 1.0);
  EXPECT_EQ(store.value("b")[0], 2.0);
  EXPECT_EQ(adam.steps(), 0);
}

TEST(ClipTest, PostClipNormWithinBound) {
  Rng rng(2);
  ParamStore<double> store;
  store.add("a", random_tensor<double>({10}, rng));
  store.add("b", random_tensor<double>({3, 3}, rng));
  for (auto& [_, e] : store.entries()) e.grad = random_tensor<double>(e.value.shape(), rng, -5, 5);
  const double before = store.clip_grad_norm(0.5);
  EXPECT_GT(before, 0.5);
  EXPECT_LE(store.grad_norm(), 0.5 + 1e-6);
}

TEST(GradCheckTest, SumHasUnitGradient) {
  Rng rng(1);
  StoreD store;
  store.add("x", random_tensor<double>({3, 4}, rng));
  auto f = [](TapeD& t, const StoreD& s) { return ops::sum(t, t.param(s, "x")); };
  const GradCheckResult r = grad_check(f, store);
  EXPECT_LT(r.max_rel_error, 1e-10);
  EXPECT_EQ(r.checked, 12u);
}

TEST(GradCheckTest, NonFiniteFunctionThrows) {
  StoreD store;
  store.add("x", Tensor<double>::scalar(1000.0));
  auto f = [](TapeD& t, const StoreD& s) { return ops::exp(t, t.param(s, "x")); };
  EXPECT_THROW(grad_check(f, store), NumericError);
}

}  // namespace
}  // namespace ssdrl
