#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "uda/autodiff.hpp"
#include "uda/optim.hpp"

using namespace uda;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t = Tensor::zeros({r, c});
  for (double& v : t.data()) v = n(rng);
  return t;
}

}  // namespace

TEST(Forward, SigmoidOfZeroIsHalf) {
  Tape tape;
  EXPECT_DOUBLE_EQ(sigmoid(tape.constant(Tensor::scalar(0.0))).item(), 0.5);
}

TEST(Forward, IdentityMatmulReturnsOperand) {
  Tape tape;
  std::mt19937_64 rng(1);
  Tensor a = random_matrix(3, 4, rng);
  Var out = matmul(tape.constant(Tensor::identity(3)), tape.constant(a));
  EXPECT_EQ(out.value(), a);
}

TEST(Forward, SoftmaxOfZerosIsUniform) {
  Tape tape;
  Var s = softmax_row(tape.constant(Tensor::vector({0, 0, 0})));
  for (double v : s.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Forward, ShapeMismatchThrows) {
  Tape tape;
  Var a = tape.constant(Tensor::zeros({2, 3}));
  Var b = tape.constant(Tensor::zeros({2, 3}));
  EXPECT_THROW(matmul(a, b), ShapeError);
  EXPECT_THROW(add(a, tape.constant(Tensor::zeros({4}))), ShapeError);
}

TEST(Forward, NonFiniteResultNamesTheOp) {
  Tape tape;
  try {
    log(tape.constant(Tensor::vector({0.0})));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
  }
}

TEST(Forward, DispatchMatchesNamedOps) {
  Tape tape;
  Var x = tape.constant(Tensor::vector({-1.0, 2.0}));
  const Var in[] = {x};
  EXPECT_EQ(forward_op(Op::relu, in).value(), relu(x).value());
  EXPECT_EQ(forward_op(Op::sum, in).item(), 1.0);
}

TEST(Backward, SquareAtThree) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0));
  Gradients g = tape.backward(x * x);
  EXPECT_DOUBLE_EQ(g.of(x).item(), 6.0);
}

TEST(Backward, ReluPiecewise) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({-1.0, 2.0}));
  Gradients g = tape.backward(sum(relu(x)));
  EXPECT_EQ(g.of(x), Tensor::vector({0.0, 1.0}));
}

TEST(Backward, ReluTieUsesZeroSubgradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({0.0}));
  EXPECT_EQ(tape.backward(sum(relu(x))).of(x)[0], 0.0);
}

TEST(Backward, NegLogSigmoidAtZeroWeight) {
  Tape tape;
  Var w = tape.leaf(Tensor::scalar(0.0));
  Var z = tape.constant(Tensor::scalar(1.0));
  Gradients g = tape.backward(-log(sigmoid(w * z)));
  EXPECT_DOUBLE_EQ(g.of(w).item(), -0.5);
}

TEST(Backward, UnreachableLeafGetsZero) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
  Var y = tape.leaf(Tensor::vector({3.0, 4.0}));
  Gradients g = tape.backward(sum(x));
  EXPECT_FALSE(g.reached(y));
  EXPECT_EQ(g.of(y), Tensor::zeros({2}));
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(tape.backward(x * x), ShapeError);
}

TEST(Backward, TapeConsumedOnce) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(1.0));
  Var loss = x * x;
  tape.backward(loss);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss), ContractError);
}

TEST(Backward, LinearityOverIndependentLosses) {
  std::mt19937_64 rng(7);
  const Tensor w0 = random_matrix(3, 2, rng);
  const Tensor x0 = random_matrix(4, 3, rng);
  auto first = [&](Var w, Var x) { return mean(sigmoid(matmul(x, w))); };
  auto second = [&](Var w, Var x) { return sum(log_softmax_row(matmul(x, w))); };

  Tensor g1, g2, g12;
  {
    Tape t;
    Var w = t.leaf(w0);
    g1 = t.backward(first(w, t.constant(x0))).of(w);
  }
  {
    Tape t;
    Var w = t.leaf(w0);
    g2 = t.backward(second(w, t.constant(x0))).of(w);
  }
  {
    Tape t;
    Var w = t.leaf(w0);
    Var x = t.constant(x0);
    g12 = t.backward(first(w, x) + second(w, x)).of(w);
  }
  for (std::size_t i = 0; i < g12.size(); ++i) EXPECT_NEAR(g12[i], g1[i] + g2[i], 1e-12);
}

TEST(Backward, BroadcastBiasGradientSumsRows) {
  Tape tape;
  Var x = tape.constant(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
  Var b = tape.leaf(Tensor::vector({0.5, -0.5}));
  Gradients g = tape.backward(sum(x + b));
  EXPECT_EQ(g.of(b), Tensor::vector({3.0, 3.0}));
}

TEST(SecondOrder, GradientOfSquaredDerivative) {
  // y = x^3, dy/dx = 3x^2, d/dx (dy/dx)^2 = 36 x^3.
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(1.5));
  Var y = x * x * x;
  const Var wrt[] = {x};
  Var dy = tape.grad(y, wrt, true).front();
  EXPECT_NEAR(dy.item(), 3 * 1.5 * 1.5, 1e-12);
  Gradients g = tape.backward(dy * dy);
  EXPECT_NEAR(g.of(x).item(), 36 * std::pow(1.5, 3), 1e-9);
}

TEST(SecondOrder, InputGradientOfMlpIsDifferentiable) {
  std::mt19937_64 rng(3);
  const Tensor w1 = random_matrix(3, 5, rng);
  const Tensor w2 = random_matrix(5, 1, rng);
  const Tensor z0 = random_matrix(4, 3, rng);
  auto f = [&](Tape& t, std::span<const Var> p) {
    Var z = t.leaf(z0);
    Var h = matmul(sigmoid(matmul(z, p[0])), p[1]);
    const Var wrt[] = {z};
    Var gz = t.grad(sum(h), wrt, true).front();
    return mean(pow(row_sum(gz * gz), 3.0));
  };
  EXPECT_LT(grad_check(f, {w1, w2}, 1e-5), 1e-6);
}

TEST(GradCheck, SquareFunction) {
  auto f = [](Tape&, std::span<const Var> p) { return sum(p[0] * p[0]); };
  EXPECT_LT(grad_check(f, {Tensor::scalar(3.0)}, 1e-5), 1e-6);
}

TEST(GradCheck, EveryPrimitive) {
  std::mt19937_64 rng(11);
  const Tensor a0 = random_matrix(3, 4, rng);
  const Tensor b0 = random_matrix(4, 2, rng);
  const Tensor c0 = random_matrix(3, 2, rng);
  auto f = [&](Tape&, std::span<const Var> p) {
    Var m = matmul(p[0], p[1]);
    Var s = softmax_row(m) * sigmoid(p[2]);
    Var o = outer_product(m, exp(scale(p[2], 0.3)));
    Var l = log(sigmoid(m) + 0.5) + log_softmax_row(p[2]);
    return mean(s) + sum(o) * 0.01 + sum(l) + mean(relu(m + 10.0)) +
           sum(pick(p[2], {0, 1, 1})) + scale(sum(pow(row_sum(p[2] * p[2]), 2.0)), 1.0 / 6.0);
  };
  EXPECT_LT(grad_check(f, {a0, b0, c0}, 1e-5), 1e-6);
}

TEST(GradCheck, StepOutsideRangeRejected) {
  auto f = [](Tape&, std::span<const Var> p) { return sum(p[0]); };
  EXPECT_THROW(grad_check(f, {Tensor::scalar(1.0)}, 1e-2), ContractError);
}

TEST(Determinism, IdenticalSeedIdenticalParameters) {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor w = random_matrix(3, 2, rng);
    const Tensor x = random_matrix(8, 3, rng);
    Optimizer opt({OptimizerKind::adam, 1e-2});
    for (int k = 0; k < 20; ++k) {
      Tape t;
      Var wv = t.leaf(w);
      Gradients g = t.backward(mean(sigmoid(matmul(t.constant(x), wv))));
      Tensor* p[] = {&w};
      const Tensor gr[] = {g.of(wv)};
      opt.step(p, gr);
    }
    return w;
  };
  EXPECT_EQ(run(), run());
}

TEST(Optimizer, SgdStep) {
  Tensor theta = Tensor::scalar(1.0);
  Optimizer opt({OptimizerKind::sgd, 0.1});
  Tensor* p[] = {&theta};
  const Tensor g[] = {Tensor::scalar(2.0)};
  opt.step(p, g);
  EXPECT_DOUBLE_EQ(theta.item(), 0.8);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  for (double grad : {1e-3, 0.5, -7.0}) {
    Tensor theta = Tensor::scalar(2.0);
    Optimizer opt({OptimizerKind::adam, 1e-3});
    Tensor* p[] = {&theta};
    const Tensor g[] = {Tensor::scalar(grad)};
    opt.step(p, g);
    EXPECT_NEAR(std::abs(theta.item() - 2.0), 1e-3, 1e-7);
    EXPECT_EQ(opt.steps(), 1u);
  }
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    Tensor theta = Tensor::vector({1.0, -2.0});
    Optimizer opt({kind, 0.1});
    Tensor* p[] = {&theta};
    const Tensor g[] = {Tensor::zeros({2})};
    opt.step(p, g);
    EXPECT_EQ(theta, Tensor::vector({1.0, -2.0}));
  }
}

TEST(Optimizer, ShapeMismatchRejected) {
  Tensor theta = Tensor::vector({1.0, -2.0});
  Optimizer opt;
  Tensor* p[] = {&theta};
  const Tensor g[] = {Tensor::zeros({3})};
  EXPECT_THROW(opt.step(p, g), ShapeError);
}
