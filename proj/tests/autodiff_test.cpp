#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>

#include "fedda/autodiff/adam.hpp"
#include "fedda/autodiff/grad_check.hpp"
#include "fedda/autodiff/ops.hpp"
#include "test_util.hpp"

namespace fedda::ad {
namespace {

using testing::random_away_from_zero;
using testing::random_tensor;

TEST(CoreOps, MatmulIdentity) {
  Tape tape;
  auto a = tape.constant(Tensor::from({2, 2}, {1, 2, 3, 4}));
  auto eye = tape.constant(Tensor::from({2, 2}, {1, 0, 0, 1}));
  EXPECT_EQ(matmul(a, eye).value(), Tensor::from({2, 2}, {1, 2, 3, 4}));
}

TEST(CoreOps, SumAndMean) {
  Tape tape;
  EXPECT_EQ(sum(tape.constant(Tensor::ones({2, 3}))).value().item(), 6.0);
  EXPECT_EQ(mean(tape.constant(Tensor::from({4}, {1, 2, 3, 6}))).value().item(), 3.0);
}

TEST(CoreOps, ShapeMismatchNamesBothShapes) {
  Tape tape;
  auto a = tape.constant(Tensor::zeros({2, 3}));
  auto b = tape.constant(Tensor::zeros({3, 2}));
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[3,2]"), std::string::npos);
  }
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(CoreOps, MatmulRejectsLowRank) {
  Tape tape;
  auto v = tape.constant(Tensor::ones({3}));
  auto m = tape.constant(Tensor::ones({3, 3}));
  EXPECT_THROW(matmul(v, m), ShapeError);
  EXPECT_THROW(matmul(m, v), ShapeError);
}

TEST(CoreOps, TrailingSingletonBroadcast) {
  Tape tape;
  auto a = tape.constant(Tensor::from({2, 2}, {1, 2, 3, 4}));
  auto col = tape.constant(Tensor::from({2, 1}, {10, 20}));
  EXPECT_EQ(add(a, col).value(), Tensor::from({2, 2}, {11, 12, 23, 24}));
  auto s = tape.constant(Tensor::scalar(2.0));
  EXPECT_EQ(mul(a, s).value(), Tensor::from({2, 2}, {2, 4, 6, 8}));
  // A leading-axis broadcast is not supported.
  auto row = tape.constant(Tensor::from({1, 2}, {1, 1}));
  EXPECT_THROW(add(a, row), ShapeError);
}

TEST(CoreOps, RecordsTapeEntryOnlyWhenGradNeeded) {
  Tape tape;
  auto c = tape.constant(Tensor::ones({2}));
  add(c, c);
  EXPECT_EQ(tape.op_count(), 0u);
  auto p = tape.param(Tensor::ones({2}));
  add(c, p);
  EXPECT_EQ(tape.op_count(), 1u);
}

TEST(Tape, InputsPrecedeOps) {
  Tape tape;
  std::mt19937_64 rng(3);
  auto x = tape.param(random_tensor({3, 4}, rng));
  auto g = tape.param(Tensor::ones({4}));
  auto b = tape.param(Tensor::zeros({4}));
  auto y = sum(layer_norm(softmax(x, 1), g, b, 1e-5));
  for (std::size_t id = 0; id <= y.id(); ++id) {
    for (auto in : tape.inputs_of(id)) EXPECT_LT(in, id);
  }
}

TEST(Softmax, Examples) {
  Tape tape;
  auto u = softmax(tape.constant(Tensor::zeros({4})), 0).value();
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  auto w = softmax(tape.constant(Tensor::from({2}, {0.0, std::log(2.0)})), 0).value();
  EXPECT_NEAR(w[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOneAtLargeMagnitude) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tape tape;
    auto x = tape.constant(random_tensor({5, 7}, rng, -1e4, 1e4));
    auto y = softmax(x, 1).value();
    ASSERT_TRUE(y.all_finite());
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(y.at({r, c}), 0.0);
        s += y.at({r, c});
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, AxisOutOfRangeRejected) {
  Tape tape;
  EXPECT_THROW(softmax(tape.constant(Tensor::zeros({3})), 1), ShapeError);
}

TEST(LayerNorm, Examples) {
  Tape tape;
  auto g = tape.constant(Tensor::ones({2}));
  auto b0 = tape.constant(Tensor::zeros({2}));
  auto constant_row = layer_norm(tape.constant(Tensor::full({1, 2}, 7.0)), g, b0, 1e-5);
  EXPECT_EQ(constant_row.value(), Tensor::zeros({1, 2}));

  auto y = layer_norm(tape.constant(Tensor::from({1, 2}, {1, 3})), g, b0, 0.0).value();
  EXPECT_DOUBLE_EQ(y[0], -1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);

  std::mt19937_64 rng(5);
  auto x = tape.constant(random_tensor({3, 2}, rng));
  auto bc = tape.constant(Tensor::full({2}, 0.75));
  auto shifted = layer_norm(x, g, bc, 1e-5).value();
  auto base = layer_norm(x, g, b0, 1e-5).value();
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(shifted[i], base[i] + 0.75, 1e-15);
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  std::mt19937_64 rng(8);
  Tape tape;
  auto x = tape.constant(random_tensor({6, 16}, rng, -3.0, 3.0));
  auto y = layer_norm(x, tape.constant(Tensor::ones({16})), tape.constant(Tensor::zeros({16})),
                      1e-5)
               .value();
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 16; ++c) mu += y.at({r, c});
    mu /= 16.0;
    for (std::size_t c = 0; c < 16; ++c) var += (y.at({r, c}) - mu) * (y.at({r, c}) - mu);
    var /= 16.0;
    EXPECT_NEAR(mu, 0.0, 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(LayerNorm, GammaShapeChecked) {
  Tape tape;
  auto x = tape.constant(Tensor::zeros({2, 3}));
  EXPECT_THROW(layer_norm(x, tape.constant(Tensor::ones({2})), tape.constant(Tensor::zeros({3})),
                          1e-5),
               ShapeError);
}

TEST(Backward, Examples) {
  Tape tape;
  auto w = tape.param(Tensor::from({2}, {1, 2}));
  auto unused = tape.param(Tensor::from({3}, {5, 5, 5}));
  auto g1 = tape.backward(sum(w));
  EXPECT_EQ(g1.of(w), Tensor::ones({2}));
  auto g2 = tape.backward(sum(mul(w, w)));
  EXPECT_EQ(g2.of(w), Tensor::from({2}, {2, 4}));
  EXPECT_EQ(g2.of(unused), Tensor::zeros({3}));
}

TEST(Backward, RejectsNonScalar) {
  Tape tape;
  auto w = tape.param(Tensor::ones({2}));
  EXPECT_THROW(tape.backward(scale(w, 2.0)), ShapeError);
}

TEST(Backward, IsLinearInTheLoss) {
  std::mt19937_64 rng(21);
  Tape tape;
  auto x = tape.param(random_tensor({3, 4}, rng));
  auto w = tape.param(random_tensor({4, 2}, rng));
  auto l1 = sum(gelu(matmul(x, w)));
  auto l2 = mean(mul(softmax(x, 1), x));
  const double a = 0.7, b = -2.5;
  auto combo = add(scale(l1, a), scale(l2, b));
  auto gc = tape.backward(combo);
  auto g1 = tape.backward(l1);
  auto g2 = tape.backward(l2);
  for (const Var* v : {&x, &w}) {
    auto lhs = gc.of(*v);
    auto r1 = g1.of(*v);
    auto r2 = g2.of(*v);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * r1[i] + b * r2[i], 1e-10);
  }
}

TEST(Backward, ReshapeTransposeRoundTripIsExact) {
  std::mt19937_64 rng(2);
  Tape tape;
  auto x = tape.constant(random_tensor({3, 5}, rng));
  EXPECT_EQ(transpose(transpose(x)).value(), x.value());
  EXPECT_EQ(reshape(reshape(x, {5, 3}), {3, 5}).value(), x.value());
  EXPECT_EQ(reshape(x, {15}).value().values(), x.value().values());
}

TEST(GradCheck, SumOfSquares) {
  std::mt19937_64 rng(1);
  auto f = [](Tape&, const Var& x) { return sum(mul(x, x)); };
  auto r = grad_check(f, random_tensor({4, 3}, rng), 1e-5);
  EXPECT_TRUE(r.finite);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, ComposedChain) {
  std::mt19937_64 rng(42);
  auto gamma = random_tensor({4}, rng, 0.5, 1.5);
  auto beta = random_tensor({4}, rng);
  auto w = random_tensor({4, 2}, rng);
  auto f = [&](Tape& tape, const Var& x) {
    auto ln = layer_norm(softmax(x, 1), tape.constant(gamma), tape.constant(beta), 1e-5);
    return sum(matmul(ln, tape.constant(w)));
  };
  auto r = grad_check(f, random_tensor({3, 4}, rng), 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(GradCheck, LinearFunctionIsNearlyExact) {
  std::mt19937_64 rng(4);
  auto c = random_tensor({6}, rng);
  auto f = [&](Tape& tape, const Var& x) { return sum(mul(x, tape.constant(c))); };
  auto r = grad_check(f, random_tensor({6}, rng), 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, NonFiniteEstimateReported) {
  auto f = [](Tape&, const Var& x) { return sum(log(x)); };
  // x - eps crosses zero, so the lower evaluation is NaN.
  auto r = grad_check(f, Tensor::from({1}, {1e-6}), 1e-5);
  EXPECT_FALSE(r.finite);
  EXPECT_TRUE(std::isinf(r.max_rel_error));
}

// Each differentiable primitive, checked on 10 random inputs.
class PrimitiveGradients : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradients, MatchCentralDifferences) {
  std::mt19937_64 rng(1000 + GetParam());
  auto other = random_tensor({3, 4}, rng);
  auto other_nz = random_away_from_zero({3, 4}, rng);
  auto col = random_tensor({3, 1}, rng);
  auto right = random_tensor({4, 2}, rng);
  auto left = random_tensor({2, 3}, rng);
  auto gamma = random_tensor({4}, rng, 0.5, 1.5);
  auto beta = random_tensor({4}, rng);
  auto wlin = random_tensor({5, 4}, rng);
  auto blin = random_tensor({5}, rng);

  struct Case {
    const char* name;
    std::function<Var(Tape&, const Var&)> op;
    bool away_from_zero = false;
    bool positive = false;
  };
  const std::vector<Case> cases = {
      {"add", [&](Tape& t, const Var& x) { return add(x, t.constant(other)); }},
      {"add_broadcast", [&](Tape& t, const Var& x) { return add(t.constant(other), reshape(slice(x, 1, 0, 1), {3, 1})); }},
      {"sub", [&](Tape& t, const Var& x) { return sub(t.constant(other), x); }},
      {"mul", [&](Tape& t, const Var& x) { return mul(x, t.constant(other)); }},
      {"mul_broadcast", [&](Tape& t, const Var& x) { return mul(x, t.constant(col)); }},
      {"div_num", [&](Tape& t, const Var& x) { return div(x, t.constant(other_nz)); }},
      {"div_den", [&](Tape& t, const Var& x) { return div(t.constant(other), x); }, true},
      {"scale", [&](Tape&, const Var& x) { return scale(x, -1.7); }},
      {"add_scalar", [&](Tape&, const Var& x) { return add_scalar(x, 0.3); }},
      {"matmul_left", [&](Tape& t, const Var& x) { return matmul(x, t.constant(right)); }},
      {"matmul_right", [&](Tape& t, const Var& x) { return matmul(t.constant(left), x); }},
      {"transpose", [&](Tape&, const Var& x) { return transpose(x); }},
      {"reshape", [&](Tape&, const Var& x) { return reshape(x, {2, 6}); }},
      {"concat", [&](Tape& t, const Var& x) { std::vector<Var> p{x, t.constant(other), x}; return concat(p, 1); }},
      {"slice", [&](Tape&, const Var& x) { return slice(x, 1, 1, 3); }},
      {"sum", [&](Tape&, const Var& x) { return sum(x); }},
      {"mean", [&](Tape&, const Var& x) { return mean(x); }},
      {"relu", [&](Tape&, const Var& x) { return relu(x); }, true},
      {"gelu", [&](Tape&, const Var& x) { return gelu(x); }},
      {"sigmoid", [&](Tape&, const Var& x) { return sigmoid(x); }},
      {"exp", [&](Tape&, const Var& x) { return exp(x); }},
      {"log", [&](Tape&, const Var& x) { return log(x); }, false, true},
      {"abs", [&](Tape&, const Var& x) { return abs(x); }, true},
      {"softmax0", [&](Tape&, const Var& x) { return softmax(x, 0); }},
      {"softmax1", [&](Tape&, const Var& x) { return softmax(x, 1); }},
      {"layer_norm_x", [&](Tape& t, const Var& x) { return layer_norm(x, t.constant(gamma), t.constant(beta), 1e-5); }},
      {"layer_norm_gamma", [&](Tape& t, const Var& x) { return layer_norm(t.constant(other), reshape(slice(x, 0, 0, 1), {4}), t.constant(beta), 1e-5); }},
      {"layer_norm_beta", [&](Tape& t, const Var& x) { return layer_norm(t.constant(other), t.constant(gamma), reshape(slice(x, 0, 1, 2), {4}), 1e-5); }},
      {"linear_x", [&](Tape& t, const Var& x) { return linear(x, t.constant(wlin), t.constant(blin)); }},
      {"linear_w", [&](Tape& t, const Var& x) { return linear(t.constant(other), x); }},
      {"linear_b", [&](Tape& t, const Var& x) { return linear(t.constant(other), t.constant(wlin), reshape(slice(reshape(x, {12}), 0, 0, 5), {5})); }},
      {"sq_dist_a", [&](Tape& t, const Var& x) { return sq_dist(x, t.constant(other)); }},
      {"sq_dist_b", [&](Tape& t, const Var& x) { return sq_dist(t.constant(other), x); }},
      {"sq_dist_self", [&](Tape&, const Var& x) { return sq_dist(x, x); }},
  };

  for (const auto& c : cases) {
    Tensor x = c.away_from_zero ? random_away_from_zero({3, 4}, rng)
                                : random_tensor({3, 4}, rng);
    if (c.positive) {
      for (auto& v : x.data()) v = std::fabs(v) + 0.2;
    }
    // Reduce the output with a fixed random projection.
    Shape out_shape;
    {
      Tape t;
      out_shape = c.op(t, t.constant(x)).shape();
    }
    const Tensor projection = random_tensor(out_shape, rng);
    auto f = [&](Tape& t, const Var& v) { return sum(mul(c.op(t, v), t.constant(projection))); };
    auto r = grad_check(f, x, 1e-5);
    EXPECT_TRUE(r.finite) << c.name;
    EXPECT_LT(r.max_rel_error, 1e-5) << c.name << " seed " << GetParam();
  }
}

TEST_P(PrimitiveGradients, AttentionPrimitives) {
  std::mt19937_64 rng(2000 + GetParam());
  constexpr std::size_t rows = 5, d = 3;
  auto table = std::make_shared<KeyTable>();
  table->query_rows = {1, 2, 4};
  table->keys_per_query = 3;
  table->keys = {0, 1, 3, 0, 2, 2, 4, 1, 0};
  auto k = random_tensor({rows, d}, rng);
  auto q = random_tensor({rows, d}, rng);
  auto v = random_tensor({rows, d}, rng);
  auto w = random_tensor({3, 3}, rng, 0.0, 1.0);
  auto wproj = random_tensor({3, 3}, rng);
  auto oproj = random_tensor({rows, d}, rng);

  auto by_q = [&](Tape& t, const Var& x) {
    return sum(mul(attention_weights(x, t.constant(k), table, 0.6), t.constant(wproj)));
  };
  auto by_k = [&](Tape& t, const Var& x) {
    return sum(mul(attention_weights(t.constant(q), x, table, 0.6), t.constant(wproj)));
  };
  auto by_w = [&](Tape& t, const Var& x) {
    return sum(mul(attention_combine(x, t.constant(v), table), t.constant(oproj)));
  };
  auto by_v = [&](Tape& t, const Var& x) {
    return sum(mul(attention_combine(t.constant(w), x, table), t.constant(oproj)));
  };
  EXPECT_LT(grad_check(by_q, q).max_rel_error, 1e-5);
  EXPECT_LT(grad_check(by_k, k).max_rel_error, 1e-5);
  EXPECT_LT(grad_check(by_w, w).max_rel_error, 1e-5);
  EXPECT_LT(grad_check(by_v, v).max_rel_error, 1e-5);
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, PrimitiveGradients, ::testing::Range(0, 10));

TEST(Attention, WeightsRowsSumToOne) {
  std::mt19937_64 rng(9);
  Tape tape;
  auto table = std::make_shared<KeyTable>();
  table->query_rows = {0, 1};
  table->keys_per_query = 2;
  table->keys = {0, 1, 1, 0};
  auto x = tape.constant(random_tensor({2, 4}, rng, -50.0, 50.0));
  auto w = attention_weights(x, x, table, 1.0).value();
  EXPECT_NEAR(w[0] + w[1], 1.0, 1e-12);
  EXPECT_NEAR(w[2] + w[3], 1.0, 1e-12);
  EXPECT_EQ(tape.peak_attention_buffer(), 4u);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  NamedTensors params{{"w", Tensor::from({2}, {1.0, -2.0})}};
  NamedTensors grads{{"w", Tensor::zeros({2})}};
  OptimizerState state;
  adam_step(params, grads, state);
  EXPECT_EQ(params.at("w"), Tensor::from({2}, {1.0, -2.0}));
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  NamedTensors params{{"w", Tensor::from({3}, {0.0, 0.0, 0.0})}};
  NamedTensors grads{{"w", Tensor::from({3}, {0.5, -3.0, 100.0})}};
  OptimizerState state;
  adam_step(params, grads, state);
  // m_hat = g and v_hat = g^2, so each step is lr * g / (|g| + eps).
  const auto& w = params.at("w");
  EXPECT_NEAR(w[0], -1e-3, 1e-10);
  EXPECT_NEAR(w[1], 1e-3, 1e-10);
  EXPECT_NEAR(w[2], -1e-3, 1e-10);
}

TEST(Adam, MissingGradientRejected) {
  NamedTensors params{{"w", Tensor::zeros({2})}};
  OptimizerState state;
  EXPECT_THROW(adam_step(params, {}, state), std::invalid_argument);
  EXPECT_EQ(state.step, 0u);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    std::mt19937_64 rng(77);
    NamedTensors params{{"a", random_tensor({4, 4}, rng)}, {"b", random_tensor({4}, rng)}};
    OptimizerState state;
    for (int s = 0; s < 5; ++s) {
      NamedTensors grads{{"a", random_tensor({4, 4}, rng)}, {"b", random_tensor({4}, rng)}};
      adam_step(params, grads, state);
    }
    return params;
  };
  auto p1 = run();
  auto p2 = run();
  EXPECT_EQ(p1.at("a"), p2.at("a"));
  EXPECT_EQ(p1.at("b"), p2.at("b"));
}

}  // namespace
}  // namespace fedda::ad
