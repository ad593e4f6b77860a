// Copyright 2026 The flowcast Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "flowcast/numerics/attention.hpp"
#include "flowcast/numerics/grad_check.hpp"
#include "flowcast/numerics/layers.hpp"
#include "flowcast/numerics/ops.hpp"
#include "support/oracles.hpp"
#include "support/test_helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

namespace flowcast
{
namespace
{

using oracle::random_tensor;
using testing::bind;

TEST(Tensor, PermuteRoundTrip)
{
  std::mt19937_64 rng(1);
  const auto t = random_tensor({2, 3, 4, 5}, rng);
  const std::vector<Index> perm{2, 0, 3, 1};
  const auto p = permute_tensor(t, perm);
  EXPECT_EQ(p.shape(), (Shape{4, 2, 5, 3}));
  EXPECT_EQ(p.at({3, 1, 4, 2}), t.at({1, 2, 3, 4}));
  EXPECT_EQ(permute_tensor(p, inverse_permutation(perm)), t);
}

TEST(Tensor, ShapeContracts)
{
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor<double> t({2, 3});
  EXPECT_EQ(t.size(), 6);
  EXPECT_THROW((void)t.reshaped({4, 2}), ShapeError);
  EXPECT_THROW(permute_tensor(t, {0, 0}), ShapeError);
}

TEST(Tape, SumOfSquaresGradientIsTwoX)
{
  std::mt19937_64 rng(2);
  const auto x0 = random_tensor({3, 4}, rng);
  Tape<double> tape;
  auto x = tape.variable(x0);
  tape.backward(sum(square(x)));
  const auto g = tape.gradient(x);
  for (Index i = 0; i < x0.size(); ++i) EXPECT_EQ(g[i], 2.0 * x0[i]);
}

TEST(Tape, UnusedInputGetsZeroGradient)
{
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({2, 2}, 1.5));
  auto p = tape.variable(Tensor<double>({3}, 2.0));
  tape.backward(sum(x));
  EXPECT_FALSE(tape.reached(p));
  EXPECT_EQ(tape.gradient(p), Tensor<double>({3}));
}

TEST(Tape, RejectsNonScalarLoss)
{
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({2}, 1.0));
  EXPECT_THROW(tape.backward(square(x)), ShapeError);
}

TEST(Tape, SharedSubexpressionAccumulates)
{
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({1}, 3.0));
  auto y = mul(x, x);
  tape.backward(add(y, x));
  EXPECT_DOUBLE_EQ(tape.gradient(x)[0], 7.0);
}

// ---------------------------------------------------------------------------
// Attention

TEST(Attention, UniformScoresGiveValueMean)
{
  std::mt19937_64 rng(3);
  const Index width = 4;
  auto p = oracle::random_attention_params(width, rng);
  p.wq = Tensor<double>({width, width});
  p.bq = Tensor<double>({width});
  p.wk = Tensor<double>({width, width});
  p.wo = Tensor<double>({width, width});
  for (Index i = 0; i < width; ++i) p.wo.at({i, i}) = 1.0;
  p.bo = Tensor<double>({width});
  const auto x0 = random_tensor({2, 5, width}, rng);

  Tape<double> tape;
  auto x = tape.constant(x0);
  const auto out = axis_self_attention(x, 1, AttentionMask({2, 5}), bind(tape, p)).value();
  for (Index a = 0; a < 2; ++a) {
    for (Index d = 0; d < width; ++d) {
      double mean_v = 0.0;
      for (Index t = 0; t < 5; ++t) {
        double v = p.bv[d];
        for (Index i = 0; i < width; ++i) v += x0.at({a, t, i}) * p.wv.at({i, d});
        mean_v += v / 5.0;
      }
      for (Index t = 0; t < 5; ++t) EXPECT_NEAR(out.at({a, t, d}), mean_v, 1e-12);
    }
  }
}

TEST(Attention, SingletonAxisReturnsProjectedValue)
{
  std::mt19937_64 rng(4);
  const Index width = 6;
  const auto p = oracle::random_attention_params(width, rng);
  const auto x0 = random_tensor({3, 1, width}, rng);
  Tape<double> tape;
  const auto out =
    axis_self_attention(tape.constant(x0), 1, AttentionMask({3, 1}), bind(tape, p)).value();
  for (Index a = 0; a < 3; ++a) {
    const auto v = oracle::affine(x0.data() + a * width, p.wv, p.bv);
    const auto y = oracle::affine(v.data(), p.wo, p.bo);
    for (Index d = 0; d < width; ++d) EXPECT_NEAR(out.at({a, 0, d}), y[static_cast<std::size_t>(d)], 1e-12);
  }
}

TEST(Attention, RandomMiniatureMatchesScalarOracle)
{
  std::mt19937_64 rng(5);
  const auto p = oracle::random_attention_params(8, rng);
  const auto x0 = random_tensor({2, 3, 8}, rng);
  const auto valid = testing::random_mask(6, rng, 0.8);
  Tape<double> tape;
  const auto out =
    axis_self_attention(tape.constant(x0), 1, AttentionMask({2, 3}, valid), bind(tape, p)).value();
  const auto expected = oracle::attention(x0, x0, 1, 1, valid, p);
  EXPECT_LE(out.max_abs_diff(expected), 1e-10);
}

TEST(Attention, RowsAreConvexAndMaskedWeightsZero)
{
  std::mt19937_64 rng(6);
  const auto p = oracle::random_attention_params(5, rng);
  const auto x0 = random_tensor({4, 7, 5}, rng);
  auto valid = testing::random_mask(28, rng, 0.6);
  for (Index a = 0; a < 4; ++a) valid[static_cast<std::size_t>(a * 7)] = 1;
  Tape<double> tape;
  AttentionTrace<double> trace;
  (void)axis_self_attention(tape.constant(x0), 1, AttentionMask({4, 7}, valid), bind(tape, p), &trace);
  ASSERT_EQ(trace.weights.size(), 4U);
  EXPECT_EQ(trace.empty_rows, 0);
  for (std::size_t a = 0; a < 4; ++a) {
    const auto & w = trace.weights[a];
    for (Index r = 0; r < w.rows(); ++r) {
      EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-12);
      for (Index c = 0; c < w.cols(); ++c) {
        EXPECT_GE(w(r, c), 0.0);
        if (!valid[a * 7 + static_cast<std::size_t>(c)]) EXPECT_EQ(w(r, c), 0.0);
      }
    }
  }
}

TEST(Attention, EquivariantAlongNonAttendedAxes)
{
  std::mt19937_64 rng(7);
  const auto p = oracle::random_attention_params(4, rng);
  const auto x0 = random_tensor({5, 3, 4}, rng);
  // Attend along axis 1; reverse axis 0.
  Tensor<double> flipped(x0.shape());
  for (Index a = 0; a < 5; ++a) {
    for (Index i = 0; i < 12; ++i) flipped[a * 12 + i] = x0[(4 - a) * 12 + i];
  }
  Tape<double> tape;
  const auto w = bind(tape, p);
  const auto y = axis_self_attention(tape.constant(x0), 1, AttentionMask({5, 3}), w).value();
  const auto yf = axis_self_attention(tape.constant(flipped), 1, AttentionMask({5, 3}), w).value();
  for (Index a = 0; a < 5; ++a) {
    for (Index i = 0; i < 12; ++i) EXPECT_EQ(yf[a * 12 + i], y[(4 - a) * 12 + i]);
  }
}

TEST(Attention, ContractErrors)
{
  std::mt19937_64 rng(8);
  const auto p = oracle::random_attention_params(4, rng);
  Tape<double> tape;
  auto x = tape.constant(random_tensor({2, 3, 4}, rng));
  const auto w = bind(tape, p);
  EXPECT_THROW(axis_self_attention(x, 2, AttentionMask({2, 3}), w), ShapeError);
  EXPECT_THROW(axis_self_attention(x, 5, AttentionMask({2, 3}), w), ShapeError);
  EXPECT_THROW(axis_self_attention(x, 1, AttentionMask({3, 2}), w), ShapeError);
  auto bad = random_tensor({2, 3, 4}, rng);
  bad[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(axis_self_attention(tape.constant(bad), 1, AttentionMask({2, 3}), w), NumericalError);
}

TEST(CrossAttention, SingleKeyBroadcastsProjectedValue)
{
  std::mt19937_64 rng(9);
  const Index width = 5;
  const auto p = oracle::random_attention_params(width, rng);
  const auto q0 = random_tensor({4, width}, rng);
  const auto k0 = random_tensor({1, width}, rng);
  Tape<double> tape;
  const auto out = axis_cross_attention(
                     tape.constant(q0), tape.constant(k0), 0, 0, AttentionMask({1}), bind(tape, p))
                     .value();
  const auto v = oracle::affine(k0.data(), p.wv, p.bv);
  const auto y = oracle::affine(v.data(), p.wo, p.bo);
  for (Index r = 0; r < 4; ++r) {
    for (Index d = 0; d < width; ++d) EXPECT_NEAR(out.at({r, d}), y[static_cast<std::size_t>(d)], 1e-12);
  }
}

TEST(CrossAttention, SelfDegeneracyIsBitExact)
{
  std::mt19937_64 rng(10);
  const auto p = oracle::random_attention_params(6, rng);
  const auto x0 = random_tensor({3, 4, 6}, rng);
  const auto valid = testing::random_mask(12, rng);
  const AttentionMask mask({3, 4}, valid);
  Tape<double> tape;
  auto x = tape.constant(x0);
  const auto w = bind(tape, p);
  for (Index axis : {0, 1}) {
    const auto self = axis_self_attention(x, axis, mask, w).value();
    const auto cross = axis_cross_attention(x, x, axis, axis, mask, w).value();
    EXPECT_EQ(self, cross);
  }
}

TEST(CrossAttention, RandomShapesMatchScalarOracle)
{
  std::mt19937_64 rng(11);
  const auto p = oracle::random_attention_params(8, rng);
  const auto q0 = random_tensor({2, 4, 8}, rng);
  const auto k0 = random_tensor({2, 7, 8}, rng);
  const auto valid = testing::random_mask(14, rng);
  Tape<double> tape;
  const auto out = axis_cross_attention(
                     tape.constant(q0), tape.constant(k0), 1, 1, AttentionMask({2, 7}, valid),
                     bind(tape, p))
                     .value();
  EXPECT_LE(out.max_abs_diff(oracle::attention(q0, k0, 1, 1, valid, p)), 1e-10);
}

TEST(CrossAttention, AllKeysMaskedGivesZerosAndFlags)
{
  std::mt19937_64 rng(12);
  const auto p = oracle::random_attention_params(4, rng);
  Tape<double> tape;
  AttentionTrace<double> trace;
  const auto out = axis_cross_attention(
                     tape.constant(random_tensor({3, 4}, rng)), tape.constant(random_tensor({5, 4}, rng)),
                     0, 0, AttentionMask({5}, false), bind(tape, p), &trace)
                     .value();
  EXPECT_EQ(trace.empty_rows, 3);
  EXPECT_EQ(out, Tensor<double>({3, 4}));
}

TEST(CrossAttention, IncompatibleBatchAxesRejected)
{
  std::mt19937_64 rng(13);
  const auto p = oracle::random_attention_params(4, rng);
  Tape<double> tape;
  EXPECT_THROW(
    axis_cross_attention(
      tape.constant(random_tensor({2, 3, 4}, rng)), tape.constant(random_tensor({3, 5, 4}, rng)), 1, 1,
      AttentionMask({3, 5}), bind(tape, p)),
    ShapeError);
}

// ---------------------------------------------------------------------------
// MLP

TEST(Mlp, ZeroWeightsGiveBias)
{
  std::mt19937_64 rng(14);
  Tape<double> tape;
  const auto b2 = random_tensor({3}, rng);
  MlpWeights<double> w{
    tape.constant(Tensor<double>({4, 5})), tape.constant(Tensor<double>({5})),
    tape.constant(Tensor<double>({5, 3})), tape.constant(b2)};
  const auto y = mlp(tape.constant(random_tensor({6, 4}, rng)), w).value();
  for (Index r = 0; r < 6; ++r) {
    for (Index j = 0; j < 3; ++j) EXPECT_EQ(y.at({r, j}), b2[j]);
  }
}

TEST(Mlp, IdentityConstructionReproducesInput)
{
  std::mt19937_64 rng(15);
  Tensor<double> eye({4, 4});
  for (Index i = 0; i < 4; ++i) eye.at({i, i}) = 1.0;
  auto x0 = random_tensor({5, 4}, rng);
  for (Index i = 0; i < x0.size(); ++i) x0[i] = std::abs(x0[i]) + 0.1;  // ReLU linear regime
  Tape<double> tape;
  MlpWeights<double> w{
    tape.constant(eye), tape.constant(Tensor<double>({4})), tape.constant(eye),
    tape.constant(Tensor<double>({4}))};
  EXPECT_EQ(mlp(tape.constant(x0), w).value(), x0);
}

TEST(Mlp, RandomMatchesScalarOracle)
{
  std::mt19937_64 rng(16);
  const auto x0 = random_tensor({3, 2, 6}, rng);
  const auto w1 = random_tensor({6, 9}, rng), b1 = random_tensor({9}, rng);
  const auto w2 = random_tensor({9, 4}, rng), b2 = random_tensor({4}, rng);
  Tape<double> tape;
  MlpWeights<double> w{tape.constant(w1), tape.constant(b1), tape.constant(w2), tape.constant(b2)};
  const auto y = mlp(tape.constant(x0), w).value();
  EXPECT_LE(y.max_abs_diff(oracle::mlp(x0, w1, b1, w2, b2)), 1e-10);
  MlpWeights<double> bad{tape.constant(w2), tape.constant(b2), tape.constant(w1), tape.constant(b1)};
  EXPECT_THROW(mlp(tape.constant(x0), bad), ShapeError);
}

// ---------------------------------------------------------------------------
// Recurrent cell

struct LstmFixture
{
  Tensor<double> wx, wh, b;
  static LstmFixture random(Index in, Index hidden, std::mt19937_64 & rng)
  {
    return {random_tensor({in, 4 * hidden}, rng, 0.5), random_tensor({hidden, 4 * hidden}, rng, 0.5),
            random_tensor({4 * hidden}, rng, 0.5)};
  }
  LstmWeights<double> bind(Tape<double> & tape) const
  {
    return {tape.constant(wx), tape.constant(wh), tape.constant(b)};
  }
};

TEST(Recurrent, ZeroWeightsFollowBiasOnlyRecurrence)
{
  std::mt19937_64 rng(17);
  const Index hidden = 3;
  LstmFixture f{Tensor<double>({2, 4 * hidden}), Tensor<double>({hidden, 4 * hidden}), random_tensor({4 * hidden}, rng)};
  Tape<double> tape;
  const auto y1 = recurrent_sequence(tape.constant(random_tensor({6, 2}, rng)), 0, f.bind(tape)).value();
  const auto y2 = recurrent_sequence(tape.constant(random_tensor({6, 2}, rng)), 0, f.bind(tape)).value();
  EXPECT_EQ(y1, y2);
  for (Index j = 0; j < hidden; ++j) {
    const double i = oracle::sigmoid(f.b[j]);
    const double fg = oracle::sigmoid(f.b[hidden + j]);
    const double g = std::tanh(f.b[2 * hidden + j]);
    const double o = oracle::sigmoid(f.b[3 * hidden + j]);
    double c = 0.0;
    for (Index t = 0; t < 6; ++t) {
      c = fg * c + i * g;
      EXPECT_NEAR(y1.at({t, j}), o * std::tanh(c), 1e-14);
    }
  }
}

TEST(Recurrent, Causality)
{
  std::mt19937_64 rng(18);
  const auto f = LstmFixture::random(3, 4, rng);
  auto x0 = random_tensor({2, 8, 3}, rng);
  Tape<double> tape;
  const auto y0 = recurrent_sequence(tape.constant(x0), 1, f.bind(tape)).value();
  x0.at({1, 5, 2}) += 1.0;
  const auto y1 = recurrent_sequence(tape.constant(x0), 1, f.bind(tape)).value();
  for (Index t = 0; t < 8; ++t) {
    for (Index j = 0; j < 4; ++j) {
      EXPECT_EQ(y0.at({0, t, j}), y1.at({0, t, j}));
      if (t < 5) {
        EXPECT_EQ(y0.at({1, t, j}), y1.at({1, t, j}));
      }
    }
  }
  EXPECT_NE(y0.at({1, 5, 0}), y1.at({1, 5, 0}));
}

TEST(Recurrent, MatchesScalarGateEquations)
{
  std::mt19937_64 rng(19);
  const auto f = LstmFixture::random(5, 3, rng);
  for (Index steps : {1, 7}) {
    const auto x0 = random_tensor({steps, 5}, rng);
    Tape<double> tape;
    const auto y = recurrent_sequence(tape.constant(x0), 0, f.bind(tape)).value();
    EXPECT_LE(y.max_abs_diff(oracle::lstm(x0, f.wx, f.wh, f.b)), 1e-12);
  }
}

TEST(Recurrent, TimeAxisAnywhere)
{
  std::mt19937_64 rng(20);
  const auto f = LstmFixture::random(2, 3, rng);
  const auto x0 = random_tensor({4, 3, 2}, rng);  // [T, B, in]
  Tape<double> tape;
  const auto y = recurrent_sequence(tape.constant(x0), 0, f.bind(tape)).value();
  for (Index b = 0; b < 3; ++b) {
    Tensor<double> seq({4, 2});
    for (Index t = 0; t < 4; ++t) {
      for (Index i = 0; i < 2; ++i) seq.at({t, i}) = x0.at({t, b, i});
    }
    const auto ref = oracle::lstm(seq, f.wx, f.wh, f.b);
    for (Index t = 0; t < 4; ++t) {
      for (Index j = 0; j < 3; ++j) EXPECT_NEAR(y.at({t, b, j}), ref.at({t, j}), 1e-12);
    }
  }
}

TEST(Recurrent, EmptyTimeAxisRejected)
{
  std::mt19937_64 rng(21);
  const auto f = LstmFixture::random(2, 2, rng);
  Tape<double> tape;
  EXPECT_THROW(recurrent_sequence(tape.constant(Tensor<double>({0, 2})), 0, f.bind(tape)), ShapeError);
}

// ---------------------------------------------------------------------------
// Temporal pyramid

struct PyramidFixture
{
  Tensor<double> wd, bd, wl, bl;
  static PyramidFixture random(Index width, std::mt19937_64 & rng)
  {
    return {random_tensor({width, width}, rng), random_tensor({width}, rng),
            random_tensor({width, width}, rng), random_tensor({width}, rng)};
  }
  PyramidWeights<double> bind(Tape<double> & tape) const
  {
    return {tape.constant(wd), tape.constant(bd), tape.constant(wl), tape.constant(bl)};
  }
};

TEST(Pyramid, PreservesConstantsInTime)
{
  std::mt19937_64 rng(22);
  const auto f = PyramidFixture::random(5, rng);
  const auto row = random_tensor({5}, rng);
  for (Index steps : {4, 7, 60}) {
    Tensor<double> x0({steps, 5});
    for (Index t = 0; t < steps; ++t) {
      for (Index j = 0; j < 5; ++j) x0.at({t, j}) = row[j];
    }
    Tape<double> tape;
    const auto y = temporal_pyramid(tape.constant(x0), f.bind(tape)).value();
    ASSERT_EQ(y.shape(), x0.shape());
    for (Index t = 1; t < steps; ++t) {
      for (Index j = 0; j < 5; ++j) EXPECT_NEAR(y.at({t, j}), y.at({0, j}), 1e-12);
    }
  }
}

TEST(Pyramid, LengthFourMatchesHandUnrolledOracle)
{
  std::mt19937_64 rng(23);
  const Index width = 3;
  const auto f = PyramidFixture::random(width, rng);
  const auto x0 = random_tensor({4, width}, rng);
  Tape<double> tape;
  const auto y = temporal_pyramid(tape.constant(x0), f.bind(tape)).value();

  // pooled_0 = (x0 + x1)/2, pooled_1 = (x2 + x3)/2; y_t = lat(x_t) + down(pooled_{t/2})
  std::vector<double> p0(width), p1(width);
  for (Index j = 0; j < width; ++j) {
    p0[static_cast<std::size_t>(j)] = 0.5 * (x0.at({0, j}) + x0.at({1, j}));
    p1[static_cast<std::size_t>(j)] = 0.5 * (x0.at({2, j}) + x0.at({3, j}));
  }
  const auto d0 = oracle::affine(p0.data(), f.wd, f.bd);
  const auto d1 = oracle::affine(p1.data(), f.wd, f.bd);
  for (Index t = 0; t < 4; ++t) {
    const auto lat = oracle::affine(x0.data() + t * width, f.wl, f.bl);
    const auto & down = t < 2 ? d0 : d1;
    for (Index j = 0; j < width; ++j) {
      EXPECT_NEAR(y.at({t, j}), lat[static_cast<std::size_t>(j)] + down[static_cast<std::size_t>(j)], 1e-10);
    }
  }
}

TEST(Pyramid, OddLengthPadsByRepetition)
{
  std::mt19937_64 rng(24);
  const auto x0 = random_tensor({3, 2}, rng);
  Tape<double> tape;
  const auto pooled = pool_pairs(tape.constant(x0)).value();
  ASSERT_EQ(pooled.shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(pooled.at({1, 0}), x0.at({2, 0}));
  EXPECT_DOUBLE_EQ(pooled.at({0, 1}), 0.5 * (x0.at({0, 1}) + x0.at({1, 1})));
}

TEST(Pyramid, TooShortRejected)
{
  std::mt19937_64 rng(25);
  const auto f = PyramidFixture::random(2, rng);
  Tape<double> tape;
  EXPECT_THROW(temporal_pyramid(tape.constant(Tensor<double>({1, 2})), f.bind(tape)), ShapeError);
}

// ---------------------------------------------------------------------------
// Layer norm

TEST(LayerNorm, ConstantSliceGivesBias)
{
  std::mt19937_64 rng(26);
  const auto gamma = random_tensor({4}, rng), beta = random_tensor({4}, rng);
  Tape<double> tape;
  const auto y = layer_norm(
                   tape.constant(Tensor<double>({2, 4}, 3.25)), tape.constant(gamma),
                   tape.constant(beta), 1)
                   .value();
  for (Index r = 0; r < 2; ++r) {
    for (Index j = 0; j < 4; ++j) EXPECT_EQ(y.at({r, j}), beta[j]);
  }
}

TEST(LayerNorm, NormalizedSliceIsNearIdentity)
{
  Tensor<double> x0({1, 4}, std::vector<double>{1.0, -1.0, 1.0, -1.0});  // mean 0, variance 1
  Tape<double> tape;
  const auto y = layer_norm(
                   tape.constant(x0), tape.constant(Tensor<double>({4}, 1.0)),
                   tape.constant(Tensor<double>({4})), 1)
                   .value();
  EXPECT_LE(y.max_abs_diff(x0), 1e-5);
}

TEST(LayerNorm, RandomMatchesScalarOracleOnAnyAxis)
{
  std::mt19937_64 rng(27);
  const auto x0 = random_tensor({3, 5, 6}, rng);
  const auto gamma = random_tensor({6}, rng), beta = random_tensor({6}, rng);
  Tape<double> tape;
  const auto y = layer_norm(tape.constant(x0), tape.constant(gamma), tape.constant(beta), 2).value();
  EXPECT_LE(y.max_abs_diff(oracle::layer_norm(x0, gamma, beta, kLayerNormEpsilon)), 1e-10);

  const auto g5 = random_tensor({5}, rng), b5 = random_tensor({5}, rng);
  const auto y1 = layer_norm(tape.constant(x0), tape.constant(g5), tape.constant(b5), 1).value();
  const auto moved = permute_tensor(x0, {0, 2, 1});
  const auto ref = permute_tensor(oracle::layer_norm(moved, g5, b5, kLayerNormEpsilon), {0, 2, 1});
  EXPECT_LE(y1.max_abs_diff(ref), 1e-10);
}

// ---------------------------------------------------------------------------
// Gradient checks

constexpr double kGradTolerance = 1e-4;

class GradCheck : public ::testing::TestWithParam<int>
{
};

TEST_P(GradCheck, ElementwiseAndLayoutOps)
{
  std::mt19937_64 rng(100 + GetParam());
  const auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  const auto c = random_tensor({4}, rng);
  auto positive = random_tensor({3, 4}, rng);
  for (Index i = 0; i < positive.size(); ++i) positive[i] = std::abs(positive[i]) + 0.5;
  auto f = [](Tape<double> &, std::span<const Var<double>> v) {
    auto x = add(mul(v[0], tanh(v[1])), sigmoid(sub(v[0], v[1])));
    x = add(x, relu(scale(v[1], 1.5)));
    x = add(x, log(v[3]));
    x = add_broadcast(x, v[2]);
    x = add(x, exp(scale(v[0], 0.3)));
    auto p = permute(reshape(x, {3, 2, 2}), {2, 0, 1});
    auto s = slice(p, 1, 1, 3);
    auto e = expand(take(s, 0, 1), 1, 2);
    return add(sum(square(e)), mean(sum_axis(x, 0)));
  };
  EXPECT_LE(grad_check(f, {a, b, c, positive}).max_relative_error, kGradTolerance);
}

TEST_P(GradCheck, LinearSoftmaxLayerNorm)
{
  std::mt19937_64 rng(200 + GetParam());
  const auto x = random_tensor({2, 3, 4}, rng), w = random_tensor({4, 5}, rng);
  const auto b = random_tensor({5}, rng), gamma = random_tensor({5}, rng), beta = random_tensor({5}, rng);
  const auto target = random_tensor({2, 3, 5}, rng);
  auto g = [&](Tape<double> & tape, std::span<const Var<double>> v) {
    auto y = linear(v[0], v[1], v[2]);
    auto n = layer_norm(y, v[3], v[4], 2);
    auto n1 = layer_norm(y, slice(v[3], 0, 0, 3), slice(v[4], 0, 0, 3), 1);
    auto s = softmax(n);
    auto back = matmul(n, v[5]);
    return add(
      add(sum(mul(s, tape.constant(target))), mean(mean_axis(n1, 1))),
      add(sum(mul(log_softmax(y), tape.constant(target))), sum(square(back))));
  };
  const auto w2 = random_tensor({5, 4}, rng);
  EXPECT_LE(grad_check(g, {x, w, b, gamma, beta, w2}).max_relative_error, kGradTolerance);
}

TEST_P(GradCheck, SelfAttentionWithMask)
{
  std::mt19937_64 rng(300 + GetParam());
  const Index width = 4;
  const auto p = oracle::random_attention_params(width, rng);
  const auto x = random_tensor({3, 4, width}, rng);
  auto valid = testing::random_mask(12, rng, 0.7);
  valid[0] = 0;
  valid[1] = 0;
  valid[2] = 0;
  valid[3] = 0;  // one fully masked row along axis 1
  const AttentionMask mask({3, 4}, valid);
  const Index axis = GetParam() % 2;
  std::vector<Tensor<double>> inputs{x};
  for (const auto & t : testing::flatten(p)) inputs.push_back(t);
  auto f = [&](Tape<double> &, std::span<const Var<double>> v) {
    auto y = axis_self_attention(v[0], axis, mask, testing::attention_from(v, 1));
    return sum(mul(y, tanh(y)));
  };
  EXPECT_LE(grad_check(f, inputs).max_relative_error, kGradTolerance);
}

TEST_P(GradCheck, CrossAttention)
{
  std::mt19937_64 rng(400 + GetParam());
  const Index width = 3;
  const auto p = oracle::random_attention_params(width, rng);
  const auto q = random_tensor({5, width}, rng), k = random_tensor({6, width}, rng);
  const AttentionMask mask({6}, testing::random_mask(6, rng, 0.8));
  std::vector<Tensor<double>> inputs{q, k};
  for (const auto & t : testing::flatten(p)) inputs.push_back(t);
  auto f = [&](Tape<double> &, std::span<const Var<double>> v) {
    auto y = axis_cross_attention(v[0], v[1], 0, 0, mask, testing::attention_from(v, 2));
    return sum(square(y));
  };
  const auto r = grad_check(f, inputs);
  EXPECT_LE(r.max_relative_error, kGradTolerance);
}

TEST_P(GradCheck, Mlp)
{
  std::mt19937_64 rng(500 + GetParam());
  const auto x = random_tensor({4, 3}, rng);
  auto f = [](Tape<double> &, std::span<const Var<double>> v) {
    return sum(square(mlp(v[0], MlpWeights<double>{v[1], v[2], v[3], v[4]})));
  };
  EXPECT_LE(
    grad_check(
      f, {x, random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6, 2}, rng),
          random_tensor({2}, rng)})
      .max_relative_error,
    kGradTolerance);
}

TEST_P(GradCheck, RecurrentSequence)
{
  std::mt19937_64 rng(600 + GetParam());
  const auto f0 = LstmFixture::random(3, 4, rng);
  const auto x = random_tensor({2, 5, 3}, rng);
  auto f = [](Tape<double> &, std::span<const Var<double>> v) {
    auto h = recurrent_sequence(v[0], 1, LstmWeights<double>{v[1], v[2], v[3]});
    return sum(mul(h, scale(h, 2.0)));
  };
  EXPECT_LE(grad_check(f, {x, f0.wx, f0.wh, f0.b}).max_relative_error, kGradTolerance);
}

TEST_P(GradCheck, TemporalPyramid)
{
  std::mt19937_64 rng(700 + GetParam());
  const auto f0 = PyramidFixture::random(3, rng);
  const auto x = random_tensor({2, 5, 3}, rng);
  auto f = [](Tape<double> &, std::span<const Var<double>> v) {
    auto y = temporal_pyramid(v[0], PyramidWeights<double>{v[1], v[2], v[3], v[4]});
    return sum(square(tanh(y)));
  };
  EXPECT_LE(grad_check(f, {x, f0.wd, f0.bd, f0.wl, f0.bl}).max_relative_error, kGradTolerance);
}

INSTANTIATE_TEST_SUITE_P(TenRandomPoints, GradCheck, ::testing::Range(0, 10));

TEST(Determinism, IdenticalInputsGiveBitIdenticalOutputs)
{
  auto run = [] {
    std::mt19937_64 rng(77);
    const auto p = oracle::random_attention_params(8, rng);
    const auto x0 = random_tensor({3, 5, 8}, rng);
    Tape<double> tape;
    return axis_self_attention(tape.constant(x0), 1, AttentionMask({3, 5}), testing::bind(tape, p))
      .value();
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace flowcast
