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

#include "flowcast/numerics/layers.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace flowcast
{

template <typename S>
Var<S> mlp(Var<S> x, const MlpWeights<S> & w)
{
  if (x.shape().back() != w.w1.dim(0) || w.w1.dim(1) != w.w2.dim(0)) {
    throw ShapeError(
      "mlp: width mismatch between input " + shape_string(x.shape()) + " and weights " +
      shape_string(w.w1.shape()));
  }
  return linear(relu(linear(x, w.w1, w.b1)), w.w2, w.b2);
}

namespace
{

template <typename S>
S logistic(S x)
{
  return S(1) / (S(1) + std::exp(-x));
}

/// Cell over x [B, T, in]; returns [B, T, H].
template <typename S>
Var<S> lstm_core(Var<S> x, const LstmWeights<S> & w)
{
  using RowMatrix = typename Tensor<S>::RowMatrix;
  using Stride = Eigen::OuterStride<>;
  using StridedMap = Eigen::Map<RowMatrix, 0, Stride>;
  using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Stride>;

  const Index batch = x.dim(0), steps = x.dim(1), in = x.dim(2);
  const Index hidden = w.wh.dim(0);
  if (w.wx.dim(0) != in || w.wx.dim(1) != 4 * hidden || w.wh.dim(1) != 4 * hidden ||
      w.b.value().size() != 4 * hidden) {
    throw ShapeError("recurrent_sequence: weight shapes do not match input width " + std::to_string(in));
  }

  // Input contribution for every (b, t) row in one product.
  RowMatrix xw = x.value().matrix() * w.wx.value().matrix();
  xw.rowwise() += w.b.value().flat().transpose();

  std::vector<RowMatrix> gates(static_cast<std::size_t>(steps));
  std::vector<RowMatrix> cells(static_cast<std::size_t>(steps) + 1, RowMatrix::Zero(batch, hidden));
  std::vector<RowMatrix> states(static_cast<std::size_t>(steps) + 1, RowMatrix::Zero(batch, hidden));
  Tensor<S> out({batch, steps, hidden});
  const auto wh = w.wh.value().matrix();

  for (Index t = 0; t < steps; ++t) {
    auto ts = static_cast<std::size_t>(t);
    RowMatrix g = ConstStridedMap(xw.data() + t * 4 * hidden, batch, 4 * hidden, Stride(steps * 4 * hidden));
    g.noalias() += states[ts] * wh;
    for (Index r = 0; r < batch; ++r) {
      for (Index j = 0; j < hidden; ++j) {
        g(r, j) = logistic(g(r, j));
        g(r, hidden + j) = logistic(g(r, hidden + j));
        g(r, 2 * hidden + j) = std::tanh(g(r, 2 * hidden + j));
        g(r, 3 * hidden + j) = logistic(g(r, 3 * hidden + j));
      }
    }
    const auto i = g.leftCols(hidden).array();
    const auto f = g.middleCols(hidden, hidden).array();
    const auto c_hat = g.middleCols(2 * hidden, hidden).array();
    const auto o = g.rightCols(hidden).array();
    cells[ts + 1] = (f * cells[ts].array() + i * c_hat).matrix();
    states[ts + 1] = (o * cells[ts + 1].array().tanh()).matrix();
    StridedMap(out.data() + t * hidden, batch, hidden, Stride(steps * hidden)) = states[ts + 1];
    gates[ts] = std::move(g);
  }

  return x.tape().record(
    std::move(out), {x, w.wx, w.wh, w.b},
    [x, w, gates = std::move(gates), cells = std::move(cells), states = std::move(states), batch,
     steps, in, hidden](Tape<S> & tape, const Tensor<S> & grad) {
      RowMatrix dxw(batch * steps, 4 * hidden);
      RowMatrix dh_next = RowMatrix::Zero(batch, hidden);
      RowMatrix dc_next = RowMatrix::Zero(batch, hidden);
      RowMatrix dwh = RowMatrix::Zero(hidden, 4 * hidden);
      RowMatrix dg(batch, 4 * hidden);
      const auto wh = w.wh.value().matrix();
      for (Index t = steps; t-- > 0;) {
        auto ts = static_cast<std::size_t>(t);
        const RowMatrix & g = gates[ts];
        const auto i = g.leftCols(hidden).array();
        const auto f = g.middleCols(hidden, hidden).array();
        const auto c_hat = g.middleCols(2 * hidden, hidden).array();
        const auto o = g.rightCols(hidden).array();
        const auto tc = cells[ts + 1].array().tanh().eval();

        RowMatrix dh = ConstStridedMap(grad.data() + t * hidden, batch, hidden, Stride(steps * hidden));
        dh += dh_next;
        const auto dc = (dh.array() * o * (S(1) - tc.square()) + dc_next.array()).eval();

        dg.leftCols(hidden) = (dc * c_hat * i * (S(1) - i)).matrix();
        dg.middleCols(hidden, hidden) = (dc * cells[ts].array() * f * (S(1) - f)).matrix();
        dg.middleCols(2 * hidden, hidden) = (dc * i * (S(1) - c_hat.square())).matrix();
        dg.rightCols(hidden) = (dh.array() * tc * o * (S(1) - o)).matrix();
        dc_next = (dc * f).matrix();

        StridedMap(dxw.data() + t * 4 * hidden, batch, 4 * hidden, Stride(steps * 4 * hidden)) = dg;
        dwh.noalias() += states[ts].transpose() * dg;
        dh_next.noalias() = dg * wh.transpose();
      }
      const auto xm = x.value().matrix();
      if (x.requires_grad()) {
        auto gx = tape.grad_buffer(x).matrix();
        gx.noalias() += dxw * w.wx.value().matrix().transpose();
      }
      if (w.wx.requires_grad()) tape.grad_buffer(w.wx).matrix().noalias() += xm.transpose() * dxw;
      if (w.wh.requires_grad()) tape.grad_buffer(w.wh).matrix() += dwh;
      if (w.b.requires_grad()) tape.grad_buffer(w.b).flat() += dxw.colwise().sum().transpose();
    });
}

}  // namespace

template <typename S>
Var<S> recurrent_sequence(Var<S> x, Index time_axis, const LstmWeights<S> & w)
{
  const Index rank = x.rank();
  if (rank < 2 || time_axis < 0 || time_axis >= rank - 1) {
    throw ShapeError("recurrent_sequence: time axis out of range for " + shape_string(x.shape()));
  }
  const Index steps = x.dim(time_axis);
  if (steps == 0) throw ShapeError("recurrent_sequence: time extent is 0");

  std::vector<Index> perm;
  Shape batch_shape;
  for (Index i = 0; i < rank - 1; ++i) {
    if (i != time_axis) {
      perm.push_back(i);
      batch_shape.push_back(x.dim(i));
    }
  }
  perm.push_back(time_axis);
  perm.push_back(rank - 1);
  const Index batch = shape_size(batch_shape);
  const Index hidden = w.wh.dim(0);

  Var<S> moved = reshape(permute(x, perm), {batch, steps, x.shape().back()});
  Var<S> h = lstm_core(moved, w);
  Shape out_shape = batch_shape;
  out_shape.push_back(steps);
  out_shape.push_back(hidden);
  return permute(reshape(h, out_shape), inverse_permutation(perm));
}

template <typename S>
Var<S> pool_pairs(Var<S> x)
{
  if (x.rank() < 2) throw ShapeError("pool_pairs expects [..., T, D]");
  const Index steps = x.dim(x.rank() - 2), width = x.shape().back();
  const Index outer = x.value().size() / (steps * width);
  const Index pooled = (steps + 1) / 2;
  Shape shape = x.shape();
  shape[shape.size() - 2] = pooled;
  Tensor<S> out(shape);
  auto src = [&](Index o, Index t) { return x.value().data() + (o * steps + std::min(t, steps - 1)) * width; };
  for (Index o = 0; o < outer; ++o) {
    for (Index p = 0; p < pooled; ++p) {
      const S * a = src(o, 2 * p);
      const S * b = src(o, 2 * p + 1);
      S * dst = out.data() + (o * pooled + p) * width;
      for (Index j = 0; j < width; ++j) dst[j] = S(0.5) * (a[j] + b[j]);
    }
  }
  return x.tape().record(
    std::move(out), {x}, [x, outer, steps, pooled, width](Tape<S> & tape, const Tensor<S> & g) {
      S * gx = tape.grad_buffer(x).data();
      for (Index o = 0; o < outer; ++o) {
        for (Index p = 0; p < pooled; ++p) {
          const S * src = g.data() + (o * pooled + p) * width;
          S * a = gx + (o * steps + 2 * p) * width;
          S * b = gx + (o * steps + std::min(2 * p + 1, steps - 1)) * width;
          for (Index j = 0; j < width; ++j) {
            a[j] += S(0.5) * src[j];
            b[j] += S(0.5) * src[j];
          }
        }
      }
    });
}

template <typename S>
Var<S> upsample_repeat(Var<S> x, Index length)
{
  if (x.rank() < 2) throw ShapeError("upsample_repeat expects [..., T, D]");
  const Index steps = x.dim(x.rank() - 2), width = x.shape().back();
  if (length > 2 * steps || length < 1) throw ShapeError("upsample_repeat: length out of range");
  const Index outer = x.value().size() / (steps * width);
  Shape shape = x.shape();
  shape[shape.size() - 2] = length;
  Tensor<S> out(shape);
  for (Index o = 0; o < outer; ++o) {
    for (Index t = 0; t < length; ++t) {
      const S * src = x.value().data() + (o * steps + t / 2) * width;
      std::copy(src, src + width, out.data() + (o * length + t) * width);
    }
  }
  return x.tape().record(
    std::move(out), {x}, [x, outer, steps, length, width](Tape<S> & tape, const Tensor<S> & g) {
      S * gx = tape.grad_buffer(x).data();
      for (Index o = 0; o < outer; ++o) {
        for (Index t = 0; t < length; ++t) {
          const S * src = g.data() + (o * length + t) * width;
          S * dst = gx + (o * steps + t / 2) * width;
          for (Index j = 0; j < width; ++j) dst[j] += src[j];
        }
      }
    });
}

template <typename S>
Var<S> temporal_pyramid(Var<S> x, const PyramidWeights<S> & w)
{
  if (x.rank() < 2) throw ShapeError("temporal_pyramid expects [..., T, D]");
  const Index steps = x.dim(x.rank() - 2);
  if (steps < 2) {
    throw ShapeError("temporal_pyramid: a 2-level pyramid needs at least 2 time steps");
  }
  Var<S> coarse = linear(pool_pairs(x), w.w_down, w.b_down);
  Var<S> lateral = linear(x, w.w_lateral, w.b_lateral);
  return add(lateral, upsample_repeat(coarse, steps));
}

#define FLOWCAST_INSTANTIATE_LAYERS(S)                                  \
  template Var<S> mlp(Var<S>, const MlpWeights<S> &);                   \
  template Var<S> recurrent_sequence(Var<S>, Index, const LstmWeights<S> &); \
  template Var<S> pool_pairs(Var<S>);                                   \
  template Var<S> upsample_repeat(Var<S>, Index);                       \
  template Var<S> temporal_pyramid(Var<S>, const PyramidWeights<S> &);

FLOWCAST_INSTANTIATE_LAYERS(float)
FLOWCAST_INSTANTIATE_LAYERS(double)
FLOWCAST_INSTANTIATE_LAYERS(long double)

#undef FLOWCAST_INSTANTIATE_LAYERS

}  // namespace flowcast
