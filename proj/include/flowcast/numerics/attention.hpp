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

#ifndef FLOWCAST__NUMERICS__ATTENTION_HPP_
#define FLOWCAST__NUMERICS__ATTENTION_HPP_

#include "flowcast/numerics/ops.hpp"

#include <cstdint>
#include <vector>

namespace flowcast
{

/**
 * Validity of every key position of an attended tensor.
 *
 * The shape is the attended tensor's shape without its feature axis, so one
 * mask serves attention along any axis of that tensor.
 */
class AttentionMask
{
public:
  AttentionMask() = default;
  AttentionMask(Shape shape, bool fill = true);
  AttentionMask(Shape shape, std::vector<std::uint8_t> valid);

  /// Mask from a 0/1 tensor (nonzero = valid).
  template <typename S>
  static AttentionMask from_tensor(const Tensor<S> & t)
  {
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(t.size()));
    for (Index i = 0; i < t.size(); ++i) valid[static_cast<std::size_t>(i)] = t[i] != S(0);
    return AttentionMask(t.shape(), std::move(valid));
  }

  /// Mask covering every position of `features` (shape minus last axis).
  template <typename S>
  static AttentionMask all_valid(const Tensor<S> & features)
  {
    return AttentionMask(Shape(features.shape().begin(), features.shape().end() - 1));
  }

  const Shape & shape() const { return shape_; }
  const std::vector<std::uint8_t> & valid() const { return valid_; }
  bool at(Index flat) const { return valid_[static_cast<std::size_t>(flat)] != 0; }
  bool empty_mask() const;

private:
  Shape shape_;
  std::vector<std::uint8_t> valid_;
};

/// Single-head projections, all of width D: w* are [D, D], b* are [D].
/// Keys carry no bias: a per-query constant cancels in the softmax.
template <typename S>
struct AttentionWeights
{
  Var<S> wq, bq, wk, wv, bv, wo, bo;
};

/// Optional diagnostics of one attention call.
template <typename S>
struct AttentionTrace
{
  /// Softmax weights per batch slice, [Lq x Lk] each.
  std::vector<typename Tensor<S>::RowMatrix> weights;
  /// Query rows whose keys were all masked; their output is zero.
  Index empty_rows = 0;
};

/**
 * softmax(Q K^T / sqrt(D)) V for Q [B, Lq, D], K [B, Lk, D], V [B, Lk, Dv]
 * with key validity [B, Lk]. Rows with no valid key produce zeros.
 */
template <typename S>
Var<S> scaled_dot_attention(
  Var<S> q, Var<S> k, Var<S> v, const std::vector<std::uint8_t> & key_valid,
  AttentionTrace<S> * trace = nullptr);

/**
 * Attention along `axis` of `x`: positions along that axis attend to each
 * other while every other axis is an independent batch. `mask` has x's
 * shape without the feature axis.
 */
template <typename S>
Var<S> axis_self_attention(
  Var<S> x, Index axis, const AttentionMask & mask, const AttentionWeights<S> & w,
  AttentionTrace<S> * trace = nullptr);

/**
 * Queries from x1 along `axis_q`, keys and values from x2 along `axis_kv`.
 * The remaining non-feature axes of x1 and x2 must agree. `mask` covers x2.
 */
template <typename S>
Var<S> axis_cross_attention(
  Var<S> x1, Var<S> x2, Index axis_q, Index axis_kv, const AttentionMask & mask,
  const AttentionWeights<S> & w, AttentionTrace<S> * trace = nullptr);

}  // namespace flowcast

#endif  // FLOWCAST__NUMERICS__ATTENTION_HPP_
