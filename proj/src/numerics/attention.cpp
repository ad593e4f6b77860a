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

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace flowcast
{

AttentionMask::AttentionMask(Shape shape, bool fill)
: shape_(std::move(shape)), valid_(static_cast<std::size_t>(shape_size(shape_)), fill ? 1 : 0)
{
}

AttentionMask::AttentionMask(Shape shape, std::vector<std::uint8_t> valid)
: shape_(std::move(shape)), valid_(std::move(valid))
{
  if (static_cast<Index>(valid_.size()) != shape_size(shape_)) {
    throw ShapeError("attention mask size does not match shape " + shape_string(shape_));
  }
}

bool AttentionMask::empty_mask() const
{
  return std::none_of(valid_.begin(), valid_.end(), [](std::uint8_t v) { return v != 0; });
}

template <typename S>
Var<S> scaled_dot_attention(
  Var<S> q, Var<S> k, Var<S> v, const std::vector<std::uint8_t> & key_valid,
  AttentionTrace<S> * trace)
{
  using RowMatrix = typename Tensor<S>::RowMatrix;
  using ConstMap = Eigen::Map<const RowMatrix>;
  using Map = Eigen::Map<RowMatrix>;

  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw ShapeError("scaled_dot_attention expects rank-3 operands");
  }
  const Index batch = q.dim(0), lq = q.dim(1), d = q.dim(2);
  const Index lk = k.dim(1), dv = v.dim(2);
  if (k.dim(0) != batch || v.dim(0) != batch || k.dim(2) != d || v.dim(1) != lk) {
    throw ShapeError(
      "scaled_dot_attention: incompatible shapes " + shape_string(q.shape()) + ", " +
      shape_string(k.shape()) + ", " + shape_string(v.shape()));
  }
  if (static_cast<Index>(key_valid.size()) != batch * lk) {
    throw ShapeError("scaled_dot_attention: key mask size mismatch");
  }
  const S scale = S(1) / std::sqrt(static_cast<S>(d));

  Tensor<S> out({batch, lq, dv});
  Tensor<S> probs({batch, lq, lk});
  Index empty_rows = 0;
  for (Index b = 0; b < batch; ++b) {
    ConstMap qb(q.value().data() + b * lq * d, lq, d);
    ConstMap kb(k.value().data() + b * lk * d, lk, d);
    ConstMap vb(v.value().data() + b * lk * dv, lk, dv);
    Map pb(probs.data() + b * lq * lk, lq, lk);
    Map ob(out.data() + b * lq * dv, lq, dv);
    const std::uint8_t * valid = key_valid.data() + b * lk;
    const bool any_valid = std::any_of(valid, valid + lk, [](std::uint8_t x) { return x != 0; });
    if (!any_valid) {
      pb.setZero();
      ob.setZero();
      empty_rows += lq;
      continue;
    }
    pb.noalias() = (qb * kb.transpose()) * scale;
    for (Index r = 0; r < lq; ++r) {
      S m = -std::numeric_limits<S>::infinity();
      for (Index c = 0; c < lk; ++c) {
        if (valid[c]) m = std::max(m, pb(r, c));
      }
      S total = 0;
      for (Index c = 0; c < lk; ++c) {
        const S e = valid[c] ? std::exp(pb(r, c) - m) : S(0);
        pb(r, c) = e;
        total += e;
      }
      pb.row(r) /= total;
    }
    ob.noalias() = pb * vb;
  }
  if (trace != nullptr) {
    trace->empty_rows += empty_rows;
    for (Index b = 0; b < batch; ++b) {
      trace->weights.emplace_back(ConstMap(probs.data() + b * lq * lk, lq, lk));
    }
  }

  return q.tape().record(
    std::move(out), {q, k, v},
    [q, k, v, probs = std::move(probs), batch, lq, lk, d, dv, scale](
      Tape<S> & tape, const Tensor<S> & g) {
      const bool need_q = q.requires_grad(), need_k = k.requires_grad(), need_v = v.requires_grad();
      S * gq = need_q ? tape.grad_buffer(q).data() : nullptr;
      S * gk = need_k ? tape.grad_buffer(k).data() : nullptr;
      S * gv = need_v ? tape.grad_buffer(v).data() : nullptr;
      RowMatrix dp(lq, lk);
      for (Index b = 0; b < batch; ++b) {
        ConstMap qb(q.value().data() + b * lq * d, lq, d);
        ConstMap kb(k.value().data() + b * lk * d, lk, d);
        ConstMap vb(v.value().data() + b * lk * dv, lk, dv);
        ConstMap pb(probs.data() + b * lq * lk, lq, lk);
        ConstMap gb(g.data() + b * lq * dv, lq, dv);
        if (need_v) Map(gv + b * lk * dv, lk, dv).noalias() += pb.transpose() * gb;
        if (!need_q && !need_k) continue;
        dp.noalias() = gb * vb.transpose();
        // Softmax backward: dS = P o (dP - rowsum(dP o P)).
        for (Index r = 0; r < lq; ++r) {
          const S dot = dp.row(r).dot(pb.row(r));
          dp.row(r).array() = pb.row(r).array() * (dp.row(r).array() - dot) * scale;
        }
        if (need_q) Map(gq + b * lq * d, lq, d).noalias() += dp * kb;
        if (need_k) Map(gk + b * lk * d, lk, d).noalias() += dp.transpose() * qb;
      }
    });
}

namespace
{

/// Permutation that moves `axis` to the second-to-last position.
std::vector<Index> attend_permutation(Index rank, Index axis)
{
  std::vector<Index> perm;
  for (Index i = 0; i < rank - 1; ++i) {
    if (i != axis) perm.push_back(i);
  }
  perm.push_back(axis);
  perm.push_back(rank - 1);
  return perm;
}

Shape batch_axes(const Shape & shape, Index axis)
{
  Shape out;
  for (Index i = 0; i + 1 < static_cast<Index>(shape.size()); ++i) {
    if (i != axis) out.push_back(shape[static_cast<std::size_t>(i)]);
  }
  return out;
}

template <typename S>
void require_finite(const Var<S> & x, const char * what)
{
  if (!x.value().all_finite()) throw NumericalError(std::string(what) + ": non-finite input");
}

}  // namespace

template <typename S>
Var<S> axis_cross_attention(
  Var<S> x1, Var<S> x2, Index axis_q, Index axis_kv, const AttentionMask & mask,
  const AttentionWeights<S> & w, AttentionTrace<S> * trace)
{
  const Index rank1 = x1.rank(), rank2 = x2.rank();
  if (rank1 < 2 || axis_q < 0 || axis_q >= rank1 - 1) {
    throw ShapeError(
      "attention: query axis " + std::to_string(axis_q) + " out of range for " +
      shape_string(x1.shape()));
  }
  if (rank2 < 2 || axis_kv < 0 || axis_kv >= rank2 - 1) {
    throw ShapeError(
      "attention: key axis " + std::to_string(axis_kv) + " out of range for " +
      shape_string(x2.shape()));
  }
  const Index width = x1.shape().back();
  if (x2.shape().back() != width || w.wq.dim(0) != width) {
    throw ShapeError("attention: feature width mismatch");
  }
  const Shape batch = batch_axes(x1.shape(), axis_q);
  if (batch != batch_axes(x2.shape(), axis_kv)) {
    throw ShapeError(
      "attention: non-attended axes differ between " + shape_string(x1.shape()) + " and " +
      shape_string(x2.shape()));
  }
  const Shape key_positions(x2.shape().begin(), x2.shape().end() - 1);
  if (mask.shape() != key_positions) {
    throw ShapeError(
      "attention: mask shape " + shape_string(mask.shape()) + " does not match " +
      shape_string(key_positions));
  }
  require_finite(x1, "attention");
  require_finite(x2, "attention");

  const Index nbatch = shape_size(batch);
  const Index lq = x1.dim(axis_q), lk = x2.dim(axis_kv);

  // Key validity laid out as [batch, Lk].
  std::vector<std::uint8_t> key_valid;
  {
    Tensor<double> m(key_positions);
    for (Index i = 0; i < m.size(); ++i) m[i] = mask.at(i) ? 1.0 : 0.0;
    m = m.reshaped([&] {
      Shape s = key_positions;
      s.push_back(1);
      return s;
    }());
    const Tensor<double> moved = permute_tensor(m, attend_permutation(rank2, axis_kv));
    key_valid.resize(static_cast<std::size_t>(moved.size()));
    for (Index i = 0; i < moved.size(); ++i) key_valid[static_cast<std::size_t>(i)] = moved[i] != 0.0;
  }

  const std::vector<Index> perm_q = attend_permutation(rank1, axis_q);
  const std::vector<Index> perm_kv = attend_permutation(rank2, axis_kv);

  Var<S> q = linear(x1, w.wq, w.bq);
  Var<S> k = matmul(x2, w.wk);
  Var<S> v = linear(x2, w.wv, w.bv);
  q = reshape(permute(q, perm_q), {nbatch, lq, width});
  k = reshape(permute(k, perm_kv), {nbatch, lk, width});
  v = reshape(permute(v, perm_kv), {nbatch, lk, width});

  Var<S> o = scaled_dot_attention(q, k, v, key_valid, trace);

  Shape moved_shape = batch;
  moved_shape.push_back(lq);
  moved_shape.push_back(width);
  o = permute(reshape(o, moved_shape), inverse_permutation(perm_q));
  o = linear(o, w.wo, w.bo);

  // Rows without any valid key contribute exactly zero, projection bias included.
  std::vector<std::uint8_t> batch_has_key(static_cast<std::size_t>(nbatch), 0);
  bool any_empty = false;
  for (Index b = 0; b < nbatch; ++b) {
    const auto * kv = key_valid.data() + b * lk;
    batch_has_key[static_cast<std::size_t>(b)] = std::any_of(kv, kv + lk, [](std::uint8_t x) { return x != 0; });
    any_empty = any_empty || !batch_has_key[static_cast<std::size_t>(b)];
  }
  if (!any_empty) return o;

  Tensor<S> row_valid({nbatch, lq, 1});
  for (Index b = 0; b < nbatch; ++b) {
    for (Index r = 0; r < lq; ++r) row_valid[b * lq + r] = batch_has_key[static_cast<std::size_t>(b)] ? S(1) : S(0);
  }
  Shape moved_rows = batch;
  moved_rows.push_back(lq);
  moved_rows.push_back(1);
  Tensor<S> rows = permute_tensor(row_valid.reshaped(moved_rows), inverse_permutation(perm_q));
  return mask_rows(o, rows.reshaped(Shape(x1.shape().begin(), x1.shape().end() - 1)));
}

template <typename S>
Var<S> axis_self_attention(
  Var<S> x, Index axis, const AttentionMask & mask, const AttentionWeights<S> & w,
  AttentionTrace<S> * trace)
{
  return axis_cross_attention(x, x, axis, axis, mask, w, trace);
}

#define FLOWCAST_INSTANTIATE_ATTENTION(S)                                                      \
  template Var<S> scaled_dot_attention(                                                        \
    Var<S>, Var<S>, Var<S>, const std::vector<std::uint8_t> &, AttentionTrace<S> *);           \
  template Var<S> axis_self_attention(                                                         \
    Var<S>, Index, const AttentionMask &, const AttentionWeights<S> &, AttentionTrace<S> *);   \
  template Var<S> axis_cross_attention(                                                        \
    Var<S>, Var<S>, Index, Index, const AttentionMask &, const AttentionWeights<S> &,          \
    AttentionTrace<S> *);

FLOWCAST_INSTANTIATE_ATTENTION(float)
FLOWCAST_INSTANTIATE_ATTENTION(double)
FLOWCAST_INSTANTIATE_ATTENTION(long double)

#undef FLOWCAST_INSTANTIATE_ATTENTION

}  // namespace flowcast
