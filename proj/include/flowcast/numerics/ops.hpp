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

#ifndef FLOWCAST__NUMERICS__OPS_HPP_
#define FLOWCAST__NUMERICS__OPS_HPP_

#include "flowcast/numerics/tape.hpp"
#include "flowcast/numerics/tensor.hpp"

#include <vector>

// Differentiable tensor ops. Every op records one node on the tape of its
// inputs. Instantiated for float and double.

namespace flowcast
{

// Elementwise, identical shapes.
template <typename S> Var<S> add(Var<S> a, Var<S> b);
template <typename S> Var<S> sub(Var<S> a, Var<S> b);
template <typename S> Var<S> mul(Var<S> a, Var<S> b);
template <typename S> Var<S> scale(Var<S> a, S factor);
template <typename S> Var<S> square(Var<S> a);
template <typename S> Var<S> relu(Var<S> a);
template <typename S> Var<S> tanh(Var<S> a);
template <typename S> Var<S> sigmoid(Var<S> a);
template <typename S> Var<S> exp(Var<S> a);
/// Throws NumericalError on non-positive input.
template <typename S> Var<S> log(Var<S> a);

/// `b.shape()` must be a trailing suffix of `a.shape()`; b is tiled.
template <typename S> Var<S> add_broadcast(Var<S> a, Var<S> b);
/// Multiply by a constant whose shape is a trailing suffix of `a.shape()`.
template <typename S> Var<S> mul_constant(Var<S> a, const Tensor<S> & c);
/// Multiply every feature row by mask[row]; mask shape is a.shape() without the last axis.
template <typename S> Var<S> mask_rows(Var<S> a, const Tensor<S> & mask);

// Reductions.
template <typename S> Var<S> sum(Var<S> a);
template <typename S> Var<S> mean(Var<S> a);
template <typename S> Var<S> sum_axis(Var<S> a, Index axis);
template <typename S> Var<S> mean_axis(Var<S> a, Index axis);

// Layout.
template <typename S> Var<S> reshape(Var<S> a, Shape shape);
template <typename S> Var<S> permute(Var<S> a, std::vector<Index> perm);
template <typename S> Var<S> slice(Var<S> a, Index axis, Index begin, Index end);
/// Select index `i` along `axis`, dropping the axis.
template <typename S> Var<S> take(Var<S> a, Index axis, Index i);
/// Insert a new axis of extent `n` at `axis`, tiling the input.
template <typename S> Var<S> expand(Var<S> a, Index axis, Index n);

// Affine maps on the last axis: x [..., in], w [in, out], b [out].
template <typename S> Var<S> matmul(Var<S> x, Var<S> w);
template <typename S> Var<S> linear(Var<S> x, Var<S> w, Var<S> b);

// Last-axis normalisations.
template <typename S> Var<S> softmax(Var<S> a);
template <typename S> Var<S> log_softmax(Var<S> a);

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Normalise every slice along `axis` to zero mean and unit variance, then
/// apply gamma/beta (both of extent a.dim(axis)).
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, Index axis, S eps = S(kLayerNormEpsilon));

}  // namespace flowcast

#endif  // FLOWCAST__NUMERICS__OPS_HPP_
