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

#ifndef FLOWCAST__NUMERICS__LAYERS_HPP_
#define FLOWCAST__NUMERICS__LAYERS_HPP_

#include "flowcast/numerics/ops.hpp"

namespace flowcast
{

/// Two affine layers with a ReLU between: w1 [in, hidden], w2 [hidden, out].
template <typename S>
struct MlpWeights
{
  Var<S> w1, b1, w2, b2;
};

template <typename S>
Var<S> mlp(Var<S> x, const MlpWeights<S> & w);

/// Gated recurrent cell. Gate blocks are ordered input, forget, cell, output:
/// wx [in, 4H], wh [H, 4H], b [4H].
template <typename S>
struct LstmWeights
{
  Var<S> wx, wh, b;
};

/**
 * Runs the cell along `time_axis` of x [..., T, ..., in], starting from zero
 * hidden and cell state for every independent sequence. Output replaces the
 * feature axis with the hidden width H.
 */
template <typename S>
Var<S> recurrent_sequence(Var<S> x, Index time_axis, const LstmWeights<S> & w);

/// Two-level temporal feature pyramid over the second-to-last axis.
/// down: stride-2 average pooling followed by w_down/b_down;
/// lateral: per-timestep w_lateral/b_lateral. All [D, D] / [D].
template <typename S>
struct PyramidWeights
{
  Var<S> w_down, b_down, w_lateral, b_lateral;
};

/// Average adjacent pairs along the second-to-last axis; odd lengths repeat the last step.
template <typename S>
Var<S> pool_pairs(Var<S> x);

/// Nearest-neighbour upsampling along the second-to-last axis to `length` steps.
template <typename S>
Var<S> upsample_repeat(Var<S> x, Index length);

/// x [..., T, D] -> [..., T, D], T >= 2.
template <typename S>
Var<S> temporal_pyramid(Var<S> x, const PyramidWeights<S> & w);

}  // namespace flowcast

#endif  // FLOWCAST__NUMERICS__LAYERS_HPP_
