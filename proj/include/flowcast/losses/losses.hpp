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

#ifndef FLOWCAST__LOSSES__LOSSES_HPP_
#define FLOWCAST__LOSSES__LOSSES_HPP_

#include "flowcast/numerics/ops.hpp"

namespace flowcast
{

struct LossWeights
{
  double beta_score = 0.3;
  double beta_tf = 0.3;
  double margin = 0.15;
};

/**
 * Mixture regression loss over modes i:
 *   -log sum_i exp(log s_i - 1/2 sum_t valid_t sum_c (gt_tc - pred_itc)^2)
 * evaluated with log-sum-exp. trajectories [K, T, C], log_scores [K],
 * gt [T, C], valid [T].
 */
template <typename S>
Var<S> gmm_loss_log(Var<S> trajectories, Var<S> log_scores, const Tensor<S> & gt, const Tensor<S> & valid);

/// Same loss from probabilities; rejects any score <= 0.
template <typename S>
Var<S> gmm_loss(Var<S> trajectories, Var<S> scores, const Tensor<S> & gt, const Tensor<S> & valid);

/// 1/(K-1) sum_{i != positive} max(0, s_i + margin - s_positive); zero slope at the kink.
template <typename S>
Var<S> margin_loss(Var<S> scores, Index positive, S margin = S(0.15));

/// Mean squared error over every element.
template <typename S>
Var<S> temporal_flow_loss(Var<S> h_pred, const Tensor<S> & h_gt);

template <typename S>
struct LossBreakdown
{
  Var<S> total, regression, score, temporal_flow;
};

template <typename S>
LossBreakdown<S> total_loss(Var<S> regression, Var<S> score, Var<S> temporal_flow, const LossWeights & w = {});

/**
 * Mode closest to the ground truth over frames [first, T): smallest final
 * displacement, then smallest mean displacement, then lowest index.
 * Uses channels 0 and 1 of trajectories [K, T, C] and gt [T, C'].
 */
template <typename S>
Index positive_mode(const Tensor<S> & trajectories, const Tensor<S> & gt, Index first);

}  // namespace flowcast

#endif  // FLOWCAST__LOSSES__LOSSES_HPP_
