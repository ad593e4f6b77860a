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

#include "flowcast/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace flowcast
{

template <typename S>
Var<S> gmm_loss_log(Var<S> trajectories, Var<S> log_scores, const Tensor<S> & gt, const Tensor<S> & valid)
{
  if (trajectories.rank() != 3 || log_scores.rank() != 1 || log_scores.dim(0) != trajectories.dim(0)) {
    throw ShapeError(
      "gmm_loss: trajectories " + shape_string(trajectories.shape()) + " vs scores " +
      shape_string(log_scores.shape()));
  }
  const Index k = trajectories.dim(0), t = trajectories.dim(1), c = trajectories.dim(2);
  if (gt.shape() != Shape{t, c} || valid.shape() != Shape{t}) {
    throw ShapeError("gmm_loss: ground truth " + shape_string(gt.shape()) + " does not match trajectories");
  }
  const auto & traj = trajectories.value();
  const auto & ls = log_scores.value();
  std::vector<S> z(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    S r = 0;
    for (Index f = 0; f < t; ++f) {
      if (valid[f] == S(0)) continue;
      for (Index ch = 0; ch < c; ++ch) {
        const S d = gt[f * c + ch] - traj[(i * t + f) * c + ch];
        r += d * d;
      }
    }
    z[static_cast<std::size_t>(i)] = ls[i] - S(0.5) * r;
  }
  const S m = *std::max_element(z.begin(), z.end());
  S total = 0;
  for (S v : z) total += std::exp(v - m);
  const S loss = -(m + std::log(total));
  if (!std::isfinite(loss)) throw NumericalError("gmm_loss is not finite");
  std::vector<S> w(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) w[i] = std::exp(z[i] - m) / total;

  return trajectories.tape().record(
    Tensor<S>::scalar(loss), {trajectories, log_scores},
    [trajectories, log_scores, gt, valid, w, k, t, c](Tape<S> & tape, const Tensor<S> & g) {
      const S up = g[0];
      if (log_scores.requires_grad()) {
        auto & gl = tape.grad_buffer(log_scores);
        for (Index i = 0; i < k; ++i) gl[i] -= up * w[static_cast<std::size_t>(i)];
      }
      if (trajectories.requires_grad()) {
        auto & gtraj = tape.grad_buffer(trajectories);
        const auto & traj = trajectories.value();
        for (Index i = 0; i < k; ++i) {
          const S wi = up * w[static_cast<std::size_t>(i)];
          for (Index f = 0; f < t; ++f) {
            if (valid[f] == S(0)) continue;
            for (Index ch = 0; ch < c; ++ch) {
              const Index at = (i * t + f) * c + ch;
              gtraj[at] += wi * (traj[at] - gt[f * c + ch]);
            }
          }
        }
      }
    });
}

template <typename S>
Var<S> gmm_loss(Var<S> trajectories, Var<S> scores, const Tensor<S> & gt, const Tensor<S> & valid)
{
  const auto & s = scores.value();
  for (Index i = 0; i < s.size(); ++i) {
    if (!(s[i] > S(0))) throw ShapeError("gmm_loss: scores must be positive (softmax output)");
  }
  return gmm_loss_log(trajectories, log(scores), gt, valid);
}

template <typename S>
Var<S> margin_loss(Var<S> scores, Index positive, S margin)
{
  if (scores.rank() != 1 || scores.dim(0) < 2) throw ShapeError("margin_loss needs at least two scores");
  const Index k = scores.dim(0);
  if (positive < 0 || positive >= k) throw ShapeError("margin_loss: positive index out of range");
  const auto & s = scores.value();
  const S norm = S(1) / static_cast<S>(k - 1);
  S loss = 0;
  std::vector<std::uint8_t> active(static_cast<std::size_t>(k), 0);
  for (Index i = 0; i < k; ++i) {
    if (i == positive) continue;
    const S h = s[i] + margin - s[positive];
    if (h > S(0)) {
      loss += h;
      active[static_cast<std::size_t>(i)] = 1;
    }
  }
  loss *= norm;
  return scores.tape().record(
    Tensor<S>::scalar(loss), {scores}, [scores, active, positive, norm](Tape<S> & tape, const Tensor<S> & g) {
      auto & gs = tape.grad_buffer(scores);
      for (std::size_t i = 0; i < active.size(); ++i) {
        if (!active[i]) continue;
        gs[static_cast<Index>(i)] += g[0] * norm;
        gs[positive] -= g[0] * norm;
      }
    });
}

template <typename S>
Var<S> temporal_flow_loss(Var<S> h_pred, const Tensor<S> & h_gt)
{
  if (h_pred.shape() != h_gt.shape()) {
    throw ShapeError(
      "temporal_flow_loss: " + shape_string(h_pred.shape()) + " vs " + shape_string(h_gt.shape()));
  }
  return mean(square(sub(h_pred, h_pred.tape().constant(h_gt))));
}

template <typename S>
LossBreakdown<S> total_loss(Var<S> regression, Var<S> score, Var<S> temporal_flow, const LossWeights & w)
{
  Var<S> total = add(add(regression, scale(score, static_cast<S>(w.beta_score))), scale(temporal_flow, static_cast<S>(w.beta_tf)));
  return {total, regression, score, temporal_flow};
}

template <typename S>
Index positive_mode(const Tensor<S> & trajectories, const Tensor<S> & gt, Index first)
{
  const Index k = trajectories.dim(0), t = trajectories.dim(1), c = trajectories.dim(2);
  const Index cg = gt.dim(1);
  if (gt.dim(0) != t || first < 0 || first >= t) throw ShapeError("positive_mode: frame range mismatch");
  Index best = 0;
  double best_end = std::numeric_limits<double>::infinity(), best_avg = best_end;
  for (Index i = 0; i < k; ++i) {
    auto dist = [&](Index f) {
      const double dx = static_cast<double>(trajectories[(i * t + f) * c] - gt[f * cg]);
      const double dy = static_cast<double>(trajectories[(i * t + f) * c + 1] - gt[f * cg + 1]);
      return std::hypot(dx, dy);
    };
    const double end = dist(t - 1);
    double avg = 0.0;
    for (Index f = first; f < t; ++f) avg += dist(f);
    avg /= static_cast<double>(t - first);
    if (end < best_end || (end == best_end && avg < best_avg)) {
      best = i;
      best_end = end;
      best_avg = avg;
    }
  }
  return best;
}

#define FLOWCAST_INSTANTIATE_LOSSES(S)                                                                   \
  template Var<S> gmm_loss_log(Var<S>, Var<S>, const Tensor<S> &, const Tensor<S> &);                    \
  template Var<S> gmm_loss(Var<S>, Var<S>, const Tensor<S> &, const Tensor<S> &);                        \
  template Var<S> margin_loss(Var<S>, Index, S);                                                         \
  template Var<S> temporal_flow_loss(Var<S>, const Tensor<S> &);                                         \
  template LossBreakdown<S> total_loss(Var<S>, Var<S>, Var<S>, const LossWeights &);                     \
  template Index positive_mode(const Tensor<S> &, const Tensor<S> &, Index);

FLOWCAST_INSTANTIATE_LOSSES(float)
FLOWCAST_INSTANTIATE_LOSSES(double)
FLOWCAST_INSTANTIATE_LOSSES(long double)

#undef FLOWCAST_INSTANTIATE_LOSSES

}  // namespace flowcast
