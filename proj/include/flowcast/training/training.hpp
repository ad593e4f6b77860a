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

#ifndef FLOWCAST__TRAINING__TRAINING_HPP_
#define FLOWCAST__TRAINING__TRAINING_HPP_

#include "flowcast/augment/augment.hpp"
#include "flowcast/losses/losses.hpp"
#include "flowcast/model/model.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace flowcast
{

struct TrainConfig
{
  double lr = 2.5e-4;
  Index epochs = 10;
  Index batch_size = 8;
  /// Stop after this many optimizer steps; 0 runs every epoch.
  Index max_steps = 0;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augmentation;
  LossWeights weights;
  double grad_clip = 5.0;
  double val_fraction = 0.1;
  int threads = 1;
};

/// Piecewise-constant schedule: lr, lr/10 from 85% of the epochs, lr/100 from 95%.
double lr_at(Index epoch, const TrainConfig & cfg);

template <typename S>
struct AdamState
{
  ParameterSet<S> m, v;
  Index step = 0;
};

struct AdamHyper
{
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every parameter present in `grads`.
template <typename S>
void adam_step(ParameterSet<S> & params, const ParameterSet<S> & grads, AdamState<S> & state, double lr, const AdamHyper & h = {});

/// Scale all gradients so their global norm is at most `max_norm`; returns the norm before clipping.
template <typename S>
double clip_global_norm(ParameterSet<S> & grads, double max_norm);

/// Held out for validation when the seeded hash of the id lands below the fraction.
bool in_validation(const std::string & scenario_id, std::uint64_t seed, double fraction);

template <typename S>
struct SampleLoss
{
  double total = 0.0, regression = 0.0, score = 0.0, temporal_flow = 0.0;
  ParameterSet<S> grads;
};

/// Network loss of one prepared scene; the best-matching mode is the margin-loss positive.
template <typename S>
LossBreakdown<S> model_loss(
  const BoundParameters<S> & params, const ModelConfig & cfg, const NormalizedScene & scene, const LossWeights & w);

/// Loss components and gradients of one prepared scene.
template <typename S>
SampleLoss<S> sample_loss(
  const ParameterSet<S> & params, const ModelConfig & cfg, const NormalizedScene & scene, const LossWeights & w,
  bool with_grads = true);

struct StepRecord
{
  Index step = 0;
  Index epoch = 0;
  double lr = 0.0;
  double total = 0.0, regression = 0.0, score = 0.0, temporal_flow = 0.0;
  double grad_norm = 0.0;
};

struct EpochRecord
{
  Index epoch = 0;
  double lr = 0.0;
  double total = 0.0, regression = 0.0, score = 0.0, temporal_flow = 0.0;
  /// NaN when the validation split is empty.
  double val_brier_min_fde = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult
{
  Checkpoint checkpoint;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::vector<std::size_t> train_indices, val_indices;
};

/// Train on `corpus[sampling[i]]`; the validation split is taken by scenario id.
TrainResult train(
  const std::vector<Scenario> & corpus, const std::vector<std::size_t> & sampling, const ModelConfig & model_cfg,
  const TrainConfig & cfg);
TrainResult train(const std::vector<Scenario> & corpus, const ModelConfig & model_cfg, const TrainConfig & cfg);

std::string history_csv(const std::vector<EpochRecord> & epochs);
std::string steps_csv(const std::vector<StepRecord> & steps);

/// Predict every scenario (in parallel, order preserved).
std::vector<PredictionRecord> predict_corpus(
  const ParameterSet<float> & params, const ModelConfig & cfg, const std::vector<Scenario> & scenarios, int threads = 1);

EvalResult evaluate_model(
  const ParameterSet<float> & params, const ModelConfig & cfg, const std::vector<Scenario> & scenarios, int threads = 1);

struct HardMiningConfig
{
  double subset_fraction = 0.5;
  double q = 0.25;
  Index r = 3;
};

struct HardMiningResult
{
  std::vector<std::size_t> subset;      // proxy training scenarios
  std::vector<std::size_t> complement;  // scored scenarios
  std::vector<double> complement_scores;  // proxy brier-minFDE, aligned with `complement`
  std::vector<std::size_t> mined;       // hardest first
  std::vector<std::size_t> sampling;    // every index once, mined ones r times
  Checkpoint proxy;
};

/// Top floor(q * n) by score, ties to the lower corpus index.
std::vector<std::size_t> select_hard(
  const std::vector<std::size_t> & candidates, const std::vector<double> & scores, double q);

/// 0..n-1 followed by (r - 1) extra copies of each mined index.
std::vector<std::size_t> oversample(std::size_t n, const std::vector<std::size_t> & mined, Index r);

HardMiningResult hard_mine(
  const std::vector<Scenario> & corpus, const ModelConfig & model_cfg, const TrainConfig & proxy_cfg,
  const HardMiningConfig & mining);

}  // namespace flowcast

#endif  // FLOWCAST__TRAINING__TRAINING_HPP_
