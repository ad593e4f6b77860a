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

#ifndef FLOWCAST__METRICS__METRICS_HPP_
#define FLOWCAST__METRICS__METRICS_HPP_

#include "flowcast/scenario/scenario.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace flowcast
{

/// Positions over the future horizon, one row per frame.
template <typename S>
using Trajectory = Eigen::Matrix<S, Eigen::Dynamic, 2>;

template <typename S>
struct ModeSelection
{
  S value;
  Index index;
};

inline constexpr double kMissThreshold = 2.0;

/// Smallest final-frame distance; ties go to the lowest index.
template <typename S>
ModeSelection<S> min_fde(const std::vector<Trajectory<S>> & modes, const Trajectory<S> & gt);

/// Smallest mean per-frame distance; ties go to the lowest index.
template <typename S>
ModeSelection<S> min_ade(const std::vector<Trajectory<S>> & modes, const Trajectory<S> & gt);

template <typename S>
bool is_miss(const std::vector<Trajectory<S>> & modes, const Trajectory<S> & gt, S threshold = S(kMissThreshold));

/// How the (1 - p)^2 penalty combines with the displacement.
enum class BrierConvention { kAdditive, kMultiplicative };

template <typename S>
S brier_min_fde(
  const std::vector<Trajectory<S>> & modes, const Eigen::Matrix<S, Eigen::Dynamic, 1> & scores,
  const Trajectory<S> & gt, BrierConvention convention = BrierConvention::kAdditive);

template <typename S>
S brier_min_ade(
  const std::vector<Trajectory<S>> & modes, const Eigen::Matrix<S, Eigen::Dynamic, 1> & scores,
  const Trajectory<S> & gt, BrierConvention convention = BrierConvention::kAdditive);

/// One model output in the normalized frame of its scenario.
struct PredictionRecord
{
  std::string scenario_id;
  std::vector<Trajectory<double>> trajectories;  // K x [T_f, 2]
  Eigen::VectorXd scores;                        // K, sums to 1
  std::optional<Trajectory<double>> h_pred;      // [T_h, 2]

  /// Throws SchemaError on empty modes, ragged lengths, or scores off the simplex.
  void check() const;
};

std::string to_jsonl_line(const PredictionRecord & p);
PredictionRecord prediction_from_json_line(const std::string & line, std::size_t line_number = 1);
void save_predictions(const std::vector<PredictionRecord> & records, const std::string & path);
std::vector<PredictionRecord> load_predictions(const std::string & path);

struct ScenarioMetrics
{
  std::string scenario_id;
  double min_ade = 0.0;
  double min_fde = 0.0;
  double miss = 0.0;
  double brier_min_ade = 0.0;
  double brier_min_fde = 0.0;
  double p_best = 0.0;
};

ScenarioMetrics evaluate_scenario(
  const PredictionRecord & p, const Trajectory<double> & gt,
  BrierConvention convention = BrierConvention::kAdditive);

struct EvalResult
{
  std::vector<ScenarioMetrics> rows;  // sorted by scenario_id
  /// Unset when there are no rows.
  std::optional<ScenarioMetrics> mean;
};

/**
 * Scores every prediction against its scenario's target future, measured in
 * the normalized frame. Predictions and corpus must cover the same ids.
 */
EvalResult evaluate_corpus(
  const std::vector<PredictionRecord> & predictions, const std::vector<Scenario> & corpus,
  BrierConvention convention = BrierConvention::kAdditive);

/// Header, one row per scenario, then a `mean` row when defined.
std::string to_csv(const EvalResult & r);
void write_csv(const EvalResult & r, const std::string & path);

}  // namespace flowcast

#endif  // FLOWCAST__METRICS__METRICS_HPP_
