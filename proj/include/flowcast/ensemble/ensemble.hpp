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

#ifndef FLOWCAST__ENSEMBLE__ENSEMBLE_HPP_
#define FLOWCAST__ENSEMBLE__ENSEMBLE_HPP_

#include "flowcast/metrics/metrics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace flowcast
{

struct ClusterAssignment
{
  std::vector<Index> labels;           // one per candidate, in [0, K)
  Eigen::MatrixX2d centroids;          // [K, 2]
  int iterations = 0;
  bool converged = false;
  /// Fewer distinct endpoints than clusters, so some centroids coincide.
  bool degenerate = false;
  /// Sum of squared endpoint distances to centroids after every iteration.
  std::vector<double> objective;
};

/**
 * Lloyd iterations on endpoints [N, 2] with k-means++ seeding. Assignment
 * ties go to the lowest cluster index. A cluster that empties takes the
 * point farthest from its centroid among clusters with spare members.
 */
ClusterAssignment kmeans_endpoints(const Eigen::MatrixX2d & endpoints, Index k, std::uint64_t seed, int max_iter = 100);

double kmeans_objective(const Eigen::MatrixX2d & endpoints, const ClusterAssignment & a);

/// Candidates pooled from M members: every mode with its member score.
struct CandidatePool
{
  std::vector<Trajectory<double>> trajectories;
  std::vector<double> scores;

  Eigen::MatrixX2d endpoints() const;
};

CandidatePool pool_candidates(const std::vector<PredictionRecord> & members);

/// Unweighted mean trajectory and summed score per cluster, scores then normalized.
PredictionRecord fuse(const CandidatePool & pool, const ClusterAssignment & assignment, const std::string & scenario_id);

PredictionRecord ensemble_scenario(const std::vector<PredictionRecord> & members, Index k, std::uint64_t seed);

/// members[m] is one model's predictions; every model must cover the same scenarios.
std::vector<PredictionRecord> mte(const std::vector<std::vector<PredictionRecord>> & members, Index k, std::uint64_t seed);

void mte_files(const std::vector<std::string> & inputs, Index k, std::uint64_t seed, const std::string & out);

}  // namespace flowcast

#endif  // FLOWCAST__ENSEMBLE__ENSEMBLE_HPP_
