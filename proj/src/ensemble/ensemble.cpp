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

#include "flowcast/ensemble/ensemble.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <random>

namespace flowcast
{

namespace
{

Index nearest(const Eigen::Vector2d & p, const Eigen::MatrixX2d & centroids, double * distance2 = nullptr)
{
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c).transpose() - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (distance2 != nullptr) *distance2 = best_d;
  return best;
}

Eigen::MatrixX2d seed_centroids(const Eigen::MatrixX2d & x, Index k, std::mt19937_64 & rng)
{
  const Index n = x.rows();
  Eigen::MatrixX2d c(k, 2);
  std::uniform_int_distribution<Index> first(0, n - 1);
  c.row(0) = x.row(first(rng));
  Eigen::VectorXd d2(n);
  for (Index i = 0; i < n; ++i) d2[i] = (x.row(i) - c.row(0)).squaredNorm();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Index j = 1; j < k; ++j) {
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0.0) {
      double u = unit(rng) * total;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        u -= d2[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[pick] <= 0.0) --pick;  // rounding fell past the last positive weight
    }
    c.row(j) = x.row(pick);
    for (Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (x.row(i) - c.row(j)).squaredNorm());
  }
  return c;
}

}  // namespace

double kmeans_objective(const Eigen::MatrixX2d & x, const ClusterAssignment & a)
{
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    total += (x.row(i) - a.centroids.row(a.labels[static_cast<std::size_t>(i)])).squaredNorm();
  }
  return total;
}

ClusterAssignment kmeans_endpoints(const Eigen::MatrixX2d & x, Index k, std::uint64_t seed, int max_iter)
{
  const Index n = x.rows();
  if (k < 1 || n < k) throw ShapeError("kmeans: need at least K candidates");
  std::mt19937_64 rng(seed);
  ClusterAssignment a;
  a.centroids = seed_centroids(x, k, rng);
  a.labels.assign(static_cast<std::size_t>(n), -1);

  for (a.iterations = 1; a.iterations <= max_iter; ++a.iterations) {
    std::vector<Index> labels(static_cast<std::size_t>(n));
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      labels[static_cast<std::size_t>(i)] = nearest(x.row(i).transpose(), a.centroids);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      Index donor = -1;
      double far = -1.0;
      for (Index i = 0; i < n; ++i) {
        const Index l = labels[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(l)] < 2) continue;
        const double d = (x.row(i) - a.centroids.row(l)).squaredNorm();
        if (d > far) {
          far = d;
          donor = i;
        }
      }
      --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(donor)])];
      labels[static_cast<std::size_t>(donor)] = c;
      counts[static_cast<std::size_t>(c)] = 1;
    }
    const bool unchanged = labels == a.labels;
    a.labels = std::move(labels);
    Eigen::MatrixX2d sums = Eigen::MatrixX2d::Zero(k, 2);
    for (Index i = 0; i < n; ++i) sums.row(a.labels[static_cast<std::size_t>(i)]) += x.row(i);
    for (Index c = 0; c < k; ++c) a.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    a.objective.push_back(kmeans_objective(x, a));
    if (unchanged) {
      a.converged = true;
      break;
    }
  }
  a.iterations = std::min(a.iterations, max_iter);
  for (Index c = 0; c < k && !a.degenerate; ++c) {
    for (Index d = c + 1; d < k; ++d) {
      if (a.centroids.row(c) == a.centroids.row(d)) {
        a.degenerate = true;
        break;
      }
    }
  }
  return a;
}

Eigen::MatrixX2d CandidatePool::endpoints() const
{
  Eigen::MatrixX2d e(static_cast<Index>(trajectories.size()), 2);
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    e.row(static_cast<Index>(i)) = trajectories[i].row(trajectories[i].rows() - 1);
  }
  return e;
}

CandidatePool pool_candidates(const std::vector<PredictionRecord> & members)
{
  if (members.empty()) throw ShapeError("ensemble needs at least one member");
  CandidatePool pool;
  for (const auto & m : members) {
    m.check();
    if (m.scenario_id != members.front().scenario_id) {
      throw SchemaError("ensemble members disagree on scenario: " + m.scenario_id + " vs " + members.front().scenario_id);
    }
    if (m.trajectories.size() != members.front().trajectories.size() ||
        m.trajectories.front().rows() != members.front().trajectories.front().rows()) {
      throw SchemaError("ensemble members disagree on mode count or horizon for " + m.scenario_id);
    }
    for (std::size_t k = 0; k < m.trajectories.size(); ++k) {
      pool.trajectories.push_back(m.trajectories[k]);
      pool.scores.push_back(m.scores[static_cast<Index>(k)]);
    }
  }
  return pool;
}

PredictionRecord fuse(const CandidatePool & pool, const ClusterAssignment & a, const std::string & scenario_id)
{
  const Index k = a.centroids.rows();
  const Index frames = pool.trajectories.front().rows();
  PredictionRecord out;
  out.scenario_id = scenario_id;
  out.trajectories.assign(static_cast<std::size_t>(k), Trajectory<double>::Zero(frames, 2));
  out.scores = Eigen::VectorXd::Zero(k);
  std::vector<Index> counts(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < pool.trajectories.size(); ++i) {
    const Index c = a.labels[i];
    out.trajectories[static_cast<std::size_t>(c)] += pool.trajectories[i];
    out.scores[c] += pool.scores[i];
    ++counts[static_cast<std::size_t>(c)];
  }
  for (Index c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) throw ShapeError("fuse: empty cluster");
    out.trajectories[static_cast<std::size_t>(c)] /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  const double total = out.scores.sum();
  if (total > 0.0) {
    out.scores /= total;
  } else {
    out.scores.setConstant(1.0 / static_cast<double>(k));
  }
  return out;
}

PredictionRecord ensemble_scenario(const std::vector<PredictionRecord> & members, Index k, std::uint64_t seed)
{
  const CandidatePool pool = pool_candidates(members);
  const ClusterAssignment a = kmeans_endpoints(pool.endpoints(), k, seed);
  return fuse(pool, a, members.front().scenario_id);
}

std::vector<PredictionRecord> mte(const std::vector<std::vector<PredictionRecord>> & members, Index k, std::uint64_t seed)
{
  if (members.empty()) throw ShapeError("mte needs at least one prediction set");
  std::vector<std::map<std::string, const PredictionRecord *>> index(members.size());
  for (std::size_t m = 0; m < members.size(); ++m) {
    for (const auto & p : members[m]) {
      if (!index[m].emplace(p.scenario_id, &p).second) throw SchemaError("duplicate scenario " + p.scenario_id);
    }
    if (index[m].size() != index[0].size()) throw SchemaError("prediction sets cover different scenarios");
  }
  std::vector<PredictionRecord> out;
  for (const auto & p : members.front()) {
    std::vector<PredictionRecord> group;
    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto it = index[m].find(p.scenario_id);
      if (it == index[m].end()) throw SchemaError("scenario " + p.scenario_id + " missing from prediction set " + std::to_string(m));
      group.push_back(*it->second);
    }
    out.push_back(ensemble_scenario(group, k, seed));
  }
  return out;
}

void mte_files(const std::vector<std::string> & inputs, Index k, std::uint64_t seed, const std::string & out)
{
  std::vector<std::vector<PredictionRecord>> members;
  for (const auto & path : inputs) members.push_back(load_predictions(path));
  save_predictions(mte(members, k, seed), out);
}

}  // namespace flowcast
