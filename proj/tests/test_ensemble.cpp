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

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace flowcast;

namespace
{

using Traj = Trajectory<double>;

Traj line_to(double x, double y, Index t = kFutureFrames)
{
  Traj out(t, 2);
  for (Index i = 0; i < t; ++i) {
    const double a = static_cast<double>(i + 1) / static_cast<double>(t);
    out.row(i) << a * x, a * y;
  }
  return out;
}

Eigen::MatrixX2d points(std::initializer_list<std::pair<double, double>> xs)
{
  Eigen::MatrixX2d out(static_cast<Index>(xs.size()), 2);
  Index i = 0;
  for (auto [x, y] : xs) out.row(i++) << x, y;
  return out;
}

// Lloyd objective straight from the definition.
double objective_oracle(const Eigen::MatrixX2d & x, const std::vector<Index> & labels, const Eigen::MatrixX2d & c)
{
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) total += (x.row(i) - c.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
  return total;
}

PredictionRecord record(const std::string & id, std::vector<Traj> modes, std::vector<double> scores)
{
  PredictionRecord p;
  p.scenario_id = id;
  p.trajectories = std::move(modes);
  p.scores = Eigen::Map<Eigen::VectorXd>(scores.data(), static_cast<Index>(scores.size()));
  return p;
}

}  // namespace

TEST(KMeans, TwoObviousClusters)
{
  const auto x = points({{0, 0}, {0.1, 0}, {10, 0}, {10.1, 0}});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = kmeans_endpoints(x, 2, seed);
    EXPECT_EQ(a.labels[0], a.labels[1]);
    EXPECT_EQ(a.labels[2], a.labels[3]);
    EXPECT_NE(a.labels[0], a.labels[2]);
    EXPECT_TRUE(a.converged);
    EXPECT_FALSE(a.degenerate);
    const Index left = a.labels[0], right = a.labels[2];
    EXPECT_NEAR(a.centroids(left, 0), 0.05, 1e-15);
    EXPECT_NEAR(a.centroids(right, 0), 10.05, 1e-12);
    EXPECT_EQ(a.centroids(left, 1), 0.0);
    // Brute force over every 2-partition confirms this is the optimum.
    double best = 1e300;
    for (int mask = 1; mask < 15; ++mask) {
      std::vector<Index> labels(4);
      Eigen::MatrixX2d c = Eigen::MatrixX2d::Zero(2, 2);
      Eigen::Vector2d count = Eigen::Vector2d::Zero();
      for (int i = 0; i < 4; ++i) {
        labels[i] = (mask >> i) & 1;
        c.row(labels[i]) += x.row(i);
        count[labels[i]] += 1.0;
      }
      c.row(0) /= count[0];
      c.row(1) /= count[1];
      best = std::min(best, objective_oracle(x, labels, c));
    }
    EXPECT_NEAR(kmeans_objective(x, a), best, 1e-12);
  }
}

TEST(KMeans, SharedEndpointIsDegenerate)
{
  const Eigen::MatrixX2d x = Eigen::MatrixX2d::Constant(12, 2, 3.5);
  const auto a = kmeans_endpoints(x, 6, 1);
  EXPECT_TRUE(a.degenerate);
  ASSERT_EQ(a.labels.size(), 12u);
  std::vector<int> sizes(6, 0);
  for (Index l : a.labels) ++sizes[static_cast<std::size_t>(l)];
  for (int s : sizes) EXPECT_GE(s, 1);
  for (Index k = 0; k < 6; ++k) {
    EXPECT_EQ(a.centroids(k, 0), 3.5);
    EXPECT_EQ(a.centroids(k, 1), 3.5);
  }
}

TEST(KMeans, OneClusterPerCandidate)
{
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 10.0);
  Eigen::MatrixX2d x(18, 2);
  for (Index i = 0; i < 18; ++i) x.row(i) << n(rng), n(rng);
  const auto a = kmeans_endpoints(x, 18, 3);
  std::vector<Index> sorted = a.labels;
  std::sort(sorted.begin(), sorted.end());
  for (Index i = 0; i < 18; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
  EXPECT_NEAR(kmeans_objective(x, a), 0.0, 1e-20);
}

TEST(KMeans, ObjectiveNeverIncreases)
{
  std::mt19937_64 rng(4);
  for (int n = 0; n < 50; ++n) {
    std::normal_distribution<double> g(0.0, 1.0 + static_cast<double>(n % 7));
    const Index count = 6 + static_cast<Index>(rng() % 30);
    Eigen::MatrixX2d x(count, 2);
    for (Index i = 0; i < count; ++i) x.row(i) << g(rng) + (i % 3) * 4.0, g(rng);
    const Index k = 1 + static_cast<Index>(rng() % 6);
    const auto a = kmeans_endpoints(x, k, static_cast<std::uint64_t>(n));
    ASSERT_GE(a.objective.size(), 1u);
    for (std::size_t i = 1; i < a.objective.size(); ++i) EXPECT_LE(a.objective[i], a.objective[i - 1] + 1e-12);
    EXPECT_NEAR(a.objective.back(), objective_oracle(x, a.labels, a.centroids), 1e-9);
  }
}

TEST(KMeans, DeterministicPerSeed)
{
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 5.0);
  Eigen::MatrixX2d x(18, 2);
  for (Index i = 0; i < 18; ++i) x.row(i) << n(rng), n(rng);
  const auto a = kmeans_endpoints(x, 6, 11), b = kmeans_endpoints(x, 6, 11);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.centroids, b.centroids);
}

TEST(KMeans, RejectsTooFewCandidates)
{
  EXPECT_THROW(kmeans_endpoints(points({{0, 0}}), 2, 0), ShapeError);
}

TEST(Fuse, IdenticalMembersReproduceTheMember)
{
  std::vector<Traj> modes;
  for (int k = 0; k < 6; ++k) modes.push_back(line_to(10.0 * k, 3.0 * k));
  const auto member = record("s", modes, {0.3, 0.2, 0.15, 0.15, 0.1, 0.1});
  const auto out = ensemble_scenario({member, member, member}, 6, 7);
  ASSERT_EQ(out.trajectories.size(), 6u);
  for (int k = 0; k < 6; ++k) {
    // Match each output mode to the member mode with the same endpoint.
    int match = -1;
    for (int j = 0; j < 6; ++j) {
      if ((out.trajectories[k].row(kFutureFrames - 1) - modes[j].row(kFutureFrames - 1)).norm() < 1e-12) match = j;
    }
    ASSERT_GE(match, 0);
    EXPECT_LE((out.trajectories[k] - modes[match]).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(out.scores[k], member.scores[match], 1e-12);
  }
}

TEST(Fuse, ScoresSumThenNormalize)
{
  CandidatePool pool;
  pool.trajectories = {line_to(0, 0), line_to(0, 0), line_to(50, 0)};
  pool.scores = {1.0, 1.0, 1.0};
  ClusterAssignment a;
  a.labels = {0, 0, 1};
  a.centroids = points({{0, 0}, {50, 0}});
  const auto out = fuse(pool, a, "s");
  EXPECT_NEAR(out.scores[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(out.scores[1], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(out.scores.sum(), 1.0, 1e-12);
}

TEST(Fuse, PerFrameMean)
{
  Traj a = Traj::Zero(kFutureFrames, 2), b = Traj::Zero(kFutureFrames, 2);
  for (Index t = 0; t < kFutureFrames; ++t) {
    a(t, 0) = b(t, 0) = static_cast<double>(t);
    b(t, 1) = 2.0;
  }
  CandidatePool pool;
  pool.trajectories = {a, b};
  pool.scores = {0.4, 0.1};
  ClusterAssignment as;
  as.labels = {0, 0};
  as.centroids = points({{59, 1}});
  const auto out = fuse(pool, as, "s");
  for (Index t = 0; t < kFutureFrames; ++t) {
    EXPECT_EQ(out.trajectories[0](t, 1), 1.0);
    EXPECT_EQ(out.trajectories[0](t, 0), static_cast<double>(t));
  }
  EXPECT_EQ(out.scores[0], 1.0);
}

TEST(Fuse, PermutationInvariantWithinCluster)
{
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  CandidatePool pool;
  for (int i = 0; i < 4; ++i) {
    pool.trajectories.push_back(line_to(20 + n(rng), n(rng)));
    pool.scores.push_back(0.1 + std::abs(n(rng)));
  }
  ClusterAssignment as;
  as.labels = {0, 0, 0, 0};
  as.centroids = points({{20, 0}});
  const auto forward = fuse(pool, as, "s");
  std::reverse(pool.trajectories.begin(), pool.trajectories.end());
  std::reverse(pool.scores.begin(), pool.scores.end());
  const auto backward = fuse(pool, as, "s");
  EXPECT_LE((forward.trajectories[0] - backward.trajectories[0]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fuse, LargerClustersScoreHigherWithEqualMembers)
{
  CandidatePool pool;
  pool.trajectories = {line_to(0, 0), line_to(0.1, 0), line_to(0.2, 0), line_to(30, 0)};
  pool.scores = {0.25, 0.25, 0.25, 0.25};
  ClusterAssignment as;
  as.labels = {0, 0, 0, 1};
  as.centroids = points({{0.1, 0}, {30, 0}});
  const auto out = fuse(pool, as, "s");
  EXPECT_GT(out.scores[0], out.scores[1]);
  EXPECT_NEAR(out.scores[0], 0.75, 1e-15);
}

TEST(Mte, ConstructedThreeMemberFixture)
{
  // Three members agree on two well separated futures with different confidences.
  auto member = [](double jitter, double p) {
    return record("s", {line_to(40 + jitter, 0), line_to(0, 40 - jitter)}, {p, 1.0 - p});
  };
  const auto out = mte({{member(0.0, 0.7)}, {member(0.3, 0.6)}, {member(-0.3, 0.5)}}, 2, 9);
  ASSERT_EQ(out.size(), 1u);
  const auto & r = out[0];
  const Index straight = r.trajectories[0](kFutureFrames - 1, 0) > 20.0 ? 0 : 1;
  EXPECT_NEAR(r.trajectories[straight](kFutureFrames - 1, 0), 40.0, 1e-12);
  EXPECT_NEAR(r.trajectories[1 - straight](kFutureFrames - 1, 1), 40.0, 1e-12);
  EXPECT_NEAR(r.scores[straight], 0.6, 1e-12);
  EXPECT_NEAR(r.scores[1 - straight], 0.4, 1e-12);
}

TEST(Mte, SingleMemberWithDistinctEndpointsIsIdentity)
{
  std::vector<Traj> modes;
  for (int k = 0; k < 6; ++k) modes.push_back(line_to(8.0 * k, -5.0 * k + 1.0));
  const auto member = record("s", modes, {0.05, 0.1, 0.15, 0.2, 0.25, 0.25});
  const auto out = ensemble_scenario({member}, 6, 2);
  for (int k = 0; k < 6; ++k) {
    bool found = false;
    for (int j = 0; j < 6; ++j) {
      found |= (out.trajectories[k] - modes[j]).cwiseAbs().maxCoeff() < 1e-12 &&
               std::abs(out.scores[k] - member.scores[j]) < 1e-12;
    }
    EXPECT_TRUE(found);
  }
}

TEST(Mte, RejectsMismatchedMembers)
{
  const auto a = record("a", {line_to(1, 0), line_to(0, 1)}, {0.5, 0.5});
  const auto b = record("b", {line_to(1, 0), line_to(0, 1)}, {0.5, 0.5});
  const auto three = record("a", {line_to(1, 0), line_to(0, 1), line_to(1, 1)}, {0.2, 0.3, 0.5});
  EXPECT_THROW(mte({{a}, {b}}, 2, 0), SchemaError);
  EXPECT_THROW(mte({{a}, {three}}, 2, 0), SchemaError);
  EXPECT_THROW(mte({{a}, {}}, 2, 0), SchemaError);
}

TEST(Mte, FileRoundTripValidates)
{
  const auto dir = std::filesystem::temp_directory_path() / "flowcast_test_mte";
  std::filesystem::create_directories(dir);
  std::vector<std::string> inputs;
  for (int m = 0; m < 2; ++m) {
    std::vector<PredictionRecord> recs;
    for (int s = 0; s < 3; ++s) {
      std::vector<Traj> modes;
      for (int k = 0; k < 6; ++k) modes.push_back(line_to(5.0 * k + m, 2.0 * s));
      recs.push_back(record("s" + std::to_string(s), modes, {0.1, 0.1, 0.2, 0.2, 0.2, 0.2}));
    }
    inputs.push_back((dir / ("m" + std::to_string(m) + ".jsonl")).string());
    save_predictions(recs, inputs.back());
  }
  const std::string out = (dir / "out.jsonl").string();
  mte_files(inputs, 6, 1, out);
  const auto loaded = load_predictions(out);
  ASSERT_EQ(loaded.size(), 3u);
  for (const auto & r : loaded) {
    EXPECT_NO_THROW(r.check());
    EXPECT_EQ(r.trajectories.size(), 6u);
  }
  std::filesystem::remove_all(dir);
}
