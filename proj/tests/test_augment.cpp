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

#include "flowcast/augment/augment.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace flowcast;

namespace
{

Scenario point_scene(double x, double y, double heading, double speed)
{
  Scenario s;
  s.scenario_id = "p";
  s.target_id = "t";
  AgentTrack a;
  a.id = "t";
  a.states.assign(static_cast<std::size_t>(kTotalFrames), AgentState{x, y, heading, speed, true});
  s.agents.push_back(a);
  s.map.push_back({"l", PolylineKind::kLaneCenter, {{x, y}, {x + 1.0, y}}});
  return s;
}

const AgentState & first(const Scenario & s) { return s.agents[0].states[0]; }

double max_diff(const Scenario & a, const Scenario & b)
{
  double worst = 0.0;
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    for (std::size_t t = 0; t < a.agents[i].states.size(); ++t) {
      const auto & x = a.agents[i].states[t];
      const auto & y = b.agents[i].states[t];
      if (!x.valid) continue;
      worst = std::max({worst, std::abs(x.x - y.x), std::abs(x.y - y.y), std::abs(wrap_angle(x.heading - y.heading)),
                        std::abs(x.speed - y.speed)});
    }
  }
  for (std::size_t i = 0; i < a.map.size(); ++i) {
    for (std::size_t j = 0; j < a.map[i].points.size(); ++j) {
      worst = std::max(worst, (a.map[i].points[j] - b.map[i].points[j]).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

// Signed curvature of a sampled path from three consecutive points.
double signed_curvature(const Eigen::Vector2d & a, const Eigen::Vector2d & b, const Eigen::Vector2d & c)
{
  const Eigen::Vector2d u = b - a, v = c - b;
  const double cross = u.x() * v.y() - u.y() * v.x();
  return 2.0 * cross / (u.norm() * v.norm() * (c - a).norm());
}

}  // namespace

TEST(Translate, Definition)
{
  const auto s = point_scene(3.0, 4.0, 0.7, 5.0);
  EXPECT_EQ(translate(s, {0.0, 0.0}), s);
  const auto t = translate(s, {1.0, 2.0});
  EXPECT_EQ(first(t).x, 4.0);
  EXPECT_EQ(first(t).y, 6.0);
  EXPECT_EQ(first(t).heading, 0.7);
  EXPECT_EQ(t.map[0].points[0], Eigen::Vector2d(4.0, 6.0));
}

TEST(Translate, RoundTripIsBitExact)
{
  // Exact when coordinates and offsets share a dyadic grid; arbitrary doubles round to within an ulp.
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> q(-3 * 1024, 3 * 1024);
  auto snap = [](double v) { return std::ldexp(std::round(std::ldexp(v, 20)), -20); };
  for (auto s : generate_synthetic(2, 100)) {
    for (auto & a : s.agents) {
      for (auto & st : a.states) st.x = snap(st.x), st.y = snap(st.y);
    }
    for (auto & pl : s.map) {
      for (auto & p : pl.points) p = Eigen::Vector2d(snap(p.x()), snap(p.y()));
    }
    const Eigen::Vector2d d(q(rng) / 1024.0, q(rng) / 1024.0);
    EXPECT_EQ(translate(translate(s, d), -d), s);
  }
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (const auto & s : generate_synthetic(3, 20)) {
    const Eigen::Vector2d d(u(rng), u(rng));
    EXPECT_LE(max_diff(translate(translate(s, d), -d), s), 1e-12);
  }
}

TEST(Rotate, QuarterTurnAndComposition)
{
  const auto s = point_scene(1.0, 0.0, 0.0, 2.0);
  EXPECT_EQ(rotate(s, 0.0), s);
  const auto r = rotate(s, std::numbers::pi / 2);
  EXPECT_NEAR(first(r).x, 0.0, 1e-15);
  EXPECT_NEAR(first(r).y, 1.0, 1e-15);
  EXPECT_NEAR(first(r).heading, std::numbers::pi / 2, 1e-15);
  for (const auto & sc : generate_synthetic(3, 10)) {
    EXPECT_LE(max_diff(rotate(rotate(sc, 0.3), -1.1), rotate(sc, -0.8)), 1e-12);
  }
}

TEST(Flip, DefinitionAndInvolution)
{
  const auto f = flip_y(point_scene(1.0, 2.0, 0.0, 3.0));
  EXPECT_EQ(first(f).x, -1.0);
  EXPECT_EQ(first(f).y, 2.0);
  EXPECT_NEAR(std::abs(first(f).heading), std::numbers::pi, 1e-15);
  for (const auto & s : generate_synthetic(4, 10)) EXPECT_LE(max_diff(flip_y(flip_y(s)), s), 1e-12);
}

TEST(Flip, CurvatureSignNegates)
{
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> k(0.01, 0.1), v(3.0, 15.0), h(-3.0, 3.0);
  for (int n = 0; n < 20; ++n) {
    const double kappa = k(rng), speed = v(rng), h0 = h(rng);
    Scenario s;
    s.scenario_id = "arc";
    s.target_id = "t";
    AgentTrack a;
    a.id = "t";
    for (Index t = 0; t < kTotalFrames; ++t) a.states.push_back(arc_state({0.0, 0.0}, h0, speed, kappa, t * kFramePeriod));
    s.agents.push_back(a);
    const auto f = flip_y(s);
    for (Index t = 1; t + 1 < kTotalFrames; t += 20) {
      const auto & o = s.agents[0].states;
      const auto & m = f.agents[0].states;
      const double before = signed_curvature(o[t - 1].position(), o[t].position(), o[t + 1].position());
      const double after = signed_curvature(m[t - 1].position(), m[t].position(), m[t + 1].position());
      EXPECT_GT(before, 0.0);
      EXPECT_NEAR(after, -before, 1e-6);
    }
  }
}

TEST(Resize, DefinitionAndRoundTrip)
{
  const auto s = point_scene(10.0, 0.0, 0.4, 5.0);
  EXPECT_EQ(resize(s, 1.0), s);
  const auto r = resize(s, 1.2);
  EXPECT_NEAR(first(r).x, 12.0, 1e-15);
  EXPECT_NEAR(first(r).speed, 6.0, 1e-15);
  EXPECT_EQ(first(r).heading, 0.4);
  for (const auto & sc : generate_synthetic(6, 10)) EXPECT_LE(max_diff(resize(resize(sc, 1.15), 1.0 / 1.15), sc), 1e-12);
}

TEST(Geometric, DistancesScaleByFactor)
{
  const auto s = generate_synthetic(7, 1)[0];
  const auto & a = s.agents[0].states[10];
  const auto & b = s.agents[1].states[30];
  const double d = (a.position() - b.position()).norm();
  auto dist = [](const Scenario & x) {
    return (x.agents[0].states[10].position() - x.agents[1].states[30].position()).norm();
  };
  EXPECT_NEAR(dist(translate(s, {2.0, -1.0})), d, 1e-9);
  EXPECT_NEAR(dist(rotate(s, 0.4)), d, 1e-9);
  EXPECT_NEAR(dist(flip_y(s)), d, 1e-9);
  EXPECT_NEAR(dist(resize(s, 0.85)), 0.85 * d, 1e-9);
}

TEST(Geometric, DisplacementsTransformConsistently)
{
  // Frame-to-frame displacement vectors rotate with the scene, futures included.
  const auto s = generate_synthetic(8, 1)[0];
  const double theta = 0.37;
  const auto r = rotate(s, theta);
  const Eigen::Rotation2Dd rot(theta);
  const auto & o = s.target().states;
  const auto & m = r.target().states;
  for (Index t = 1; t < kTotalFrames; ++t) {
    const Eigen::Vector2d want = rot * (o[t].position() - o[t - 1].position());
    EXPECT_LE((m[t].position() - m[t - 1].position() - want).norm(), 1e-9);
  }
}

TEST(AgentSwap, IdentityInvolutionAndCentering)
{
  SyntheticConfig cfg;
  cfg.late_start_probability = 0.0;
  const auto s = generate_synthetic(9, 1, cfg)[0];
  EXPECT_EQ(agent_swap(s, s.target_id), s);
  const auto swapped = agent_swap(s, "a2");
  EXPECT_EQ(swapped.target_id, "a2");
  EXPECT_EQ(agent_swap(swapped, s.target_id), s);
  const auto ns = normalize(swapped);
  EXPECT_LE(ns.scene.target().states[kOriginFrame].position().norm(), 1e-9);
}

TEST(AgentSwap, RejectsIneligible)
{
  auto s = generate_synthetic(10, 1)[0];
  s.agents[1].states[3].valid = false;
  EXPECT_FALSE(swap_eligible(s.agents[1]));
  EXPECT_THROW(agent_swap(s, s.agents[1].id), ShapeError);
  EXPECT_THROW(agent_swap(s, "missing"), ShapeError);
}

TEST(Sampling, DeterministicAndReplayable)
{
  const auto s = generate_synthetic(11, 1)[0];
  std::mt19937_64 a(3), b(3);
  for (int n = 0; n < 20; ++n) {
    const auto x = sample_augmentation(AugmentConfig{}, a, s);
    const auto y = sample_augmentation(AugmentConfig{}, b, s);
    EXPECT_EQ(x, y);
    EXPECT_EQ(AugmentationDraw::from_json(x.to_json()), x);
  }
}

TEST(Sampling, RangesRespected)
{
  const auto s = generate_synthetic(12, 1)[0];
  std::mt19937_64 rng(4);
  const AugmentConfig cfg;
  int flips = 0, swaps = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto d = sample_augmentation(cfg, rng, s);
    ASSERT_LE(std::abs(d.translation.x()), 3.0);
    ASSERT_LE(std::abs(d.translation.y()), 3.0);
    ASSERT_LE(std::abs(d.rotation), std::numbers::pi / 6);
    ASSERT_GE(d.scale, 0.8);
    ASSERT_LE(d.scale, 1.2);
    flips += d.flip;
    if (d.swap_target) {
      ++swaps;
      ASSERT_NE(*d.swap_target, s.target_id);
      ASSERT_TRUE(swap_eligible(*s.find_agent(*d.swap_target)));
    }
  }
  EXPECT_NEAR(flips / static_cast<double>(n), 0.5, 0.01);
  EXPECT_GT(swaps, 0);
}

TEST(Sampling, ZeroWidthRangesGiveIdentity)
{
  const auto s = generate_synthetic(13, 1)[0];
  std::mt19937_64 rng(5);
  const auto d = sample_augmentation(AugmentConfig::identity(), rng, s);
  EXPECT_EQ(d, AugmentationDraw{});
  const auto ns = apply_augmentation(s, d);
  EXPECT_EQ(ns.scene, normalize(s).scene);
}
