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

#include "flowcast/scenario/scenario.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace flowcast
{

AgentState arc_state(const Eigen::Vector2d & p0, double heading0, double speed, double curvature, double t)
{
  const double theta = heading0 + curvature * speed * t;
  Eigen::Vector2d p;
  if (std::abs(curvature) < 1e-12) {
    p = p0 + speed * t * Eigen::Vector2d(std::cos(heading0), std::sin(heading0));
  } else {
    p = p0 + Eigen::Vector2d(std::sin(theta) - std::sin(heading0), std::cos(heading0) - std::cos(theta)) / curvature;
  }
  return {p.x(), p.y(), wrap_angle(theta), speed, true};
}

namespace
{

struct Motion
{
  Eigen::Vector2d p0;
  double heading0 = 0.0;
  double speed = 0.0;
  double curvature = 0.0;
};

MapPolyline lane_along(const Motion & m, const std::string & id, PolylineKind kind, double offset)
{
  MapPolyline lane{id, kind, {}};
  // Lanes trace the same curve at a walking pace floor so they never collapse to a point.
  const double pace = std::max(m.speed, 3.0);
  for (int k = -2; k <= 13; ++k) {
    const AgentState st = arc_state(m.p0, m.heading0, pace, m.curvature, k);
    const Eigen::Vector2d normal(-std::sin(st.heading), std::cos(st.heading));
    const Eigen::Vector2d p = st.position() + offset * normal;
    if (lane.points.empty() || (p - lane.points.back()).norm() > 1e-6) lane.points.push_back(p);
  }
  return lane;
}

}  // namespace

std::vector<Scenario> generate_synthetic(std::uint64_t seed, Index n_scenarios, const SyntheticConfig & cfg)
{
  if (n_scenarios < 1 || cfg.n_agents < 1) throw ShapeError("generate_synthetic needs n >= 1 and at least one agent");
  std::vector<Scenario> corpus;
  corpus.reserve(static_cast<std::size_t>(n_scenarios));
  for (Index n = 0; n < n_scenarios; ++n) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(n)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::bernoulli_distribution late(cfg.late_start_probability);
    std::uniform_int_distribution<int> start_frame(1, static_cast<int>(kHistoryFrames) - 10);

    Scenario s;
    s.scenario_id = "syn_" + std::to_string(seed) + "_" + std::to_string(n);
    s.target_id = "a0";
    const Eigen::Vector2d world(500.0 * unit(rng), 500.0 * unit(rng));
    std::vector<Motion> motions;
    for (Index a = 0; a < cfg.n_agents; ++a) {
      Motion m;
      const double u = unit(rng);
      m.curvature = cfg.max_curvature * u * u * u;
      m.heading0 = angle(rng);
      if (a == 0) {
        m.speed = cfg.min_target_speed + (cfg.max_speed - cfg.min_target_speed) * 0.5 * (unit(rng) + 1.0);
        m.p0 = world;
      } else {
        m.speed = cfg.max_speed * 0.5 * (unit(rng) + 1.0);
        const Eigen::Vector2d target_now =
          arc_state(motions[0].p0, motions[0].heading0, motions[0].speed, motions[0].curvature,
                    kOriginFrame * kFramePeriod).position();
        m.p0 = target_now + cfg.spawn_radius * Eigen::Vector2d(unit(rng), unit(rng));
      }
      motions.push_back(m);

      AgentTrack track;
      track.id = "a" + std::to_string(a);
      const int first = (a > 0 && late(rng)) ? start_frame(rng) : 0;
      for (Index t = 0; t < kTotalFrames; ++t) {
        AgentState st = arc_state(m.p0, m.heading0, m.speed, m.curvature, static_cast<double>(t) * kFramePeriod);
        st.x += cfg.noise_sigma * noise(rng);
        st.y += cfg.noise_sigma * noise(rng);
        if (t < first) st = AgentState{};
        track.states.push_back(st);
      }
      s.agents.push_back(std::move(track));
    }
    for (Index l = 0; l < cfg.n_lanes; ++l) {
      const Motion & m = motions[static_cast<std::size_t>(l % cfg.n_agents)];
      const bool boundary = l >= cfg.n_agents;
      const double offset = boundary ? ((l / cfg.n_agents) % 2 == 1 ? 1.75 : -1.75) : 0.0;
      s.map.push_back(lane_along(m, "l" + std::to_string(l),
                                 boundary ? PolylineKind::kBoundary : PolylineKind::kLaneCenter, offset));
    }
    corpus.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace flowcast
