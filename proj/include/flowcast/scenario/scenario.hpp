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

#ifndef FLOWCAST__SCENARIO__SCENARIO_HPP_
#define FLOWCAST__SCENARIO__SCENARIO_HPP_

#include "flowcast/numerics/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace flowcast
{

inline constexpr Index kHistoryFrames = 50;
inline constexpr Index kFutureFrames = 60;
inline constexpr Index kTotalFrames = kHistoryFrames + kFutureFrames;
inline constexpr Index kOriginFrame = kHistoryFrames - 1;
inline constexpr double kFramePeriod = 0.1;
inline constexpr Index kPolylinePoints = 10;
inline constexpr Index kAgentFeatures = 6;
inline constexpr Index kMapFeatures = 6;
inline constexpr Index kAttributes = 5;
inline constexpr int kScenarioSchemaVersion = 1;

/// Wrap an angle into (-pi, pi].
double wrap_angle(double a);

struct AgentState
{
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  bool valid = false;

  Eigen::Vector2d position() const { return {x, y}; }
  bool operator==(const AgentState &) const = default;
};

struct AgentTrack
{
  std::string id;
  std::vector<AgentState> states;  // kTotalFrames entries

  bool operator==(const AgentTrack &) const = default;
};

enum class PolylineKind : std::uint8_t { kLaneCenter, kBoundary };

std::string to_string(PolylineKind kind);
PolylineKind polyline_kind_from_string(const std::string & text);

struct MapPolyline
{
  std::string id;
  PolylineKind kind = PolylineKind::kLaneCenter;
  std::vector<Eigen::Vector2d> points;

  bool operator==(const MapPolyline &) const = default;
};

struct Scenario
{
  std::string scenario_id;
  std::string target_id;
  std::vector<AgentTrack> agents;
  std::vector<MapPolyline> map;

  bool operator==(const Scenario &) const = default;

  const AgentTrack & target() const;
  AgentTrack & target();
  const AgentTrack * find_agent(const std::string & id) const;
};

/// Throws SchemaError when a scenario breaks a structural invariant.
void validate(const Scenario & s);

/**
 * Rigid frame change p' = R(-angle) (p - origin); headings shift by -angle.
 * `apply` and `invert` are exact inverses up to rounding.
 */
struct RigidTransform
{
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  double angle = 0.0;

  Eigen::Vector2d apply(const Eigen::Vector2d & p) const;
  Eigen::Vector2d invert(const Eigen::Vector2d & p) const;
  double apply_heading(double h) const { return wrap_angle(h - angle); }
  double invert_heading(double h) const { return wrap_angle(h + angle); }
};

struct NormalizedScene
{
  Scenario scene;
  RigidTransform transform;
};

/// Move every coordinate of `s` through `t` (map points, agent states, headings).
Scenario transform_scenario(const Scenario & s, const RigidTransform & t);

/// Heading used to align the target: heading at the origin frame, falling back
/// to whole-history displacement when the target barely moved, then to +X.
double target_reference_heading(const AgentTrack & target);

NormalizedScene normalize(const Scenario & s);

/// Smallest distance from the origin to any valid history position.
double agent_distance(const AgentTrack & a);
/// Smallest distance from the origin to any polyline segment.
double polyline_distance(const MapPolyline & p);

NormalizedScene filter_radius(const NormalizedScene & s, double radius = 100.0);

/// Dense model inputs for one normalized scene.
template <typename S>
struct ModelTensors
{
  Tensor<S> agents;       // [A, T_h, 6]: x, y, cos, sin, v, valid
  Tensor<S> agent_valid;  // [A, T_h]
  Tensor<S> map;          // [M, P, 6]: x, y, dx, dy, lane, boundary
  Tensor<S> map_valid;    // [M]
  std::vector<std::string> agent_ids;
  std::vector<std::string> polyline_ids;
  Index valid_agents = 0;
  Index valid_polylines = 0;
};

/// Uniform arc-length resampling to `count` points; endpoints are kept exactly.
std::vector<Eigen::Vector2d> resample_polyline(const std::vector<Eigen::Vector2d> & points, Index count);

/// Target first, then the rest by distance at the origin frame, ties by id.
std::vector<std::size_t> agent_order(const Scenario & s);

template <typename S>
ModelTensors<S> to_model_tensors(const NormalizedScene & s, Index a_max, Index m_max);

/// Target attributes over every frame as [T, 5] plus per-frame validity [T].
template <typename S>
Tensor<S> target_attributes(const Scenario & s);
template <typename S>
Tensor<S> target_validity(const Scenario & s);

/// Target future positions [T_f, 2].
Eigen::MatrixX2d target_future(const Scenario & s);

struct SyntheticConfig
{
  Index n_agents = 8;
  Index n_lanes = 8;
  double max_speed = 15.0;
  double min_target_speed = 2.0;
  double max_curvature = 0.1;
  double noise_sigma = 0.05;
  double spawn_radius = 40.0;
  double late_start_probability = 0.25;
};

std::vector<Scenario> generate_synthetic(std::uint64_t seed, Index n_scenarios, const SyntheticConfig & cfg = {});

/// Exact closed-form state on a constant-curvature arc at time t.
AgentState arc_state(const Eigen::Vector2d & p0, double heading0, double speed, double curvature, double t);

std::string to_jsonl_line(const Scenario & s);
Scenario scenario_from_json_line(const std::string & line, std::size_t line_number = 1);

void save_jsonl(const std::vector<Scenario> & corpus, const std::string & path);
std::vector<Scenario> load_jsonl(const std::string & path);

}  // namespace flowcast

#endif  // FLOWCAST__SCENARIO__SCENARIO_HPP_
