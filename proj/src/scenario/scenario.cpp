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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace flowcast
{

double wrap_angle(double a)
{
  const double r = std::remainder(a, 2.0 * std::numbers::pi);
  return r <= -std::numbers::pi ? r + 2.0 * std::numbers::pi : r;
}

std::string to_string(PolylineKind kind)
{
  return kind == PolylineKind::kLaneCenter ? "lane" : "boundary";
}

PolylineKind polyline_kind_from_string(const std::string & text)
{
  if (text == "lane") return PolylineKind::kLaneCenter;
  if (text == "boundary") return PolylineKind::kBoundary;
  throw SchemaError("unknown polyline kind '" + text + "'");
}

const AgentTrack * Scenario::find_agent(const std::string & id) const
{
  for (const auto & a : agents) {
    if (a.id == id) return &a;
  }
  return nullptr;
}

const AgentTrack & Scenario::target() const
{
  const AgentTrack * t = find_agent(target_id);
  if (t == nullptr) throw SchemaError("scenario " + scenario_id + ": target " + target_id + " missing");
  return *t;
}

AgentTrack & Scenario::target()
{
  return const_cast<AgentTrack &>(static_cast<const Scenario &>(*this).target());
}

void validate(const Scenario & s)
{
  const AgentTrack & target = s.target();
  for (const auto & a : s.agents) {
    if (static_cast<Index>(a.states.size()) != kTotalFrames) {
      throw SchemaError(
        "scenario " + s.scenario_id + ": agent " + a.id + " has " + std::to_string(a.states.size()) +
        " frames, expected " + std::to_string(kTotalFrames));
    }
    for (const auto & st : a.states) {
      if (st.valid && (!std::isfinite(st.x) || !std::isfinite(st.y) || !std::isfinite(st.heading) || st.speed < 0.0)) {
        throw SchemaError("scenario " + s.scenario_id + ": agent " + a.id + " has an invalid state");
      }
    }
  }
  for (Index t = 0; t < kHistoryFrames; ++t) {
    if (!target.states[static_cast<std::size_t>(t)].valid) {
      throw SchemaError("scenario " + s.scenario_id + ": target history frame " + std::to_string(t) + " invalid");
    }
  }
  for (const auto & p : s.map) {
    if (p.points.size() < 2) {
      throw SchemaError("scenario " + s.scenario_id + ": polyline " + p.id + " has fewer than 2 points");
    }
  }
}

Eigen::Vector2d RigidTransform::apply(const Eigen::Vector2d & p) const
{
  return Eigen::Rotation2Dd(-angle) * (p - origin);
}

Eigen::Vector2d RigidTransform::invert(const Eigen::Vector2d & p) const
{
  return Eigen::Rotation2Dd(angle) * p + origin;
}

Scenario transform_scenario(const Scenario & s, const RigidTransform & t)
{
  Scenario out = s;
  for (auto & a : out.agents) {
    // Invalid frames carry no geometry and are left untouched.
    for (auto & st : a.states) {
      if (!st.valid) continue;
      const Eigen::Vector2d p = t.apply(st.position());
      st.x = p.x();
      st.y = p.y();
      st.heading = t.apply_heading(st.heading);
    }
  }
  for (auto & poly : out.map) {
    for (auto & p : poly.points) p = t.apply(p);
  }
  return out;
}

double target_reference_heading(const AgentTrack & target)
{
  const auto & st = target.states;
  const AgentState & now = st[static_cast<std::size_t>(kOriginFrame)];
  const AgentState & recent = st[static_cast<std::size_t>(kOriginFrame - 10)];
  if ((now.position() - recent.position()).norm() >= 0.1) return now.heading;
  const Eigen::Vector2d whole = now.position() - st.front().position();
  if (whole.norm() >= 0.1) return std::atan2(whole.y(), whole.x());
  return 0.0;
}

NormalizedScene normalize(const Scenario & s)
{
  const AgentTrack & target = s.target();
  const AgentState & now = target.states[static_cast<std::size_t>(kOriginFrame)];
  if (!now.valid) throw SchemaError("scenario " + s.scenario_id + ": target invalid at origin frame");
  RigidTransform t;
  t.origin = now.position();
  t.angle = target_reference_heading(target);
  return {transform_scenario(s, t), t};
}

double agent_distance(const AgentTrack & a)
{
  double best = std::numeric_limits<double>::infinity();
  for (Index f = 0; f < kHistoryFrames; ++f) {
    const AgentState & st = a.states[static_cast<std::size_t>(f)];
    if (st.valid) best = std::min(best, st.position().norm());
  }
  return best;
}

double polyline_distance(const MapPolyline & p)
{
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.points.size(); ++i) {
    best = std::min(best, p.points[i].norm());
    if (i + 1 == p.points.size()) break;
    const Eigen::Vector2d a = p.points[i], d = p.points[i + 1] - a;
    const double len2 = d.squaredNorm();
    if (len2 == 0.0) continue;
    const double u = std::clamp(-a.dot(d) / len2, 0.0, 1.0);
    best = std::min(best, (a + u * d).norm());
  }
  return best;
}

NormalizedScene filter_radius(const NormalizedScene & s, double radius)
{
  NormalizedScene out;
  out.transform = s.transform;
  out.scene.scenario_id = s.scene.scenario_id;
  out.scene.target_id = s.scene.target_id;
  for (const auto & a : s.scene.agents) {
    if (a.id == s.scene.target_id || agent_distance(a) <= radius) out.scene.agents.push_back(a);
  }
  for (const auto & p : s.scene.map) {
    if (polyline_distance(p) <= radius) out.scene.map.push_back(p);
  }
  return out;
}

std::vector<Eigen::Vector2d> resample_polyline(const std::vector<Eigen::Vector2d> & points, Index count)
{
  if (points.empty() || count < 2) throw ShapeError("resample_polyline needs points and count >= 2");
  std::vector<double> cum(points.size(), 0.0);
  for (std::size_t i = 1; i < points.size(); ++i) cum[i] = cum[i - 1] + (points[i] - points[i - 1]).norm();
  const double total = cum.back();
  std::vector<Eigen::Vector2d> out(static_cast<std::size_t>(count));
  std::size_t seg = 0;
  for (Index k = 0; k < count; ++k) {
    const double target = total * static_cast<double>(k) / static_cast<double>(count - 1);
    while (seg + 2 < points.size() && cum[seg + 1] < target) ++seg;
    const double len = seg + 1 < points.size() ? cum[seg + 1] - cum[seg] : 0.0;
    const double u = len > 0.0 ? std::clamp((target - cum[seg]) / len, 0.0, 1.0) : 0.0;
    out[static_cast<std::size_t>(k)] =
      seg + 1 < points.size() ? Eigen::Vector2d(points[seg] + u * (points[seg + 1] - points[seg])) : points[seg];
  }
  out.front() = points.front();
  out.back() = points.back();
  return out;
}

namespace
{

/// Position used for ranking: origin frame when valid, else the latest valid history frame.
double ranking_distance(const AgentTrack & a)
{
  for (Index f = kOriginFrame; f >= 0; --f) {
    const AgentState & st = a.states[static_cast<std::size_t>(f)];
    if (st.valid) return st.position().norm();
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace

std::vector<std::size_t> agent_order(const Scenario & s)
{
  std::vector<std::size_t> others;
  std::size_t target = s.agents.size();
  for (std::size_t i = 0; i < s.agents.size(); ++i) {
    if (s.agents[i].id == s.target_id) {
      target = i;
    } else if (std::isfinite(ranking_distance(s.agents[i]))) {
      others.push_back(i);
    }
  }
  if (target == s.agents.size()) throw SchemaError("scenario " + s.scenario_id + ": target missing");
  std::vector<double> dist(s.agents.size());
  for (std::size_t i : others) dist[i] = ranking_distance(s.agents[i]);
  std::sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return s.agents[a].id < s.agents[b].id;
  });
  others.insert(others.begin(), target);
  return others;
}

template <typename S>
ModelTensors<S> to_model_tensors(const NormalizedScene & ns, Index a_max, Index m_max)
{
  if (a_max < 1) throw ShapeError("agent capacity must be at least 1");
  if (m_max < 1) throw ShapeError("map capacity must be at least 1");
  const Scenario & s = ns.scene;
  ModelTensors<S> out;
  out.agents = Tensor<S>({a_max, kHistoryFrames, kAgentFeatures});
  out.agent_valid = Tensor<S>({a_max, kHistoryFrames});
  out.map = Tensor<S>({m_max, kPolylinePoints, kMapFeatures});
  out.map_valid = Tensor<S>({m_max});

  const std::vector<std::size_t> order = agent_order(s);
  out.valid_agents = std::min<Index>(a_max, static_cast<Index>(order.size()));
  for (Index a = 0; a < out.valid_agents; ++a) {
    const AgentTrack & track = s.agents[order[static_cast<std::size_t>(a)]];
    out.agent_ids.push_back(track.id);
    for (Index t = 0; t < kHistoryFrames; ++t) {
      const AgentState & st = track.states[static_cast<std::size_t>(t)];
      if (!st.valid) continue;
      S * f = out.agents.data() + (a * kHistoryFrames + t) * kAgentFeatures;
      f[0] = static_cast<S>(st.x);
      f[1] = static_cast<S>(st.y);
      f[2] = static_cast<S>(std::cos(st.heading));
      f[3] = static_cast<S>(std::sin(st.heading));
      f[4] = static_cast<S>(st.speed);
      f[5] = S(1);
      out.agent_valid[a * kHistoryFrames + t] = S(1);
    }
  }

  std::vector<std::size_t> polys(s.map.size());
  std::vector<double> dist(s.map.size());
  for (std::size_t i = 0; i < s.map.size(); ++i) {
    polys[i] = i;
    dist[i] = polyline_distance(s.map[i]);
  }
  std::sort(polys.begin(), polys.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return s.map[a].id < s.map[b].id;
  });
  out.valid_polylines = std::min<Index>(m_max, static_cast<Index>(polys.size()));
  for (Index m = 0; m < out.valid_polylines; ++m) {
    const MapPolyline & poly = s.map[polys[static_cast<std::size_t>(m)]];
    out.polyline_ids.push_back(poly.id);
    const auto pts = resample_polyline(poly.points, kPolylinePoints);
    for (Index k = 0; k < kPolylinePoints; ++k) {
      const std::size_t i = static_cast<std::size_t>(k);
      const Eigen::Vector2d d = k + 1 < kPolylinePoints ? Eigen::Vector2d(pts[i + 1] - pts[i])
                                                        : Eigen::Vector2d(pts[i] - pts[i - 1]);
      S * f = out.map.data() + (m * kPolylinePoints + k) * kMapFeatures;
      f[0] = static_cast<S>(pts[i].x());
      f[1] = static_cast<S>(pts[i].y());
      f[2] = static_cast<S>(d.x());
      f[3] = static_cast<S>(d.y());
      f[4] = poly.kind == PolylineKind::kLaneCenter ? S(1) : S(0);
      f[5] = poly.kind == PolylineKind::kBoundary ? S(1) : S(0);
    }
    out.map_valid[m] = S(1);
  }
  return out;
}

template <typename S>
Tensor<S> target_attributes(const Scenario & s)
{
  const AgentTrack & target = s.target();
  Tensor<S> out({kTotalFrames, kAttributes});
  for (Index t = 0; t < kTotalFrames; ++t) {
    const AgentState & st = target.states[static_cast<std::size_t>(t)];
    if (!st.valid) continue;
    S * f = out.data() + t * kAttributes;
    f[0] = static_cast<S>(st.x);
    f[1] = static_cast<S>(st.y);
    f[2] = static_cast<S>(std::cos(st.heading));
    f[3] = static_cast<S>(std::sin(st.heading));
    f[4] = static_cast<S>(st.speed);
  }
  return out;
}

template <typename S>
Tensor<S> target_validity(const Scenario & s)
{
  const AgentTrack & target = s.target();
  Tensor<S> out({kTotalFrames});
  for (Index t = 0; t < kTotalFrames; ++t) {
    out[t] = target.states[static_cast<std::size_t>(t)].valid ? S(1) : S(0);
  }
  return out;
}

Eigen::MatrixX2d target_future(const Scenario & s)
{
  const AgentTrack & target = s.target();
  Eigen::MatrixX2d out(kFutureFrames, 2);
  for (Index t = 0; t < kFutureFrames; ++t) {
    out.row(t) = target.states[static_cast<std::size_t>(kHistoryFrames + t)].position().transpose();
  }
  return out;
}

#define FLOWCAST_INSTANTIATE_SCENARIO(S)                                                 \
  template ModelTensors<S> to_model_tensors<S>(const NormalizedScene &, Index, Index);   \
  template Tensor<S> target_attributes<S>(const Scenario &);                             \
  template Tensor<S> target_validity<S>(const Scenario &);

FLOWCAST_INSTANTIATE_SCENARIO(float)
FLOWCAST_INSTANTIATE_SCENARIO(double)
FLOWCAST_INSTANTIATE_SCENARIO(long double)

#undef FLOWCAST_INSTANTIATE_SCENARIO

}  // namespace flowcast
