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

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <numbers>

namespace flowcast
{

AugmentConfig AugmentConfig::identity()
{
  AugmentConfig c;
  c.p_flip = 0.0;
  c.translation_range = 0.0;
  c.rotation_range = 0.0;
  c.resize_min = 1.0;
  c.resize_max = 1.0;
  c.p_agent_swap = 0.0;
  return c;
}

namespace
{

template <typename PointFn, typename StateFn>
Scenario map_geometry(const Scenario & s, PointFn point, StateFn state)
{
  Scenario out = s;
  for (auto & a : out.agents) {
    for (auto & st : a.states) {
      if (st.valid) state(st);
    }
  }
  for (auto & poly : out.map) {
    for (auto & p : poly.points) p = point(p);
  }
  return out;
}

}  // namespace

Scenario translate(const Scenario & s, const Eigen::Vector2d & d)
{
  return map_geometry(
    s, [&](const Eigen::Vector2d & p) -> Eigen::Vector2d { return p + d; },
    [&](AgentState & st) {
      st.x += d.x();
      st.y += d.y();
    });
}

Scenario rotate(const Scenario & s, double theta)
{
  const Eigen::Rotation2Dd r(theta);
  return map_geometry(
    s, [&](const Eigen::Vector2d & p) -> Eigen::Vector2d { return r * p; },
    [&](AgentState & st) {
      const Eigen::Vector2d p = r * st.position();
      st.x = p.x();
      st.y = p.y();
      st.heading = wrap_angle(st.heading + theta);
    });
}

Scenario flip_y(const Scenario & s)
{
  return map_geometry(
    s, [](const Eigen::Vector2d & p) -> Eigen::Vector2d { return {-p.x(), p.y()}; },
    [](AgentState & st) {
      st.x = -st.x;
      st.heading = wrap_angle(std::numbers::pi - st.heading);
    });
}

Scenario resize(const Scenario & s, double c)
{
  return map_geometry(
    s, [&](const Eigen::Vector2d & p) -> Eigen::Vector2d { return c * p; },
    [&](AgentState & st) {
      st.x *= c;
      st.y *= c;
      st.speed *= c;
    });
}

bool swap_eligible(const AgentTrack & a)
{
  for (Index t = 0; t < kHistoryFrames; ++t) {
    if (!a.states[static_cast<std::size_t>(t)].valid) return false;
  }
  return true;
}

Scenario agent_swap(const Scenario & s, const std::string & new_target)
{
  const AgentTrack * a = s.find_agent(new_target);
  if (a == nullptr) throw ShapeError("agent_swap: no agent " + new_target);
  if (!swap_eligible(*a)) throw ShapeError("agent_swap: agent " + new_target + " lacks a full history");
  Scenario out = s;
  out.target_id = new_target;
  return out;
}

std::string AugmentationDraw::to_json() const
{
  return fmt::format(
    "{{\"translation\":[{:.17g},{:.17g}],\"rotation\":{:.17g},\"flip\":{},\"scale\":{:.17g},\"swap\":{}}}",
    translation.x(), translation.y(), rotation, flip, scale,
    swap_target ? nlohmann::json(*swap_target).dump() : std::string("null"));
}

AugmentationDraw AugmentationDraw::from_json(const std::string & text)
{
  try {
    const auto j = nlohmann::json::parse(text);
    AugmentationDraw d;
    d.translation = {j.at("translation")[0].get<double>(), j.at("translation")[1].get<double>()};
    d.rotation = j.at("rotation").get<double>();
    d.flip = j.at("flip").get<bool>();
    d.scale = j.at("scale").get<double>();
    if (!j.at("swap").is_null()) d.swap_target = j.at("swap").get<std::string>();
    return d;
  } catch (const nlohmann::json::exception & e) {
    throw SchemaError(std::string("augmentation record: ") + e.what());
  }
}

AugmentationDraw sample_augmentation(const AugmentConfig & cfg, std::mt19937_64 & rng, const Scenario & s)
{
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Fixed draw order keeps records replayable regardless of which options are active.
  AugmentationDraw d;
  const double tx = unit(rng), ty = unit(rng), rot = unit(rng), flip = unit(rng), size = unit(rng);
  const double swap = unit(rng), pick = unit(rng);
  d.translation = {cfg.translation_range * (2.0 * tx - 1.0), cfg.translation_range * (2.0 * ty - 1.0)};
  d.rotation = cfg.rotation_range * (2.0 * rot - 1.0);
  d.flip = flip < cfg.p_flip;
  d.scale = cfg.resize_min + (cfg.resize_max - cfg.resize_min) * size;
  if (swap < cfg.p_agent_swap) {
    std::vector<std::string> eligible;
    for (const auto & a : s.agents) {
      if (a.id != s.target_id && swap_eligible(a)) eligible.push_back(a.id);
    }
    if (!eligible.empty()) {
      const auto i = std::min(eligible.size() - 1, static_cast<std::size_t>(pick * static_cast<double>(eligible.size())));
      d.swap_target = eligible[i];
    }
  }
  return d;
}

NormalizedScene apply_augmentation(const Scenario & s, const AugmentationDraw & draw)
{
  NormalizedScene ns = normalize(draw.swap_target ? agent_swap(s, *draw.swap_target) : s);
  Scenario & g = ns.scene;
  if (draw.flip) g = flip_y(g);
  if (draw.scale != 1.0) g = resize(g, draw.scale);
  if (draw.rotation != 0.0) g = rotate(g, draw.rotation);
  if (draw.translation != Eigen::Vector2d::Zero()) g = translate(g, draw.translation);
  return ns;
}

}  // namespace flowcast
