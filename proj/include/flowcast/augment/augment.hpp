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

#ifndef FLOWCAST__AUGMENT__AUGMENT_HPP_
#define FLOWCAST__AUGMENT__AUGMENT_HPP_

#include "flowcast/scenario/scenario.hpp"

#include <optional>
#include <random>
#include <string>

namespace flowcast
{

struct AugmentConfig
{
  double p_flip = 0.5;
  double translation_range = 3.0;
  double rotation_range = 0.52359877559829882;  // pi / 6
  double resize_min = 0.8;
  double resize_max = 1.2;
  double p_agent_swap = 0.3;

  /// Every range collapsed and every probability zero.
  static AugmentConfig identity();
};

// Geometric transforms act on valid states and map points only.
Scenario translate(const Scenario & s, const Eigen::Vector2d & d);
Scenario rotate(const Scenario & s, double theta);
Scenario flip_y(const Scenario & s);
Scenario resize(const Scenario & s, double c);

/// Hand the target role to `new_target`, which needs a fully valid history.
Scenario agent_swap(const Scenario & s, const std::string & new_target);
bool swap_eligible(const AgentTrack & a);

/// One sampled augmentation, replayable from its JSON record.
struct AugmentationDraw
{
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();
  double rotation = 0.0;
  bool flip = false;
  double scale = 1.0;
  std::optional<std::string> swap_target;

  std::string to_json() const;
  static AugmentationDraw from_json(const std::string & text);
  bool operator==(const AugmentationDraw &) const = default;
};

AugmentationDraw sample_augmentation(const AugmentConfig & cfg, std::mt19937_64 & rng, const Scenario & s);

/**
 * Swap first (it changes which agent defines the frame), normalize, then
 * flip, resize, rotate, and translate inside the normalized frame.
 */
NormalizedScene apply_augmentation(const Scenario & s, const AugmentationDraw & draw);

}  // namespace flowcast

#endif  // FLOWCAST__AUGMENT__AUGMENT_HPP_
