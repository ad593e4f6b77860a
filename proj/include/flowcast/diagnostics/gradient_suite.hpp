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

#ifndef FLOWCAST__DIAGNOSTICS__GRADIENT_SUITE_HPP_
#define FLOWCAST__DIAGNOSTICS__GRADIENT_SUITE_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace flowcast
{

struct GradientCaseResult
{
  std::string name;
  int points = 0;
  /// Worst relative error over all points.
  double max_relative_error = 0.0;
  double seconds = 0.0;
};

/// Names of every case `gradient_suite` runs, in order.
std::vector<std::string> gradient_case_names();

/**
 * Central finite-difference checks of every differentiable building block
 * and of the full model loss, each at `points` random float64 points.
 * The full-model case probes a seeded sample of coordinates per tensor.
 * An empty `only` runs every case.
 */
std::vector<GradientCaseResult> gradient_suite(
  std::uint64_t seed, int points = 10, const std::vector<std::string> & only = {});

}  // namespace flowcast

#endif  // FLOWCAST__DIAGNOSTICS__GRADIENT_SUITE_HPP_
