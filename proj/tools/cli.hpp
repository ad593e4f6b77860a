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

#ifndef FLOWCAST__TOOLS__CLI_HPP_
#define FLOWCAST__TOOLS__CLI_HPP_

#include "flowcast/metrics/metrics.hpp"
#include "flowcast/scenario/scenario.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace flowcast::cli
{

enum ExitCode : int
{
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIo = 3,
  kNumerical = 4,
};

/// Parses argv, runs one subcommand, and reports failures as a single
/// `error[<category>]: <message>` line on `log`.
int run(int argc, const char * const * argv, std::ostream & out, std::ostream & log);

/// One panel per prediction set, side by side, in the scenario's normalized frame.
/// History is blue, predictions red, ground truth green.
std::string render_svg(
  const Scenario & scenario, const std::vector<PredictionRecord> & panels, const std::vector<std::string> & titles);

}  // namespace flowcast::cli

#endif  // FLOWCAST__TOOLS__CLI_HPP_
