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

#ifndef FLOWCAST__NUMERICS__GRAD_CHECK_HPP_
#define FLOWCAST__NUMERICS__GRAD_CHECK_HPP_

#include "flowcast/numerics/tape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace flowcast
{

/// Scalar-valued function of several tensors recorded on a tape.
using GradFunction = std::function<Var<double>(Tape<double> &, std::span<const Var<double>>)>;

struct GradCheckResult
{
  double max_relative_error = 0.0;
  /// Input and flat coordinate of the worst mismatch.
  std::size_t worst_input = 0;
  Index worst_index = 0;
  double worst_tape = 0.0;
  double worst_numeric = 0.0;
};

/**
 * Compares tape gradients of `f` at `inputs` against central differences.
 *
 * The per-coordinate error is |g_tape - g_fd| / max(1e-8, |g_tape| + |g_fd|).
 */
inline GradCheckResult grad_check(
  const GradFunction & f, const std::vector<Tensor<double>> & inputs,
  const std::vector<std::vector<Index>> & coordinates, double eps = 1e-5)
{
  auto evaluate = [&](const std::vector<Tensor<double>> & at) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(at.size());
    for (const auto & t : at) vars.push_back(tape.constant(t));
    return f(tape, vars).value()[0];
  };
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto & t : inputs) vars.push_back(tape.variable(t));
    Var<double> loss = f(tape, vars);
    tape.backward(loss);
    for (const auto & v : vars) analytic.push_back(tape.gradient(v));
  }
  GradCheckResult result;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    for (Index i : coordinates[n]) {
      const double x0 = inputs[n][i];
      probe[n][i] = x0 + eps;
      const double up = evaluate(probe);
      probe[n][i] = x0 - eps;
      const double down = evaluate(probe);
      probe[n][i] = x0;
      const double numeric = (up - down) / (2.0 * eps);
      const double tape_grad = analytic[n][i];
      const double err =
        std::abs(tape_grad - numeric) / std::max(1e-8, std::abs(tape_grad) + std::abs(numeric));
      if (err > result.max_relative_error) {
        result = {err, n, i, tape_grad, numeric};
      }
    }
  }
  return result;
}

/// Every coordinate of every input.
inline GradCheckResult grad_check(
  const GradFunction & f, const std::vector<Tensor<double>> & inputs, double eps = 1e-5)
{
  std::vector<std::vector<Index>> all(inputs.size());
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    all[n].resize(static_cast<std::size_t>(inputs[n].size()));
    for (Index i = 0; i < inputs[n].size(); ++i) all[n][static_cast<std::size_t>(i)] = i;
  }
  return grad_check(f, inputs, all, eps);
}

}  // namespace flowcast

#endif  // FLOWCAST__NUMERICS__GRAD_CHECK_HPP_
