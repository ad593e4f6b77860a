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

#ifndef FLOWCAST__MODEL__MODEL_HPP_
#define FLOWCAST__MODEL__MODEL_HPP_

#include "flowcast/metrics/metrics.hpp"
#include "flowcast/numerics/attention.hpp"
#include "flowcast/numerics/layers.hpp"
#include "flowcast/scenario/scenario.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace flowcast
{

struct ModelConfig
{
  Index width = 128;
  Index modes = 6;
  Index agent_capacity = 32;
  Index map_capacity = 128;
  Index encoder_depth = 3;
  Index decoder_depth = 2;
  /// Metres per model unit for positions and speeds.
  double position_scale = 10.0;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static ModelConfig from_json(const std::string & text);
  bool operator==(const ModelConfig &) const = default;
};

/// Width, mode count, and depths must agree; capacities may differ.
void check_compatible(const ModelConfig & stored, const ModelConfig & requested);

template <typename S>
using ParameterSet = std::map<std::string, Tensor<S>>;

/// Expected shape of every named parameter.
std::map<std::string, Shape> parameter_shapes(const ModelConfig & cfg);

template <typename S>
ParameterSet<S> init_parameters(const ModelConfig & cfg);

template <typename To, typename From>
ParameterSet<To> cast_parameters(const ParameterSet<From> & p)
{
  ParameterSet<To> out;
  for (const auto & [name, t] : p) out.emplace(name, t.template cast<To>());
  return out;
}

/// Parameters placed on a tape, looked up by name.
template <typename S>
class BoundParameters
{
public:
  BoundParameters(Tape<S> & tape, const ParameterSet<S> & params, bool trainable);
  /// Wrap variables already recorded on `tape`.
  BoundParameters(Tape<S> & tape, std::map<std::string, Var<S>> vars) : tape_(&tape), vars_(std::move(vars)) {}

  Var<S> operator()(const std::string & name) const;
  Tape<S> & tape() const { return *tape_; }
  const std::map<std::string, Var<S>> & vars() const { return vars_; }

  AttentionWeights<S> attention(const std::string & prefix) const;
  MlpWeights<S> mlp(const std::string & prefix) const;
  LstmWeights<S> lstm(const std::string & prefix) const;
  PyramidWeights<S> pyramid(const std::string & prefix) const;
  Var<S> norm(Var<S> x, const std::string & prefix) const;

private:
  Tape<S> * tape_;
  std::map<std::string, Var<S>> vars_;
};

template <typename S>
struct EncoderOutput
{
  Var<S> x_m;         // [A, T_h, D]
  Var<S> map_tokens;  // [M, D]
  Tensor<S> agent_valid;
  Tensor<S> map_valid;
};

template <typename S>
struct ScoreOutput
{
  Var<S> logits, scores, log_scores;  // [K]
};

template <typename S>
struct ModelOutput
{
  EncoderOutput<S> encoded;
  Var<S> x_pt;          // [K, T, D]
  Var<S> trajectories;  // [K, T, 5]
  ScoreOutput<S> score;
  Var<S> h_pred;        // [T_h, 2]
  Index best_mode = 0;

  /// Future positions, scores, and reconstructed history as an interchange record.
  PredictionRecord to_record(const std::string & scenario_id) const;
};

struct ForwardOptions
{
  /// Drop padded agent and polyline rows before the network runs.
  bool trim_padding = true;
};

/// Keep the first `agents` agent rows and `polylines` polyline rows.
template <typename S>
ModelTensors<S> trim_tensors(const ModelTensors<S> & t, Index agents, Index polylines);

template <typename S>
EncoderOutput<S> encode(const BoundParameters<S> & p, const ModelConfig & cfg, const ModelTensors<S> & in);

template <typename S>
Var<S> decode(const BoundParameters<S> & p, const ModelConfig & cfg, const EncoderOutput<S> & enc);

template <typename S>
Var<S> regression_head(const BoundParameters<S> & p, const ModelConfig & cfg, Var<S> x_pt);

template <typename S>
ScoreOutput<S> score_head(const BoundParameters<S> & p, Var<S> x_pt, Var<S> map_tokens, const Tensor<S> & map_valid);

template <typename S>
Var<S> temporal_flow_head(const BoundParameters<S> & p, const ModelConfig & cfg, Var<S> x_pt, Index mode);

template <typename S>
ModelOutput<S> forward(
  const BoundParameters<S> & p, const ModelConfig & cfg, const ModelTensors<S> & in, const ForwardOptions & opt = {});

/// normalize, filter to 100 m, tensorize at the configured capacities, forward without gradients.
template <typename S>
PredictionRecord predict(const ParameterSet<S> & params, const ModelConfig & cfg, const Scenario & s);

struct Checkpoint
{
  ModelConfig config;
  ParameterSet<float> parameters;
};

/// Versioned container: config record, named float32 tensors, crc32 trailer.
void save_checkpoint(const Checkpoint & c, const std::string & path);
Checkpoint load_checkpoint(const std::string & path);

}  // namespace flowcast

#endif  // FLOWCAST__MODEL__MODEL_HPP_
