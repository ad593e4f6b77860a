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

#include "flowcast/model/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <random>

namespace flowcast
{

std::string ModelConfig::to_json() const
{
  nlohmann::json j;
  j["width"] = width;
  j["modes"] = modes;
  j["agent_capacity"] = agent_capacity;
  j["map_capacity"] = map_capacity;
  j["encoder_depth"] = encoder_depth;
  j["decoder_depth"] = decoder_depth;
  j["position_scale"] = position_scale;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string & text)
{
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.width = j.at("width").get<Index>();
    c.modes = j.at("modes").get<Index>();
    c.agent_capacity = j.at("agent_capacity").get<Index>();
    c.map_capacity = j.at("map_capacity").get<Index>();
    c.encoder_depth = j.at("encoder_depth").get<Index>();
    c.decoder_depth = j.at("decoder_depth").get<Index>();
    c.position_scale = j.at("position_scale").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception & e) {
    throw SchemaError(std::string("model config: ") + e.what());
  }
}

void check_compatible(const ModelConfig & stored, const ModelConfig & requested)
{
  if (stored.width != requested.width || stored.modes != requested.modes) {
    throw SchemaError(
      "checkpoint has width " + std::to_string(stored.width) + " and K=" + std::to_string(stored.modes) +
      ", requested width " + std::to_string(requested.width) + " and K=" + std::to_string(requested.modes));
  }
  if (stored.encoder_depth != requested.encoder_depth || stored.decoder_depth != requested.decoder_depth) {
    throw SchemaError("checkpoint depth differs from the requested model");
  }
}

namespace
{

void add_attention(std::map<std::string, Shape> & s, const std::string & p, Index d)
{
  for (const char * w : {".wq", ".wk", ".wv", ".wo"}) s[p + w] = {d, d};
  for (const char * b : {".bq", ".bv", ".bo"}) s[p + b] = {d};
}

void add_norm(std::map<std::string, Shape> & s, const std::string & p, Index d)
{
  s[p + ".gamma"] = {d};
  s[p + ".beta"] = {d};
}

void add_mlp(std::map<std::string, Shape> & s, const std::string & p, Index in, Index hidden, Index out)
{
  s[p + ".w1"] = {in, hidden};
  s[p + ".b1"] = {hidden};
  s[p + ".w2"] = {hidden, out};
  s[p + ".b2"] = {out};
}

bool ends_with(const std::string & s, const std::string & suffix)
{
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::map<std::string, Shape> parameter_shapes(const ModelConfig & cfg)
{
  if (cfg.width < 1 || cfg.modes < 2) throw ShapeError("model needs width >= 1 and at least two modes");
  const Index d = cfg.width;
  std::map<std::string, Shape> s;
  s["agent.in.w"] = {kAgentFeatures, d};
  s["agent.in.b"] = {d};
  s["agent.time"] = {kHistoryFrames, d};
  s["agent.role"] = {2, d};
  add_mlp(s, "map.mlp", kMapFeatures, d, d);
  for (Index i = 0; i < cfg.encoder_depth; ++i) {
    const std::string p = "enc" + std::to_string(i);
    for (const char * n : {".time_ln", ".agent_ln", ".map_ln", ".map_kv_ln", ".mlp_ln"}) add_norm(s, p + n, d);
    for (const char * a : {".time_attn", ".agent_attn", ".map_attn"}) add_attention(s, p + a, d);
    add_mlp(s, p + ".mlp", d, d, d);
  }
  add_norm(s, "enc.final_ln", d);
  s["dec.tokens"] = {cfg.modes, d};
  s["dec.time"] = {kTotalFrames, d};
  for (Index i = 0; i < cfg.decoder_depth; ++i) {
    const std::string p = "dec" + std::to_string(i);
    for (const char * n : {".cross_ln", ".mode_ln", ".mlp_ln"}) add_norm(s, p + n, d);
    for (const char * a : {".cross_attn", ".mode_attn"}) add_attention(s, p + a, d);
    add_mlp(s, p + ".mlp", d, d, d);
  }
  add_norm(s, "dec.final_ln", d);
  add_mlp(s, "reg.mlp", d, d, kAttributes);
  s["reg.lstm.wx"] = {d, 4 * d};
  s["reg.lstm.wh"] = {d, 4 * d};
  s["reg.lstm.b"] = {4 * d};
  s["reg.proj.w"] = {d, kAttributes};
  s["reg.proj.b"] = {kAttributes};
  add_norm(s, "score.ln", d);
  add_norm(s, "score.map_ln", d);
  add_attention(s, "score.attn", d);
  add_mlp(s, "score.mlp", d, d, 1);
  s["tf.pyramid.w_down"] = {d, d};
  s["tf.pyramid.b_down"] = {d};
  s["tf.pyramid.w_lateral"] = {d, d};
  s["tf.pyramid.b_lateral"] = {d};
  s["tf.time.w"] = {kFutureFrames, kHistoryFrames};
  s["tf.time.b"] = {kHistoryFrames};
  add_mlp(s, "tf.mlp", d, d, 2);
  return s;
}

template <typename S>
ParameterSet<S> init_parameters(const ModelConfig & cfg)
{
  std::mt19937_64 rng(cfg.seed);
  ParameterSet<S> out;
  for (const auto & [name, shape] : parameter_shapes(cfg)) {
    Tensor<S> t(shape);
    if (ends_with(name, ".gamma")) {
      t = Tensor<S>(shape, S(1));
    } else if (name == "dec.tokens" || ends_with(name, ".time") || name == "agent.role") {
      t = Tensor<S>::random_normal(shape, rng, S(0.02));
    } else if (shape.size() == 2) {
      t = Tensor<S>::random_normal(shape, rng, S(1) / std::sqrt(static_cast<S>(shape[0])));
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

template <typename S>
BoundParameters<S>::BoundParameters(Tape<S> & tape, const ParameterSet<S> & params, bool trainable) : tape_(&tape)
{
  for (const auto & [name, t] : params) vars_.emplace(name, trainable ? tape.variable(t) : tape.constant(t));
}

template <typename S>
Var<S> BoundParameters<S>::operator()(const std::string & name) const
{
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw ShapeError("missing parameter " + name);
  return it->second;
}

template <typename S>
AttentionWeights<S> BoundParameters<S>::attention(const std::string & p) const
{
  const auto & self = *this;
  return {self(p + ".wq"), self(p + ".bq"), self(p + ".wk"), self(p + ".wv"), self(p + ".bv"), self(p + ".wo"), self(p + ".bo")};
}

template <typename S>
MlpWeights<S> BoundParameters<S>::mlp(const std::string & p) const
{
  const auto & self = *this;
  return {self(p + ".w1"), self(p + ".b1"), self(p + ".w2"), self(p + ".b2")};
}

template <typename S>
LstmWeights<S> BoundParameters<S>::lstm(const std::string & p) const
{
  const auto & self = *this;
  return {self(p + ".wx"), self(p + ".wh"), self(p + ".b")};
}

template <typename S>
PyramidWeights<S> BoundParameters<S>::pyramid(const std::string & p) const
{
  const auto & self = *this;
  return {self(p + ".w_down"), self(p + ".b_down"), self(p + ".w_lateral"), self(p + ".b_lateral")};
}

template <typename S>
Var<S> BoundParameters<S>::norm(Var<S> x, const std::string & p) const
{
  return layer_norm(x, (*this)(p + ".gamma"), (*this)(p + ".beta"), x.rank() - 1);
}

template <typename S>
ModelTensors<S> trim_tensors(const ModelTensors<S> & t, Index agents, Index polylines)
{
  auto rows = [](const Tensor<S> & x, Index n) {
    Shape shape = x.shape();
    const Index inner = x.size() / shape[0];
    shape[0] = n;
    Tensor<S> out(shape);
    out.flat() = x.flat().head(n * inner);
    return out;
  };
  ModelTensors<S> out = t;
  out.agents = rows(t.agents, agents);
  out.agent_valid = rows(t.agent_valid, agents);
  out.map = rows(t.map, polylines);
  out.map_valid = rows(t.map_valid, polylines);
  out.agent_ids.resize(std::min<std::size_t>(out.agent_ids.size(), static_cast<std::size_t>(agents)));
  out.polyline_ids.resize(std::min<std::size_t>(out.polyline_ids.size(), static_cast<std::size_t>(polylines)));
  out.valid_agents = std::min(out.valid_agents, agents);
  out.valid_polylines = std::min(out.valid_polylines, polylines);
  return out;
}

template <typename S>
EncoderOutput<S> encode(const BoundParameters<S> & p, const ModelConfig & cfg, const ModelTensors<S> & in)
{
  Tape<S> & tape = p.tape();
  const Index a = in.agents.dim(0), d = cfg.width;
  const S inv = S(1) / static_cast<S>(cfg.position_scale);

  Var<S> x = mul_constant(tape.constant(in.agents), Tensor<S>({kAgentFeatures}, std::vector<S>{inv, inv, 1, 1, inv, 1}));
  x = add_broadcast(linear(x, p("agent.in.w"), p("agent.in.b")), p("agent.time"));
  Tensor<S> role({a, 2});
  for (Index i = 0; i < a; ++i) role[i * 2 + (i == 0 ? 0 : 1)] = S(1);
  x = add(x, expand(matmul(tape.constant(role), p("agent.role")), 1, kHistoryFrames));
  x = mask_rows(x, in.agent_valid);

  Var<S> m = mul_constant(tape.constant(in.map), Tensor<S>({kMapFeatures}, std::vector<S>{inv, inv, inv, inv, 1, 1}));
  m = mean_axis(mlp(m, p.mlp("map.mlp")), 1);

  const AttentionMask agent_mask = AttentionMask::from_tensor(in.agent_valid);
  const AttentionMask map_mask = AttentionMask::from_tensor(in.map_valid);
  for (Index i = 0; i < cfg.encoder_depth; ++i) {
    const std::string pre = "enc" + std::to_string(i);
    x = add(x, axis_self_attention(p.norm(x, pre + ".time_ln"), 1, agent_mask, p.attention(pre + ".time_attn")));
    x = add(x, axis_self_attention(p.norm(x, pre + ".agent_ln"), 0, agent_mask, p.attention(pre + ".agent_attn")));
    Var<S> q = reshape(p.norm(x, pre + ".map_ln"), {a * kHistoryFrames, d});
    Var<S> fused = axis_cross_attention(q, p.norm(m, pre + ".map_kv_ln"), 0, 0, map_mask, p.attention(pre + ".map_attn"));
    x = add(x, reshape(fused, {a, kHistoryFrames, d}));
    x = add(x, mlp(p.norm(x, pre + ".mlp_ln"), p.mlp(pre + ".mlp")));
    x = mask_rows(x, in.agent_valid);
  }
  x = mask_rows(p.norm(x, "enc.final_ln"), in.agent_valid);
  return {x, m, in.agent_valid, in.map_valid};
}

template <typename S>
Var<S> decode(const BoundParameters<S> & p, const ModelConfig & cfg, const EncoderOutput<S> & enc)
{
  const Index k = cfg.modes, d = cfg.width, a = enc.x_m.dim(0);
  Var<S> y = add_broadcast(expand(p("dec.tokens"), 1, kTotalFrames), p("dec.time"));
  Var<S> keys = reshape(enc.x_m, {a * kHistoryFrames, d});
  const AttentionMask key_mask = AttentionMask::from_tensor(enc.agent_valid.reshaped({a * kHistoryFrames}));
  const AttentionMask mode_mask({k, kTotalFrames});
  for (Index i = 0; i < cfg.decoder_depth; ++i) {
    const std::string pre = "dec" + std::to_string(i);
    Var<S> q = reshape(p.norm(y, pre + ".cross_ln"), {k * kTotalFrames, d});
    y = add(y, reshape(axis_cross_attention(q, keys, 0, 0, key_mask, p.attention(pre + ".cross_attn")), {k, kTotalFrames, d}));
    y = add(y, axis_self_attention(p.norm(y, pre + ".mode_ln"), 0, mode_mask, p.attention(pre + ".mode_attn")));
    y = add(y, mlp(p.norm(y, pre + ".mlp_ln"), p.mlp(pre + ".mlp")));
  }
  return p.norm(y, "dec.final_ln");
}

template <typename S>
Var<S> regression_head(const BoundParameters<S> & p, const ModelConfig & cfg, Var<S> x_pt)
{
  const S ps = static_cast<S>(cfg.position_scale);
  Var<S> direct = mlp(x_pt, p.mlp("reg.mlp"));
  Var<S> recurrent = linear(recurrent_sequence(x_pt, 1, p.lstm("reg.lstm")), p("reg.proj.w"), p("reg.proj.b"));
  return mul_constant(add(direct, recurrent), Tensor<S>({kAttributes}, std::vector<S>{ps, ps, 1, 1, ps}));
}

template <typename S>
ScoreOutput<S> score_head(const BoundParameters<S> & p, Var<S> x_pt, Var<S> map_tokens, const Tensor<S> & map_valid)
{
  const Index k = x_pt.dim(0);
  Var<S> pooled = mean_axis(x_pt, 1);
  Var<S> mixed = axis_cross_attention(
    p.norm(pooled, "score.ln"), p.norm(map_tokens, "score.map_ln"), 0, 0, AttentionMask::from_tensor(map_valid),
    p.attention("score.attn"));
  Var<S> logits = reshape(mlp(add(pooled, mixed), p.mlp("score.mlp")), {k});
  return {logits, softmax(logits), log_softmax(logits)};
}

template <typename S>
Var<S> temporal_flow_head(const BoundParameters<S> & p, const ModelConfig & cfg, Var<S> x_pt, Index mode)
{
  Var<S> f = slice(take(x_pt, 0, mode), 0, kHistoryFrames, kTotalFrames);
  f = temporal_pyramid(f, p.pyramid("tf.pyramid"));
  // Map the future time axis onto the history time axis.
  f = permute(linear(permute(f, {1, 0}), p("tf.time.w"), p("tf.time.b")), {1, 0});
  return scale(mlp(f, p.mlp("tf.mlp")), static_cast<S>(cfg.position_scale));
}

template <typename S>
ModelOutput<S> forward(const BoundParameters<S> & p, const ModelConfig & cfg, const ModelTensors<S> & in, const ForwardOptions & opt)
{
  const ModelTensors<S> & used = opt.trim_padding
    ? trim_tensors(in, std::max<Index>(1, in.valid_agents), std::max<Index>(1, in.valid_polylines))
    : in;
  ModelOutput<S> out;
  out.encoded = encode(p, cfg, used);
  out.x_pt = decode(p, cfg, out.encoded);
  out.trajectories = regression_head(p, cfg, out.x_pt);
  out.score = score_head(p, out.x_pt, out.encoded.map_tokens, out.encoded.map_valid);
  const auto & s = out.score.scores.value();
  out.best_mode = 0;
  for (Index i = 1; i < s.size(); ++i) {
    if (s[i] > s[out.best_mode]) out.best_mode = i;
  }
  out.h_pred = temporal_flow_head(p, cfg, out.x_pt, out.best_mode);
  return out;
}

template <typename S>
PredictionRecord ModelOutput<S>::to_record(const std::string & scenario_id) const
{
  const auto & traj = trajectories.value();
  const Index k = traj.dim(0);
  PredictionRecord r;
  r.scenario_id = scenario_id;
  r.scores.resize(k);
  // Scores are renormalized in double so the record meets the simplex check exactly.
  double total = 0.0;
  for (Index i = 0; i < k; ++i) total += static_cast<double>(score.scores.value()[i]);
  for (Index i = 0; i < k; ++i) {
    Trajectory<double> t(kFutureFrames, 2);
    for (Index f = 0; f < kFutureFrames; ++f) {
      const Index at = (i * kTotalFrames + kHistoryFrames + f) * kAttributes;
      t(f, 0) = static_cast<double>(traj[at]);
      t(f, 1) = static_cast<double>(traj[at + 1]);
    }
    r.trajectories.push_back(std::move(t));
    r.scores[i] = static_cast<double>(score.scores.value()[i]) / total;
  }
  Trajectory<double> h(kHistoryFrames, 2);
  for (Index f = 0; f < kHistoryFrames; ++f) {
    h(f, 0) = static_cast<double>(h_pred.value()[f * 2]);
    h(f, 1) = static_cast<double>(h_pred.value()[f * 2 + 1]);
  }
  r.h_pred = std::move(h);
  return r;
}

template <typename S>
PredictionRecord predict(const ParameterSet<S> & params, const ModelConfig & cfg, const Scenario & s)
{
  const NormalizedScene ns = filter_radius(normalize(s));
  const auto tensors = to_model_tensors<S>(ns, cfg.agent_capacity, cfg.map_capacity);
  Tape<S> tape;
  const BoundParameters<S> bound(tape, params, false);
  return forward(bound, cfg, tensors).to_record(s.scenario_id);
}

#define FLOWCAST_INSTANTIATE_MODEL(S)                                                                            \
  template ParameterSet<S> init_parameters<S>(const ModelConfig &);                                              \
  template class BoundParameters<S>;                                                                             \
  template struct ModelOutput<S>;                                                                                \
  template ModelTensors<S> trim_tensors(const ModelTensors<S> &, Index, Index);                                  \
  template EncoderOutput<S> encode(const BoundParameters<S> &, const ModelConfig &, const ModelTensors<S> &);    \
  template Var<S> decode(const BoundParameters<S> &, const ModelConfig &, const EncoderOutput<S> &);             \
  template Var<S> regression_head(const BoundParameters<S> &, const ModelConfig &, Var<S>);                      \
  template ScoreOutput<S> score_head(const BoundParameters<S> &, Var<S>, Var<S>, const Tensor<S> &);             \
  template Var<S> temporal_flow_head(const BoundParameters<S> &, const ModelConfig &, Var<S>, Index);            \
  template ModelOutput<S> forward(                                                                               \
    const BoundParameters<S> &, const ModelConfig &, const ModelTensors<S> &, const ForwardOptions &);           \
  template PredictionRecord predict(const ParameterSet<S> &, const ModelConfig &, const Scenario &);

FLOWCAST_INSTANTIATE_MODEL(float)
FLOWCAST_INSTANTIATE_MODEL(double)
FLOWCAST_INSTANTIATE_MODEL(long double)

#undef FLOWCAST_INSTANTIATE_MODEL

}  // namespace flowcast
