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

#include "flowcast/metrics/metrics.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>

namespace flowcast
{

namespace
{

template <typename S>
void check_modes(const std::vector<Trajectory<S>> & modes, const Trajectory<S> & gt)
{
  if (modes.empty() || gt.rows() == 0) throw ShapeError("metrics need at least one mode and one frame");
  for (const auto & m : modes) {
    if (m.rows() != gt.rows()) throw ShapeError("metrics: mode length differs from ground truth");
  }
}

template <typename S>
S brier_term(S distance, S p, BrierConvention convention)
{
  const S penalty = (S(1) - p) * (S(1) - p);
  return convention == BrierConvention::kAdditive ? distance + penalty : distance * penalty;
}

}  // namespace

template <typename S>
ModeSelection<S> min_fde(const std::vector<Trajectory<S>> & modes, const Trajectory<S> & gt)
{
  check_modes(modes, gt);
  const Index last = gt.rows() - 1;
  ModeSelection<S> best{(modes[0].row(last) - gt.row(last)).norm(), 0};
  for (std::size_t k = 1; k < modes.size(); ++k) {
    const S d = (modes[k].row(last) - gt.row(last)).norm();
    if (d < best.value) best = {d, static_cast<Index>(k)};
  }
  return best;
}

template <typename S>
ModeSelection<S> min_ade(const std::vector<Trajectory<S>> & modes, const Trajectory<S> & gt)
{
  check_modes(modes, gt);
  ModeSelection<S> best{S(0), -1};
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const S d = (modes[k] - gt).rowwise().norm().mean();
    if (best.index < 0 || d < best.value) best = {d, static_cast<Index>(k)};
  }
  return best;
}

template <typename S>
bool is_miss(const std::vector<Trajectory<S>> & modes, const Trajectory<S> & gt, S threshold)
{
  return min_fde(modes, gt).value > threshold;
}

template <typename S>
S brier_min_fde(
  const std::vector<Trajectory<S>> & modes, const Eigen::Matrix<S, Eigen::Dynamic, 1> & scores,
  const Trajectory<S> & gt, BrierConvention convention)
{
  if (scores.size() != static_cast<Index>(modes.size())) throw ShapeError("brier: one score per mode required");
  const auto best = min_fde(modes, gt);
  return brier_term(best.value, scores[best.index], convention);
}

template <typename S>
S brier_min_ade(
  const std::vector<Trajectory<S>> & modes, const Eigen::Matrix<S, Eigen::Dynamic, 1> & scores,
  const Trajectory<S> & gt, BrierConvention convention)
{
  if (scores.size() != static_cast<Index>(modes.size())) throw ShapeError("brier: one score per mode required");
  const auto best = min_ade(modes, gt);
  return brier_term(best.value, scores[best.index], convention);
}

void PredictionRecord::check() const
{
  if (trajectories.empty()) throw SchemaError(scenario_id + ": prediction has no modes");
  if (scores.size() != static_cast<Index>(trajectories.size())) {
    throw SchemaError(scenario_id + ": score count differs from mode count");
  }
  for (const auto & t : trajectories) {
    if (t.rows() != trajectories.front().rows() || t.rows() == 0) {
      throw SchemaError(scenario_id + ": ragged trajectories");
    }
    if (!t.allFinite()) throw SchemaError(scenario_id + ": non-finite trajectory");
  }
  if ((scores.array() < 0.0).any() || std::abs(scores.sum() - 1.0) > 1e-6) {
    throw SchemaError(scenario_id + ": scores are not a probability vector");
  }
}

namespace
{

void append_trajectory(std::string & out, const Trajectory<double> & t)
{
  out += '[';
  for (Index r = 0; r < t.rows(); ++r) {
    if (r > 0) out += ',';
    fmt::format_to(std::back_inserter(out), "[{:.17g},{:.17g}]", t(r, 0), t(r, 1));
  }
  out += ']';
}

Trajectory<double> parse_trajectory(const nlohmann::json & j)
{
  Trajectory<double> t(static_cast<Index>(j.size()), 2);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != 2) throw SchemaError("trajectory point must have 2 entries");
    t(static_cast<Index>(r), 0) = j[r][0].get<double>();
    t(static_cast<Index>(r), 1) = j[r][1].get<double>();
  }
  return t;
}

}  // namespace

std::string to_jsonl_line(const PredictionRecord & p)
{
  std::string out = "{\"scenario_id\":" + nlohmann::json(p.scenario_id).dump() + ",\"trajectories\":[";
  for (std::size_t k = 0; k < p.trajectories.size(); ++k) {
    if (k > 0) out += ',';
    append_trajectory(out, p.trajectories[k]);
  }
  out += "],\"scores\":[";
  for (Index k = 0; k < p.scores.size(); ++k) {
    if (k > 0) out += ',';
    fmt::format_to(std::back_inserter(out), "{:.17g}", p.scores[k]);
  }
  out += ']';
  if (p.h_pred) {
    out += ",\"h_pred\":";
    append_trajectory(out, *p.h_pred);
  }
  out += '}';
  return out;
}

PredictionRecord prediction_from_json_line(const std::string & line, std::size_t line_number)
{
  const std::string where = "line " + std::to_string(line_number) + ": ";
  PredictionRecord p;
  try {
    const auto j = nlohmann::json::parse(line);
    p.scenario_id = j.at("scenario_id").get<std::string>();
    for (const auto & jt : j.at("trajectories")) p.trajectories.push_back(parse_trajectory(jt));
    const auto & js = j.at("scores");
    p.scores.resize(static_cast<Index>(js.size()));
    for (std::size_t k = 0; k < js.size(); ++k) p.scores[static_cast<Index>(k)] = js[k].get<double>();
    if (j.contains("h_pred")) p.h_pred = parse_trajectory(j.at("h_pred"));
    p.check();
  } catch (const nlohmann::json::exception & e) {
    throw SchemaError(where + e.what());
  } catch (const SchemaError & e) {
    throw SchemaError(where + e.what());
  }
  return p;
}

void save_predictions(const std::vector<PredictionRecord> & records, const std::string & path)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto & r : records) out << to_jsonl_line(r) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

std::vector<PredictionRecord> load_predictions(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty()) out.push_back(prediction_from_json_line(line, n));
  }
  return out;
}

ScenarioMetrics evaluate_scenario(const PredictionRecord & p, const Trajectory<double> & gt, BrierConvention convention)
{
  ScenarioMetrics m;
  m.scenario_id = p.scenario_id;
  const auto fde = min_fde(p.trajectories, gt);
  const auto ade = min_ade(p.trajectories, gt);
  m.min_fde = fde.value;
  m.min_ade = ade.value;
  m.miss = fde.value > kMissThreshold ? 1.0 : 0.0;
  m.p_best = p.scores[fde.index];
  m.brier_min_fde = brier_min_fde(p.trajectories, p.scores, gt, convention);
  m.brier_min_ade = brier_min_ade(p.trajectories, p.scores, gt, convention);
  return m;
}

EvalResult evaluate_corpus(
  const std::vector<PredictionRecord> & predictions, const std::vector<Scenario> & corpus, BrierConvention convention)
{
  std::map<std::string, const Scenario *> by_id;
  for (const auto & s : corpus) by_id[s.scenario_id] = &s;
  if (by_id.size() != predictions.size()) {
    throw SchemaError(
      "evaluate: " + std::to_string(predictions.size()) + " predictions for " + std::to_string(by_id.size()) +
      " scenarios");
  }
  EvalResult r;
  for (const auto & p : predictions) {
    const auto it = by_id.find(p.scenario_id);
    if (it == by_id.end()) throw SchemaError("evaluate: no scenario " + p.scenario_id);
    const Trajectory<double> gt = target_future(normalize(*it->second).scene);
    r.rows.push_back(evaluate_scenario(p, gt, convention));
  }
  std::sort(r.rows.begin(), r.rows.end(), [](const auto & a, const auto & b) { return a.scenario_id < b.scenario_id; });
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    if (r.rows[i].scenario_id == r.rows[i - 1].scenario_id) {
      throw SchemaError("evaluate: duplicate prediction for " + r.rows[i].scenario_id);
    }
  }
  if (!r.rows.empty()) {
    ScenarioMetrics m;
    m.scenario_id = "mean";
    for (const auto & row : r.rows) {
      m.min_ade += row.min_ade;
      m.min_fde += row.min_fde;
      m.miss += row.miss;
      m.brier_min_ade += row.brier_min_ade;
      m.brier_min_fde += row.brier_min_fde;
      m.p_best += row.p_best;
    }
    const double n = static_cast<double>(r.rows.size());
    m.min_ade /= n;
    m.min_fde /= n;
    m.miss /= n;
    m.brier_min_ade /= n;
    m.brier_min_fde /= n;
    m.p_best /= n;
    r.mean = m;
  }
  return r;
}

std::string to_csv(const EvalResult & r)
{
  std::string out = "scenario_id,min_ade,min_fde,miss_rate,brier_min_ade,brier_min_fde,p_best\n";
  auto row = [&](const ScenarioMetrics & m) {
    fmt::format_to(
      std::back_inserter(out), "{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", m.scenario_id, m.min_ade,
      m.min_fde, m.miss, m.brier_min_ade, m.brier_min_fde, m.p_best);
  };
  for (const auto & m : r.rows) row(m);
  if (r.mean) row(*r.mean);
  return out;
}

void write_csv(const EvalResult & r, const std::string & path)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << to_csv(r);
  if (!out) throw IoError("failed writing " + path);
}

#define FLOWCAST_INSTANTIATE_METRICS(S)                                                                     \
  template ModeSelection<S> min_fde(const std::vector<Trajectory<S>> &, const Trajectory<S> &);             \
  template ModeSelection<S> min_ade(const std::vector<Trajectory<S>> &, const Trajectory<S> &);             \
  template bool is_miss(const std::vector<Trajectory<S>> &, const Trajectory<S> &, S);                      \
  template S brier_min_fde(                                                                                 \
    const std::vector<Trajectory<S>> &, const Eigen::Matrix<S, Eigen::Dynamic, 1> &, const Trajectory<S> &, \
    BrierConvention);                                                                                       \
  template S brier_min_ade(                                                                                 \
    const std::vector<Trajectory<S>> &, const Eigen::Matrix<S, Eigen::Dynamic, 1> &, const Trajectory<S> &, \
    BrierConvention);

FLOWCAST_INSTANTIATE_METRICS(float)
FLOWCAST_INSTANTIATE_METRICS(double)

#undef FLOWCAST_INSTANTIATE_METRICS

}  // namespace flowcast
