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

#include <fmt/format.h>
#include <json.hpp>

#include <fstream>
#include <iterator>

namespace flowcast
{

namespace
{

void append_number(std::string & out, double v)
{
  fmt::format_to(std::back_inserter(out), "{:.17g}", v);
}

void append_string(std::string & out, const std::string & text)
{
  out += nlohmann::json(text).dump();
}

template <typename T>
T field(const nlohmann::json & j, const char * key, std::size_t line)
{
  if (!j.contains(key)) throw SchemaError("line " + std::to_string(line) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception & e) {
    throw SchemaError("line " + std::to_string(line) + ": field '" + key + "': " + e.what());
  }
}

}  // namespace

std::string to_jsonl_line(const Scenario & s)
{
  std::string out;
  out.reserve(64 * 1024);
  out += "{\"version\":" + std::to_string(kScenarioSchemaVersion) + ",\"scenario_id\":";
  append_string(out, s.scenario_id);
  out += ",\"target_id\":";
  append_string(out, s.target_id);
  out += ",\"agents\":[";
  for (std::size_t a = 0; a < s.agents.size(); ++a) {
    if (a > 0) out += ',';
    out += "{\"id\":";
    append_string(out, s.agents[a].id);
    out += ",\"states\":[";
    for (std::size_t t = 0; t < s.agents[a].states.size(); ++t) {
      const AgentState & st = s.agents[a].states[t];
      if (t > 0) out += ',';
      out += '[';
      append_number(out, st.x);
      out += ',';
      append_number(out, st.y);
      out += ',';
      append_number(out, st.heading);
      out += ',';
      append_number(out, st.speed);
      out += st.valid ? ",1]" : ",0]";
    }
    out += "]}";
  }
  out += "],\"map\":[";
  for (std::size_t m = 0; m < s.map.size(); ++m) {
    if (m > 0) out += ',';
    out += "{\"id\":";
    append_string(out, s.map[m].id);
    out += ",\"kind\":\"" + to_string(s.map[m].kind) + "\",\"points\":[";
    for (std::size_t i = 0; i < s.map[m].points.size(); ++i) {
      if (i > 0) out += ',';
      out += '[';
      append_number(out, s.map[m].points[i].x());
      out += ',';
      append_number(out, s.map[m].points[i].y());
      out += ']';
    }
    out += "]}";
  }
  out += "]}";
  return out;
}

Scenario scenario_from_json_line(const std::string & line, std::size_t line_number)
{
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error & e) {
    throw SchemaError("line " + std::to_string(line_number) + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw SchemaError("line " + std::to_string(line_number) + ": expected an object");
  const int version = field<int>(j, "version", line_number);
  if (version != kScenarioSchemaVersion) {
    throw SchemaError(
      "line " + std::to_string(line_number) + ": schema version " + std::to_string(version) + ", expected " +
      std::to_string(kScenarioSchemaVersion));
  }
  Scenario s;
  s.scenario_id = field<std::string>(j, "scenario_id", line_number);
  s.target_id = field<std::string>(j, "target_id", line_number);
  try {
    for (const auto & ja : j.at("agents")) {
      AgentTrack a;
      a.id = ja.at("id").get<std::string>();
      for (const auto & js : ja.at("states")) {
        if (js.size() != 5) throw SchemaError("state must have 5 entries");
        a.states.push_back({js[0].get<double>(), js[1].get<double>(), js[2].get<double>(),
                            js[3].get<double>(), js[4].get<int>() != 0});
      }
      s.agents.push_back(std::move(a));
    }
    for (const auto & jm : j.at("map")) {
      MapPolyline p;
      p.id = jm.at("id").get<std::string>();
      p.kind = polyline_kind_from_string(jm.at("kind").get<std::string>());
      for (const auto & jp : jm.at("points")) {
        if (jp.size() != 2) throw SchemaError("point must have 2 entries");
        p.points.emplace_back(jp[0].get<double>(), jp[1].get<double>());
      }
      s.map.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception & e) {
    throw SchemaError("line " + std::to_string(line_number) + ": " + e.what());
  } catch (const SchemaError & e) {
    throw SchemaError("line " + std::to_string(line_number) + ": " + e.what());
  }
  try {
    validate(s);
  } catch (const SchemaError & e) {
    throw SchemaError("line " + std::to_string(line_number) + ": " + e.what());
  }
  return s;
}

void save_jsonl(const std::vector<Scenario> & corpus, const std::string & path)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto & s : corpus) out << to_jsonl_line(s) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

std::vector<Scenario> load_jsonl(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Scenario> corpus;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    corpus.push_back(scenario_from_json_line(line, number));
  }
  return corpus;
}

}  // namespace flowcast
