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

#include "cli.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>

namespace flowcast::cli
{
namespace
{

constexpr double kPanel = 480.0;
constexpr double kMargin = 24.0;
constexpr double kTitle = 28.0;

struct Bounds
{
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
  double x1 = -x0, y1 = -x0;

  void add(const Eigen::Vector2d & p)
  {
    x0 = std::min(x0, p.x());
    x1 = std::max(x1, p.x());
    y0 = std::min(y0, p.y());
    y1 = std::max(y1, p.y());
  }
};

// World metres to panel pixels with equal axes and y pointing up.
struct View
{
  double offset_x, cx, cy, scale;

  std::string point(const Eigen::Vector2d & p) const
  {
    const double px = offset_x + kPanel / 2 + (p.x() - cx) * scale;
    const double py = kTitle + kPanel / 2 - (p.y() - cy) * scale;
    return fmt::format("{:.2f},{:.2f}", px, py);
  }
};

template <typename Points>
std::string polyline(const View & v, const Points & pts, const std::string & attrs)
{
  std::string out = "<polyline fill=\"none\" " + attrs + " points=\"";
  bool first = true;
  for (const auto & p : pts) {
    if (!first) out += ' ';
    out += v.point(p);
    first = false;
  }
  return out + "\"/>\n";
}

std::vector<Eigen::Vector2d> rows(const Trajectory<double> & t)
{
  std::vector<Eigen::Vector2d> out;
  for (Index i = 0; i < t.rows(); ++i) out.emplace_back(t(i, 0), t(i, 1));
  return out;
}

std::vector<Eigen::Vector2d> history(const AgentTrack & a)
{
  std::vector<Eigen::Vector2d> out;
  for (Index f = 0; f < kHistoryFrames; ++f) {
    const auto & s = a.states[static_cast<std::size_t>(f)];
    if (s.valid) out.emplace_back(s.x, s.y);
  }
  return out;
}

std::string escape(const std::string & text)
{
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(
  const Scenario & scenario, const std::vector<PredictionRecord> & panels, const std::vector<std::string> & titles)
{
  const auto scene = normalize(scenario).scene;
  const auto & target = scene.target();
  std::vector<Eigen::Vector2d> truth;
  for (Index f = kHistoryFrames; f < kTotalFrames; ++f) {
    const auto & s = target.states[static_cast<std::size_t>(f)];
    if (s.valid) truth.emplace_back(s.x, s.y);
  }

  // Frame the target, its ground truth, and every prediction; the map and
  // other agents are clipped by the panel.
  Bounds b;
  for (const auto & p : history(target)) b.add(p);
  for (const auto & p : truth) b.add(p);
  for (const auto & panel : panels) {
    for (const auto & t : panel.trajectories) {
      for (const auto & p : rows(t)) b.add(p);
    }
  }
  if (!std::isfinite(b.x0)) b.add(Eigen::Vector2d::Zero());
  const double span = std::max({b.x1 - b.x0, b.y1 - b.y0, 10.0});
  const double scale = (kPanel - 2 * kMargin) / span;

  const double width = kPanel * static_cast<double>(panels.size());
  std::string svg = fmt::format(
    "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" height=\"{1:.0f}\" viewBox=\"0 0 {0:.0f} {1:.0f}\">\n",
    width, kPanel + kTitle);
  svg += fmt::format("<rect width=\"{:.0f}\" height=\"{:.0f}\" fill=\"white\"/>\n", width, kPanel + kTitle);

  for (std::size_t i = 0; i < panels.size(); ++i) {
    const View v{kPanel * static_cast<double>(i), (b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2, scale};
    const auto x = v.offset_x;
    svg += fmt::format("<g class=\"panel\" id=\"panel-{}\">\n", i);
    svg += fmt::format(
      "<clipPath id=\"clip-{0}\"><rect x=\"{1:.0f}\" y=\"{2:.0f}\" width=\"{3:.0f}\" height=\"{3:.0f}\"/></clipPath>\n", i, x,
      kTitle, kPanel);
    svg += fmt::format(
      "<text x=\"{:.0f}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
      x + kPanel / 2, escape(i < titles.size() ? titles[i] : ""));
    svg += fmt::format("<g clip-path=\"url(#clip-{})\">\n", i);
    for (const auto & lane : scene.map) svg += polyline(v, lane.points, "stroke=\"lightgray\" stroke-width=\"1\"");
    for (const auto & agent : scene.agents) {
      const auto h = history(agent);
      if (h.size() < 2) continue;
      const bool is_target = agent.id == scene.target_id;
      svg += polyline(
        v, h, is_target ? "class=\"history\" stroke=\"blue\" stroke-width=\"2.5\""
                        : "class=\"history\" stroke=\"blue\" stroke-width=\"1\" stroke-opacity=\"0.5\"");
    }
    const auto & panel = panels[i];
    for (std::size_t k = 0; k < panel.trajectories.size(); ++k) {
      const auto pts = rows(panel.trajectories[k]);
      const double p = panel.scores[static_cast<Index>(k)];
      svg += polyline(v, pts, fmt::format("class=\"prediction\" stroke=\"red\" stroke-width=\"{:.2f}\"", 1.0 + 3.0 * p));
      const auto end = v.point(pts.back());
      const auto comma = end.find(',');
      svg += fmt::format(
        "<circle class=\"prediction\" cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"red\"/>\n<text x=\"{}\" y=\"{}\" "
        "font-family=\"sans-serif\" font-size=\"10\" fill=\"red\">{:.2f}</text>\n",
        end.substr(0, comma), end.substr(comma + 1), end.substr(0, comma), end.substr(comma + 1), p);
    }
    if (truth.size() >= 2) svg += polyline(v, truth, "class=\"ground-truth\" stroke=\"green\" stroke-width=\"2.5\"");
    svg += "</g>\n</g>\n";
  }
  return svg + "</svg>\n";
}

}  // namespace flowcast::cli
