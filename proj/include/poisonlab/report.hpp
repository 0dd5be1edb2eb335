// Copyright 2026 The poisonlab Authors
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

#ifndef POISONLAB_REPORT_HPP_
#define POISONLAB_REPORT_HPP_

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "poisonlab/harness.hpp"
#include "poisonlab/util.hpp"

namespace poisonlab {
namespace report {

// ---------------------------------------------------------------------------
// CSV: one row per (defense, attack) cell.
// Columns: defense,attack,trials,mean_poison_success,mean_val_accuracy
// ---------------------------------------------------------------------------

inline std::string csv_string(const std::vector<harness::ExperimentReport>& cells) {
  std::string out = "defense,attack,trials,mean_poison_success,mean_val_accuracy\n";
  for (const auto& cell : cells) {
    int completed = 0;
    for (const auto& t : cell.trials) completed += t.aborted ? 0 : 1;
    const std::string defense = cell.trials.empty() ? "" : cell.trials.front().defense;
    const std::string attack = cell.trials.empty() ? "" : cell.trials.front().attack;
    out += defense + "," + attack + "," + std::to_string(completed) + "," +
           format_double(cell.mean_success()) + "," + format_double(cell.mean_val_acc()) + "\n";
  }
  return out;
}

inline void write_csv(const std::vector<harness::ExperimentReport>& cells,
                      const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("report: cannot open " + path);
  os << csv_string(cells);
}

// ---------------------------------------------------------------------------
// JSON: full per-trial detail.
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const std::vector<harness::ExperimentReport>& cells) {
  nlohmann::json j;
  j["format"] = "poisonlab.report/1";
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& cell : cells) {
    nlohmann::json c;
    c["name"] = cell.name;
    c["config_fingerprint"] = cell.config_fingerprint;
    c["n_trials"] = cell.n_trials;
    c["partial"] = cell.partial;
    c["mean_poison_success"] = cell.mean_success();
    c["mean_val_accuracy"] = cell.mean_val_acc();
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : cell.trials) {
      nlohmann::json tj;
      tj["trial"] = t.trial;
      tj["trial_seed"] = t.trial_seed;
      tj["poison_success"] = t.poison_success;
      tj["clean_val_acc"] = t.clean_val_acc;
      tj["attack"] = t.attack;
      tj["defense"] = t.defense;
      tj["target_class"] = t.target_class;
      tj["base_class"] = t.base_class;
      tj["adversarial_label"] = t.adversarial_label;
      if (!std::isnan(t.final_alignment)) tj["final_alignment"] = t.final_alignment;
      tj["aborted"] = t.aborted;
      if (t.aborted) tj["abort_reason"] = t.abort_reason;
      trials.push_back(std::move(tj));
    }
    c["trials"] = std::move(trials);
    arr.push_back(std::move(c));
  }
  j["cells"] = std::move(arr);
  return j;
}

inline void write_json(const std::vector<harness::ExperimentReport>& cells,
                       const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("report: cannot open " + path);
  os << to_json(cells).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// SVG scatter: x = clean validation accuracy, y = poison success, one point
// per cell. Both axes are the fixed linear range [0,1].
// ---------------------------------------------------------------------------

inline constexpr double kSvgWidth = 640, kSvgHeight = 480;
inline constexpr double kSvgLeft = 70, kSvgRight = 20, kSvgTop = 20, kSvgBottom = 60;

/// The declared axis mapping; the coordinate oracle in the tests recomputes
/// points through this exact function.
inline std::pair<double, double> svg_point(double val_acc, double success) {
  const double plot_w = kSvgWidth - kSvgLeft - kSvgRight;
  const double plot_h = kSvgHeight - kSvgTop - kSvgBottom;
  return {kSvgLeft + val_acc * plot_w, kSvgTop + (1.0 - success) * plot_h};
}

inline std::string svg_string(const std::vector<harness::ExperimentReport>& cells,
                              const std::string& config_fingerprint) {
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
       "viewBox=\"0 0 640 480\">\n";
  s += "<!-- config_fingerprint: " + config_fingerprint + " -->\n";
  s += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  // axes
  const auto [x0, y0] = svg_point(0.0, 0.0);
  const auto [x1, y1] = svg_point(1.0, 1.0);
  s += "<line x1=\"" + format_double(x0) + "\" y1=\"" + format_double(y0) + "\" x2=\"" +
       format_double(x1) + "\" y2=\"" + format_double(y0) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + format_double(x0) + "\" y1=\"" + format_double(y0) + "\" x2=\"" +
       format_double(x0) + "\" y2=\"" + format_double(y1) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 10; i += 2) {
    const double v = i / 10.0;
    const auto [tx, ty] = svg_point(v, 0.0);
    const auto [lx, ly] = svg_point(0.0, v);
    s += "<text x=\"" + format_double(tx) + "\" y=\"" + format_double(y0 + 18) +
         "\" font-size=\"11\" text-anchor=\"middle\">" + format_double(v) + "</text>\n";
    s += "<text x=\"" + format_double(x0 - 8) + "\" y=\"" + format_double(ly + 4) +
         "\" font-size=\"11\" text-anchor=\"end\">" + format_double(v) + "</text>\n";
    (void)tx;
    (void)lx;
    (void)ty;
  }
  s += "<text x=\"" + format_double((x0 + x1) / 2) + "\" y=\"" + format_double(y0 + 40) +
       "\" font-size=\"13\" text-anchor=\"middle\">clean validation accuracy</text>\n";
  s += "<text x=\"16\" y=\"" + format_double((y0 + y1) / 2) +
       "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       format_double((y0 + y1) / 2) + ")\">poison success</text>\n";
  for (const auto& cell : cells) {
    const auto [cx, cy] = svg_point(cell.mean_val_acc(), cell.mean_success());
    s += "<circle cx=\"" + format_double(cx) + "\" cy=\"" + format_double(cy) +
         "\" r=\"5\" fill=\"steelblue\"><title>" + cell.name + "</title></circle>\n";
    s += "<text x=\"" + format_double(cx + 8) + "\" y=\"" + format_double(cy + 4) +
         "\" font-size=\"11\">" + cell.name + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

inline void write_svg(const std::vector<harness::ExperimentReport>& cells,
                      const std::string& config_fingerprint, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("report: cannot open " + path);
  os << svg_string(cells, config_fingerprint);
}

/// CSV + JSON + SVG with a shared prefix.
inline void emit_report(const std::vector<harness::ExperimentReport>& cells,
                        const std::string& config_fingerprint, const std::string& prefix) {
  write_csv(cells, prefix + ".csv");
  write_json(cells, prefix + ".json");
  write_svg(cells, config_fingerprint, prefix + ".svg");
}

}  // namespace report
}  // namespace poisonlab

#endif  // POISONLAB_REPORT_HPP_
