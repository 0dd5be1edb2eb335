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

#ifndef POISONLAB_CONFIG_HPP_
#define POISONLAB_CONFIG_HPP_

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "poisonlab/harness.hpp"
#include "poisonlab/util.hpp"

namespace poisonlab {
namespace config {

// ---------------------------------------------------------------------------
// Strict INI: [section] blocks of key = value lines, '#' or ';' comments.
// Unknown sections, unknown keys, and duplicate keys are rejected before any
// work begins.
// ---------------------------------------------------------------------------

using SectionMap = std::map<std::string, std::map<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline const std::set<std::string>& allowed_keys(const std::string& section) {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"dataset",
       {"kind", "seed", "per_class", "width", "height", "channels", "classes", "val_fraction",
        "path"}},
      {"model", {"kind", "widths"}},
      {"attack",
       {"kind", "epsilon", "budget", "poison_fraction", "patch_side", "placement", "steps",
        "step_size", "restarts", "adaptive", "trigger_seed", "target_class", "base_class",
        "adversarial_label"}},
      {"defense", {"kind", "k", "alpha", "m", "patch_side", "maxup_base", "clip", "sigma"}},
      {"schedule", {"epochs", "batch", "lr", "momentum", "trials", "master_seed", "parallelism"}},
      {"grid", {"defenses", "attacks"}},
  };
  const auto it = schema.find(section);
  if (it == schema.end()) {
    throw std::invalid_argument("config: unknown section [" + section + "]");
  }
  return it->second;
}

}  // namespace detail

inline SectionMap parse_ini(std::istream& is) {
  SectionMap out;
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": malformed section header");
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      detail::allowed_keys(section);  // rejects unknown sections
      out[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    if (section.empty()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": key outside any section");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!detail::allowed_keys(section).count(key)) {
      throw std::invalid_argument("config: unknown key '" + key + "' in section [" + section + "]");
    }
    if (out[section].count(key)) {
      throw std::invalid_argument("config: duplicate key '" + key + "' in section [" + section +
                                  "]");
    }
    out[section][key] = value;
  }
  return out;
}

inline SectionMap parse_ini_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  return parse_ini(is);
}

// ---------------------------------------------------------------------------
// RunConfig: the validated experiment description plus the grid axes.
// ---------------------------------------------------------------------------

struct RunConfig {
  harness::ExperimentConfig base;
  std::vector<std::string> grid_defenses;  // pipe-separated in the file
  std::vector<std::string> grid_attacks;
  std::string canonical_text;  // normalized config, hashed into outputs

  std::string fingerprint() const { return hex64(fnv1a64(canonical_text)); }

  /// Grid cells: defense x attack overrides applied to the base config.
  std::vector<harness::ExperimentConfig> cells() const {
    std::vector<std::string> defenses =
        grid_defenses.empty() ? std::vector<std::string>{base.schedule.defense.to_string()}
                              : grid_defenses;
    std::vector<std::string> attacks =
        grid_attacks.empty() ? std::vector<std::string>{base.attack.name()} : grid_attacks;
    std::vector<harness::ExperimentConfig> out;
    for (const std::string& atk : attacks) {
      for (const std::string& def : defenses) {
        harness::ExperimentConfig c = base;
        c.schedule.defense = train::DefensePolicy::parse(def);
        std::string kind = atk;
        c.attack.adaptive = false;
        if (kind.size() > 9 && kind.substr(kind.size() - 9) == "-adaptive") {
          c.attack.adaptive = true;
          kind = kind.substr(0, kind.size() - 9);
        }
        if (kind == "none") c.attack.kind = harness::AttackSpec::Kind::kNone;
        else if (kind == "backdoor") c.attack.kind = harness::AttackSpec::Kind::kBackdoor;
        else if (kind == "targeted") c.attack.kind = harness::AttackSpec::Kind::kTargeted;
        else throw std::invalid_argument("config: unknown attack kind '" + kind + "' in grid");
        // straight-through DP engages exactly for adaptive attacks on DP victims
        c.attack.craft.dp_straight_through = false;
        c.validate();
        out.push_back(std::move(c));
      }
    }
    return out;
  }
};

namespace detail {

inline std::string get(const SectionMap& m, const std::string& sec, const std::string& key,
                       const std::string& fallback) {
  const auto s = m.find(sec);
  if (s == m.end()) return fallback;
  const auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: expected boolean, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

inline std::vector<std::string> parse_pipe_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, '|')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

}  // namespace detail

inline RunConfig build_run_config(const SectionMap& m) {
  using detail::get;
  RunConfig rc;
  harness::ExperimentConfig& cfg = rc.base;

  // dataset
  {
    const std::string kind = get(m, "dataset", "kind", "shapeset");
    if (kind == "shapeset") cfg.dataset.kind = harness::DatasetSpec::Kind::kShapeset;
    else if (kind == "cifar10") cfg.dataset.kind = harness::DatasetSpec::Kind::kCifar10;
    else if (kind == "file") cfg.dataset.kind = harness::DatasetSpec::Kind::kFile;
    else throw std::invalid_argument("config: unknown dataset kind '" + kind + "'");
    cfg.dataset.seed = std::stoull(get(m, "dataset", "seed", "7"));
    cfg.dataset.per_class = std::stoi(get(m, "dataset", "per_class", "200"));
    cfg.dataset.w = std::stoi(get(m, "dataset", "width", "32"));
    cfg.dataset.h = std::stoi(get(m, "dataset", "height", "32"));
    cfg.dataset.c = std::stoi(get(m, "dataset", "channels", "3"));
    cfg.dataset.class_filter = detail::parse_int_list(get(m, "dataset", "classes", ""));
    cfg.dataset.val_fraction = std::stod(get(m, "dataset", "val_fraction", "0.2"));
    cfg.dataset.path = get(m, "dataset", "path", "");
    if (cfg.dataset.kind != harness::DatasetSpec::Kind::kShapeset && cfg.dataset.path.empty()) {
      throw std::invalid_argument("config: dataset kind '" + kind + "' requires a path");
    }
  }

  // model
  {
    std::string kind = get(m, "model", "kind", "smallconvnet");
    if (kind == "mlp") {
      const std::string widths = get(m, "model", "widths", "48");
      kind = "mlp:" + widths;
    }
    cfg.model = kind;
  }

  // attack
  {
    const std::string kind = get(m, "attack", "kind", "none");
    if (kind == "none") cfg.attack.kind = harness::AttackSpec::Kind::kNone;
    else if (kind == "backdoor") cfg.attack.kind = harness::AttackSpec::Kind::kBackdoor;
    else if (kind == "targeted") cfg.attack.kind = harness::AttackSpec::Kind::kTargeted;
    else throw std::invalid_argument("config: unknown attack kind '" + kind + "'");
    cfg.attack.threat.epsilon = std::stod(get(m, "attack", "epsilon", "0.06274509803921569"));
    cfg.attack.threat.budget = std::stod(get(m, "attack", "budget", "0.01"));
    cfg.attack.threat.poison_fraction_within_class =
        std::stod(get(m, "attack", "poison_fraction", "1.0"));
    cfg.attack.threat.patch_side = std::stoi(get(m, "attack", "patch_side", "4"));
    cfg.attack.threat.target_class = std::stoi(get(m, "attack", "target_class", "-1"));
    cfg.attack.threat.base_class = std::stoi(get(m, "attack", "base_class", "-1"));
    cfg.attack.threat.adversarial_label = std::stoi(get(m, "attack", "adversarial_label", "-1"));
    const std::string placement = get(m, "attack", "placement", "corner");
    if (placement == "corner") {
      cfg.attack.placement = attack::BackdoorTrigger::Placement::kFixedCorner;
    } else if (placement == "random") {
      cfg.attack.placement = attack::BackdoorTrigger::Placement::kRandomPerImage;
    } else {
      throw std::invalid_argument("config: unknown placement '" + placement + "'");
    }
    cfg.attack.craft.steps = std::stoi(get(m, "attack", "steps", "250"));
    cfg.attack.craft.step_size =
        std::stod(get(m, "attack", "step_size", format_double(cfg.attack.threat.epsilon / 10.0)));
    cfg.attack.craft.restarts = std::stoi(get(m, "attack", "restarts", "1"));
    cfg.attack.adaptive = detail::parse_bool(get(m, "attack", "adaptive", "false"));
    cfg.attack.trigger_seed = std::stoull(get(m, "attack", "trigger_seed", "40413"));
  }

  // defense
  {
    const std::string kind = get(m, "defense", "kind", "standard");
    std::string spec = kind;
    if (kind == "mixup") {
      spec += "(" + get(m, "defense", "k", "2") + "," + get(m, "defense", "alpha", "1") + ")";
    } else if (kind == "cutout") {
      spec += "(" + get(m, "defense", "patch_side", "8") + ")";
    } else if (kind == "maxup") {
      spec += "(" + get(m, "defense", "m", "4") + "," + get(m, "defense", "maxup_base", "cutout") +
              ")";
    } else if (kind == "dpsgd") {
      spec += "(" + get(m, "defense", "clip", "1") + "," + get(m, "defense", "sigma", "0") + ")";
    }
    cfg.schedule.defense = train::DefensePolicy::parse(spec);
    if (cfg.schedule.defense.kind == train::DefensePolicy::Kind::kCutout) {
      cfg.schedule.defense.augment.cutout_side = std::stoi(get(m, "defense", "patch_side", "8"));
    }
  }

  // schedule
  {
    cfg.schedule.epochs = std::stoi(get(m, "schedule", "epochs", "10"));
    cfg.schedule.batch = std::stoi(get(m, "schedule", "batch", "32"));
    cfg.schedule.lr = std::stod(get(m, "schedule", "lr", "0.05"));
    cfg.schedule.momentum = std::stod(get(m, "schedule", "momentum", "0.9"));
    cfg.trials = std::stoi(get(m, "schedule", "trials", "1"));
    cfg.master_seed = std::stoull(get(m, "schedule", "master_seed", "1"));
    cfg.parallelism = std::stoi(get(m, "schedule", "parallelism", "1"));
  }

  rc.grid_defenses = detail::parse_pipe_list(get(m, "grid", "defenses", ""));
  rc.grid_attacks = detail::parse_pipe_list(get(m, "grid", "attacks", ""));

  // canonical text: sections and keys in sorted order
  std::string canon;
  for (const auto& [sec, kv] : m) {
    canon += "[" + sec + "]\n";
    for (const auto& [k, v] : kv) canon += k + "=" + v + "\n";
  }
  rc.canonical_text = canon;

  cfg.validate();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  return build_run_config(parse_ini_file(path));
}

}  // namespace config
}  // namespace poisonlab

#endif  // POISONLAB_CONFIG_HPP_
