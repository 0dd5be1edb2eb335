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

#ifndef POISONLAB_ATTACK_HPP_
#define POISONLAB_ATTACK_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "poisonlab/dataset.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/rng.hpp"
#include "poisonlab/trainer.hpp"
#include "poisonlab/util.hpp"

namespace poisonlab {
namespace attack {

// ---------------------------------------------------------------------------
// Threat model
// ---------------------------------------------------------------------------

struct ThreatModel {
  enum class Norm { kPatchL0, kLinf };
  Norm norm = Norm::kLinf;
  double epsilon = 16.0 / 255.0;               // l_inf bound
  double budget = 0.01;                        // poison fraction P/N
  double poison_fraction_within_class = 1.0;   // backdoor: fraction of the target class
  int target_class = -1;
  int base_class = -1;
  int adversarial_label = -1;
  int patch_side = 4;

  void validate() const {
    if (!(budget > 0.0 && budget <= 1.0)) {
      throw std::invalid_argument("threat: budget must lie in (0,1]");
    }
    // epsilon == 0 is the degenerate ball: projection pins every delta to 0
    if (norm == Norm::kLinf && epsilon < 0.0) {
      throw std::invalid_argument("threat: linf mode requires epsilon >= 0");
    }
    if (poison_fraction_within_class < 0.0 || poison_fraction_within_class > 1.0) {
      throw std::invalid_argument("threat: within-class fraction must lie in [0,1]");
    }
    if (target_class >= 0 && target_class == base_class) {
      throw std::invalid_argument("threat: target class must differ from base class");
    }
    if (patch_side < 0) throw std::invalid_argument("threat: patch side must be nonnegative");
  }

  nlohmann::json to_json() const {
    return {{"norm", norm == Norm::kLinf ? "linf" : "patch_l0"},
            {"epsilon", epsilon},
            {"budget", budget},
            {"poison_fraction_within_class", poison_fraction_within_class},
            {"target_class", target_class},
            {"base_class", base_class},
            {"adversarial_label", adversarial_label},
            {"patch_side", patch_side}};
  }

  static ThreatModel from_json(const nlohmann::json& j) {
    ThreatModel t;
    t.norm = j.at("norm") == "linf" ? Norm::kLinf : Norm::kPatchL0;
    t.epsilon = j.at("epsilon");
    t.budget = j.at("budget");
    t.poison_fraction_within_class = j.at("poison_fraction_within_class");
    t.target_class = j.at("target_class");
    t.base_class = j.at("base_class");
    t.adversarial_label = j.at("adversarial_label");
    t.patch_side = j.at("patch_side");
    return t;
  }
};

// ---------------------------------------------------------------------------
// Poison record
// ---------------------------------------------------------------------------

/// Map from training index to additive perturbation, plus the constraint set
/// it was crafted under. validate() re-derives every invariant against the
/// clean dataset.
struct PoisonDelta {
  std::map<std::size_t, Tensor> entries;
  ThreatModel threat;

  void validate(const data::Dataset& clean) const {
    threat.validate();
    if (threat.norm == ThreatModel::Norm::kLinf) {
      const std::size_t cap =
          static_cast<std::size_t>(std::floor(threat.budget * static_cast<double>(clean.size())));
      if (entries.size() > cap) {
        throw std::runtime_error("poison: " + std::to_string(entries.size()) +
                                 " entries exceed budget cap " + std::to_string(cap));
      }
    }
    for (const auto& [idx, delta] : entries) {
      if (idx >= clean.size()) throw std::runtime_error("poison: index out of range");
      const Tensor& x = clean.examples[idx].image;
      if (!delta.same_shape(x)) throw std::runtime_error("poison: delta shape mismatch");
      std::size_t nonzero = 0;
      for (std::size_t i = 0; i < delta.numel(); ++i) {
        const double d = delta[i];
        if (d != 0.0) ++nonzero;
        if (threat.norm == ThreatModel::Norm::kLinf && std::abs(d) > threat.epsilon + 1e-12) {
          throw std::runtime_error("poison: linf bound violated at index " + std::to_string(idx));
        }
        const double v = x[i] + d;
        if (v < -1e-12 || v > 1.0 + 1e-12) {
          throw std::runtime_error("poison: pixel out of [0,1] at index " + std::to_string(idx));
        }
      }
      if (threat.norm == ThreatModel::Norm::kPatchL0 &&
          nonzero > static_cast<std::size_t>(threat.patch_side) * threat.patch_side * clean.c) {
        throw std::runtime_error("poison: patch l0 bound violated at index " + std::to_string(idx));
      }
    }
  }

  double max_linf() const {
    double m = 0.0;
    for (const auto& [idx, delta] : entries) {
      (void)idx;
      for (double d : delta.data) m = std::max(m, std::abs(d));
    }
    return m;
  }
};

/// Clean dataset + delta record -> poisoned dataset (labels untouched).
inline data::Dataset apply_delta(const data::Dataset& clean, const PoisonDelta& delta) {
  data::Dataset out = clean;
  out.provenance += "/poisoned";
  for (const auto& [idx, d] : delta.entries) {
    Tensor& img = out.examples.at(idx).image;
    for (std::size_t i = 0; i < img.numel(); ++i) {
      img[i] = std::clamp(img[i] + d[i], 0.0, 1.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backdoor trigger
// ---------------------------------------------------------------------------

struct BackdoorTrigger {
  Tensor patch;  // [side, side, c], values in [0,1]
  enum class Placement { kFixedCorner, kRandomPerImage };
  Placement placement = Placement::kFixedCorner;

  int side() const { return patch.shape.empty() ? 0 : patch.dim(0); }

  /// Fixed seeded random RGB pattern, saturated per channel so the trigger
  /// stands out against natural pixel statistics.
  static BackdoorTrigger seeded(int side, int channels, std::uint64_t seed) {
    BackdoorTrigger t;
    t.patch = Tensor({side, side, channels});
    Rng rng(child_seed(seed, 0xba5eba11));
    for (auto& v : t.patch.data) v = static_cast<double>(rng.uniform_int(2));
    return t;
  }
};

namespace detail {
inline void stamp_patch(Tensor& image, const BackdoorTrigger& trigger, int top, int left, int c) {
  const int side = trigger.side();
  const int w = image.dim(1);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        image[(static_cast<std::size_t>(top + y) * w + (left + x)) * c + ch] =
            trigger.patch[(static_cast<std::size_t>(y) * side + x) * c + ch];
      }
    }
  }
}

inline std::pair<int, int> patch_origin(const BackdoorTrigger& trigger, int h, int w, Rng* rng) {
  const int side = trigger.side();
  if (trigger.placement == BackdoorTrigger::Placement::kRandomPerImage && rng) {
    return {static_cast<int>(rng->uniform_int(static_cast<std::uint64_t>(h - side + 1))),
            static_cast<int>(rng->uniform_int(static_cast<std::uint64_t>(w - side + 1)))};
  }
  return {h - side, w - side};  // bottom-right corner
}
}  // namespace detail

/// Stamp the trigger onto the configured fraction of target-class training
/// images. Labels are unchanged; the delta record is returned for audit.
inline std::pair<data::Dataset, PoisonDelta> apply_trigger(const data::Dataset& train,
                                                           const BackdoorTrigger& trigger,
                                                           const ThreatModel& threat, Rng& rng) {
  threat.validate();
  if (trigger.side() > std::min(train.h, train.w)) {
    throw std::invalid_argument("apply_trigger: patch larger than image");
  }
  std::vector<std::size_t> cls = data::class_indices(train, threat.target_class);
  if (cls.empty()) throw std::invalid_argument("apply_trigger: target class is empty");
  const std::size_t count = static_cast<std::size_t>(
      std::lround(threat.poison_fraction_within_class * static_cast<double>(cls.size())));
  if (count > cls.size()) {
    throw std::invalid_argument("apply_trigger: fraction exceeds available class size");
  }
  std::vector<std::size_t> chosen_pos = rng.sample_without_replacement(cls.size(), count);

  data::Dataset poisoned = train;
  poisoned.provenance += "/backdoor";
  PoisonDelta delta;
  delta.threat = threat;
  delta.threat.norm = ThreatModel::Norm::kPatchL0;
  delta.threat.patch_side = trigger.side();
  for (std::size_t pos : chosen_pos) {
    const std::size_t idx = cls[pos];
    Tensor& img = poisoned.examples[idx].image;
    const Tensor before = img;
    const auto [top, left] = detail::patch_origin(trigger, train.h, train.w, &rng);
    detail::stamp_patch(img, trigger, top, left, train.c);
    Tensor d(img.shape);
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = img[i] - before[i];
    delta.entries.emplace(idx, std::move(d));
  }
  return {std::move(poisoned), std::move(delta)};
}

/// Every base-class evaluation image gets the trigger; labels are kept for
/// bookkeeping.
inline data::Dataset patch_test_images(const data::Dataset& val, const BackdoorTrigger& trigger,
                                       int base_class, Rng* rng = nullptr) {
  std::vector<std::size_t> cls = data::class_indices(val, base_class);
  if (cls.empty()) throw std::invalid_argument("patch_test_images: base class is empty");
  data::Dataset out{val.classes, val.h, val.w, val.c, {}, val.provenance + "/patched"};
  for (std::size_t idx : cls) {
    data::Example e = val.examples[idx];
    const auto [top, left] = detail::patch_origin(trigger, val.h, val.w, rng);
    detail::stamp_patch(e.image, trigger, top, left, val.c);
    out.examples.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Targeted (gradient alignment) attack
// ---------------------------------------------------------------------------

struct TargetSpec {
  std::vector<data::Example> targets;  // (image, true label)
  std::vector<int> adversarial_labels;

  void validate() const {
    if (targets.empty() || targets.size() != adversarial_labels.size()) {
      throw std::invalid_argument("target spec: need one adversarial label per target");
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (adversarial_labels[i] == targets[i].label) {
        throw std::invalid_argument("target spec: adversarial label equals true label");
      }
    }
  }
};

/// 1 - cos(grad of the batch training loss, target_grad); in [0,2].
inline double alignment_loss(const nn::Model& model, const Tensor& batch, const Tensor& labels,
                             const std::vector<double>& target_grad) {
  return nn::alignment_loss(model, batch, labels, target_grad);
}

/// Gradient of the adversarial loss sum over the target set.
inline std::vector<double> target_gradient(const nn::Model& surrogate, const TargetSpec& spec) {
  spec.validate();
  const int k = surrogate.classes();
  const int t = static_cast<int>(spec.targets.size());
  Tensor batch({t, surrogate.input_h(), surrogate.input_w(), surrogate.input_c()});
  Tensor labels({t, k});
  const std::size_t stride = batch.numel() / static_cast<std::size_t>(t);
  for (int i = 0; i < t; ++i) {
    const Tensor& img = spec.targets[static_cast<std::size_t>(i)].image;
    std::copy(img.data.begin(), img.data.end(),
              batch.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
    labels[static_cast<std::size_t>(i) * k + spec.adversarial_labels[static_cast<std::size_t>(i)]] = 1.0;
  }
  nn::Graph g;
  nn::Model::Binding binding;
  const int x = g.leaf(batch, false);
  const int loss = nn::cross_entropy(g, surrogate.forward(g, x, &binding), labels);
  return nn::grad_params(g, loss, binding, surrogate.param_count());
}

struct CraftConfig {
  int steps = 250;
  double step_size = (16.0 / 255.0) / 10.0;  // defaults to epsilon/10
  int restarts = 1;
  // Straight-through DP adaptation: the alignment *value* sees the victim's
  // clipped-and-noised gradient dynamics; the delta gradient flows as if
  // clip/noise were identity.
  bool dp_straight_through = false;
  double dp_clip = std::numeric_limits<double>::infinity();
  double dp_sigma = 0.0;
};

struct CraftOutcome {
  PoisonDelta delta;
  std::vector<std::size_t> indices;       // poisoned training indices, draw order
  double initial_alignment = 0.0;         // at delta = 0
  double final_alignment = 0.0;           // of the returned delta
  std::vector<double> restart_finals;     // per restart
  std::string surrogate_fingerprint;
};

namespace detail {

inline double cosine_alignment(const std::vector<double>& g, const std::vector<double>& t) {
  double dot = 0, gg = 0, tt = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    dot += g[i] * t[i];
    gg += g[i] * g[i];
    tt += t[i] * t[i];
  }
  if (gg <= 0.0) throw std::runtime_error("alignment: training gradient is zero");
  if (tt <= 0.0) throw std::runtime_error("alignment: target gradient is zero");
  return 1.0 - dot / (std::sqrt(gg) * std::sqrt(tt));
}

/// Alignment value under the DP victim's dynamics: per-example clip, mean,
/// plus Gaussian noise from the crafting stream.
inline double dp_alignment_value(const nn::Model& model, const Tensor& batch, const Tensor& labels,
                                 const std::vector<double>& target, double clip, double sigma,
                                 Rng& rng) {
  std::vector<std::vector<double>> grads = train::per_example_grads(model, batch, labels);
  std::vector<double> avg(model.param_count(), 0.0);
  for (const auto& g : grads) {
    double sq = 0;
    for (double v : g) sq += v * v;
    const double scale =
        std::isinf(clip) ? 1.0 : std::min(1.0, clip / std::max(std::sqrt(sq), 1e-300));
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += g[i] * scale;
  }
  for (double& v : avg) v /= static_cast<double>(grads.size());
  if (sigma > 0.0 && std::isfinite(clip)) {
    const double stddev = sigma * clip / static_cast<double>(grads.size());
    for (double& v : avg) v += rng.normal(0.0, stddev);
  }
  return cosine_alignment(avg, target);
}

}  // namespace detail

/// Signed-gradient descent on the poison perturbations against the
/// alignment objective, projected onto the l_inf ball intersected with the
/// pixel box after every step. Keeps the best restart.
inline CraftOutcome craft_targeted(const nn::Model& surrogate, const data::Dataset& train_ds,
                                   const TargetSpec& spec, const ThreatModel& threat,
                                   const CraftConfig& cfg, Rng& rng) {
  threat.validate();
  spec.validate();
  if (threat.norm != ThreatModel::Norm::kLinf) {
    throw std::invalid_argument("craft_targeted: threat norm must be linf");
  }
  if (!surrogate.second_order_capable()) {
    throw std::runtime_error(
        "craft_targeted: surrogate has a conv layer without second-order support; use a "
        "dense-path model");
  }
  const std::size_t count =
      static_cast<std::size_t>(std::floor(threat.budget * static_cast<double>(train_ds.size())));
  if (count < 1) {
    throw std::invalid_argument("craft_targeted: budget*N < 1, nothing to poison");
  }
  const int adv = spec.adversarial_labels.front();
  std::vector<std::size_t> cls = data::class_indices(train_ds, adv);
  if (cls.size() < count) {
    throw std::invalid_argument("craft_targeted: adversarial-label class has only " +
                                std::to_string(cls.size()) + " images, need " +
                                std::to_string(count));
  }
  std::vector<std::size_t> chosen_pos = rng.sample_without_replacement(cls.size(), count);
  std::vector<std::size_t> indices;
  indices.reserve(count);
  for (std::size_t pos : chosen_pos) indices.push_back(cls[pos]);

  const int h = train_ds.h, w = train_ds.w, c = train_ds.c;
  const std::size_t stride = static_cast<std::size_t>(h) * w * c;
  Tensor clean({static_cast<int>(count), h, w, c});
  Tensor labels({static_cast<int>(count), train_ds.classes});
  for (std::size_t i = 0; i < count; ++i) {
    const data::Example& e = train_ds.examples[indices[i]];
    std::copy(e.image.data.begin(), e.image.data.end(),
              clean.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
    labels[i * static_cast<std::size_t>(train_ds.classes) + static_cast<std::size_t>(e.label)] = 1.0;
  }

  const std::vector<double> target = target_gradient(surrogate, spec);

  auto project = [&](Tensor& delta) {
    for (std::size_t i = 0; i < delta.numel(); ++i) {
      double d = std::clamp(delta[i], -threat.epsilon, threat.epsilon);
      d = std::clamp(clean[i] + d, 0.0, 1.0) - clean[i];
      delta[i] = d;
    }
  };
  auto poisoned_batch = [&](const Tensor& delta) {
    Tensor x = clean;
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += delta[i];
    return x;
  };
  // with no clipping and no noise the DP transform is the identity map
  const bool dp_active =
      cfg.dp_straight_through && (std::isfinite(cfg.dp_clip) || cfg.dp_sigma > 0.0);
  auto value_of = [&](const Tensor& delta) {
    const Tensor x = poisoned_batch(delta);
    if (dp_active) {
      return detail::dp_alignment_value(surrogate, x, labels, target, cfg.dp_clip, cfg.dp_sigma,
                                        rng);
    }
    return nn::alignment_loss(surrogate, x, labels, target);
  };

  CraftOutcome out;
  out.indices = indices;
  out.initial_alignment = value_of(Tensor(clean.shape));
  out.surrogate_fingerprint = hex64(fnv1a64(surrogate.params()));

  Tensor best_delta(clean.shape);
  double best_value = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < std::max(1, cfg.restarts); ++restart) {
    Tensor delta(clean.shape);
    if (restart > 0) {
      for (auto& d : delta.data) d = rng.uniform(-threat.epsilon, threat.epsilon);
      project(delta);
    }
    for (int step = 0; step < cfg.steps; ++step) {
      const Tensor x = poisoned_batch(delta);
      // delta gradient is the plain alignment gradient also under the DP
      // adaptation (straight-through)
      Tensor grad = nn::grad_of_alignment(surrogate, x, labels, target);
      for (std::size_t i = 0; i < delta.numel(); ++i) {
        const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
        delta[i] -= cfg.step_size * s;
      }
      project(delta);
    }
    const double value = value_of(delta);
    out.restart_finals.push_back(value);
    if (value < best_value) {
      best_value = value;
      best_delta = delta;
    }
  }
  out.final_alignment = best_value;

  out.delta.threat = threat;
  for (std::size_t i = 0; i < count; ++i) {
    Tensor d({h, w, c});
    for (std::size_t j = 0; j < stride; ++j) d[j] = best_delta[i * stride + j];
    out.delta.entries.emplace(indices[i], std::move(d));
  }
  out.delta.validate(train_ds);
  return out;
}

/// Clean surrogate trained with the victim's defense active, so crafted
/// poisons target an augmentation-invariant model.
inline std::pair<nn::Model, train::History> make_adaptive_surrogate(
    const data::Dataset& train_ds, const data::Dataset* val_ds, const std::string& model_spec,
    const train::TrainConfig& base_cfg, const train::DefensePolicy& victim_defense,
    std::uint64_t seed) {
  nn::Model model = nn::Model::from_spec(model_spec, train_ds.h, train_ds.w, train_ds.c,
                                         train_ds.classes);
  Rng init(child_seed(seed, 1));
  model.init_he(init);
  train::TrainConfig cfg = base_cfg;
  cfg.defense = victim_defense;
  Rng rng(child_seed(seed, 2));
  train::History hist = train::trainer_run(model, train_ds, val_ds, cfg, rng);
  return {std::move(model), std::move(hist)};
}

// ---------------------------------------------------------------------------
// Poison bundle container (JSON)
// ---------------------------------------------------------------------------

inline nlohmann::json bundle_to_json(const CraftOutcome& outcome, const data::Dataset& train_ds,
                                     std::uint64_t craft_seed, const std::string& config_fp,
                                     bool adaptive, bool dp_straight_through,
                                     const std::string& attack_kind = "targeted") {
  nlohmann::json j;
  j["format"] = "poisonlab.bundle/1";
  j["attack"] = attack_kind;
  j["threat"] = outcome.delta.threat.to_json();
  j["geometry"] = {{"h", train_ds.h}, {"w", train_ds.w}, {"c", train_ds.c}};
  j["seeds"] = {{"craft", craft_seed}};
  j["config_fingerprint"] = config_fp;
  j["surrogate_fingerprint"] = outcome.surrogate_fingerprint;
  j["adaptive"] = adaptive;
  j["dp_straight_through"] = dp_straight_through;
  j["initial_alignment"] = outcome.initial_alignment;
  j["final_alignment"] = outcome.final_alignment;
  j["restart_finals"] = outcome.restart_finals;
  j["draw_order"] = outcome.indices;
  // indices[i] corresponds to deltas[i]; both in ascending index order
  nlohmann::json indices = nlohmann::json::array();
  nlohmann::json deltas = nlohmann::json::array();
  for (const auto& [idx, d] : outcome.delta.entries) {
    indices.push_back(idx);
    deltas.push_back(d.data);
  }
  j["indices"] = std::move(indices);
  j["deltas"] = std::move(deltas);
  return j;
}

inline void save_bundle(const nlohmann::json& j, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("bundle: cannot open " + path);
  os << j.dump(2) << "\n";
}

/// Rebuild the PoisonDelta from a bundle file; the caller validates it
/// against the clean dataset.
inline std::pair<PoisonDelta, nlohmann::json> load_bundle(const std::string& path, int h, int w,
                                                          int c) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("bundle: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  if (j.at("format") != "poisonlab.bundle/1") {
    throw std::runtime_error("bundle: unknown format in " + path);
  }
  PoisonDelta delta;
  delta.threat = ThreatModel::from_json(j.at("threat"));
  const auto& indices = j.at("indices");
  const auto& deltas = j.at("deltas");
  if (indices.size() != deltas.size()) throw std::runtime_error("bundle: index/delta mismatch");
  // entries stored in ascending index order; pair them up accordingly
  std::vector<std::pair<std::size_t, std::vector<double>>> pairs;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    pairs.emplace_back(indices[i].get<std::size_t>(), deltas[i].get<std::vector<double>>());
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [idx, vec] : pairs) {
    delta.entries.emplace(idx, Tensor({h, w, c}, std::move(vec)));
  }
  return {std::move(delta), std::move(j)};
}

}  // namespace attack
}  // namespace poisonlab

#endif  // POISONLAB_ATTACK_HPP_
