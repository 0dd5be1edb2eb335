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

#ifndef POISONLAB_HARNESS_HPP_
#define POISONLAB_HARNESS_HPP_

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "poisonlab/attack.hpp"
#include "poisonlab/cifar10.hpp"
#include "poisonlab/dataset.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/shapeset.hpp"
#include "poisonlab/trainer.hpp"
#include "poisonlab/util.hpp"

namespace poisonlab {
namespace harness {

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct DatasetSpec {
  enum class Kind { kShapeset, kCifar10, kFile };
  Kind kind = Kind::kShapeset;
  std::uint64_t seed = 7;
  int per_class = 200;
  int h = 32, w = 32, c = 3;
  std::vector<int> class_filter;  // optional subset (relabelled in order)
  double val_fraction = 0.2;
  std::string path;  // cifar10 directory or dataset container

  /// Deterministic (train, val) pair.
  std::pair<data::Dataset, data::Dataset> build() const {
    data::Dataset full;
    switch (kind) {
      case Kind::kShapeset: full = data::gen_shapeset(seed, per_class, h, w, c); break;
      case Kind::kCifar10: {
        auto [tr, te] = data::load_cifar10_dir(path);
        if (!class_filter.empty()) {
          return {data::subset_classes(tr, class_filter), data::subset_classes(te, class_filter)};
        }
        return {std::move(tr), std::move(te)};
      }
      case Kind::kFile: full = data::load_dataset(path); break;
    }
    if (!class_filter.empty()) full = data::subset_classes(full, class_filter);
    return data::split(full, val_fraction, seed);
  }

  std::string canonical() const {
    std::string s = "dataset{kind=";
    s += kind == Kind::kShapeset ? "shapeset" : (kind == Kind::kCifar10 ? "cifar10" : "file");
    s += ",seed=" + std::to_string(seed) + ",per_class=" + std::to_string(per_class);
    s += ",h=" + std::to_string(h) + ",w=" + std::to_string(w) + ",c=" + std::to_string(c);
    s += ",classes=";
    for (int k : class_filter) s += std::to_string(k) + ";";
    s += ",val_fraction=" + format_double(val_fraction) + ",path=" + path + "}";
    return s;
  }
};

struct AttackSpec {
  enum class Kind { kNone, kBackdoor, kTargeted };
  Kind kind = Kind::kNone;
  attack::ThreatModel threat;  // target/base/adv classes < 0 mean "draw per trial"
  attack::CraftConfig craft;
  bool adaptive = false;
  std::uint64_t trigger_seed = 40413;
  attack::BackdoorTrigger::Placement placement =
      attack::BackdoorTrigger::Placement::kFixedCorner;

  std::string name() const {
    std::string s = kind == Kind::kNone ? "none" : (kind == Kind::kBackdoor ? "backdoor" : "targeted");
    if (adaptive && kind != Kind::kNone) s += "-adaptive";
    return s;
  }

  std::string canonical() const {
    std::string s = "attack{kind=" + name();
    s += ",eps=" + format_double(threat.epsilon) + ",budget=" + format_double(threat.budget);
    s += ",frac=" + format_double(threat.poison_fraction_within_class);
    s += ",patch=" + std::to_string(threat.patch_side);
    s += ",steps=" + std::to_string(craft.steps) + ",step_size=" + format_double(craft.step_size);
    s += ",restarts=" + std::to_string(craft.restarts);
    s += ",trigger_seed=" + std::to_string(trigger_seed);
    s += ",placement=";
    s += placement == attack::BackdoorTrigger::Placement::kFixedCorner ? "corner" : "random";
    s += "}";
    return s;
  }
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::string model = "smallconvnet";
  AttackSpec attack;
  train::TrainConfig schedule;  // includes the victim DefensePolicy
  std::uint64_t master_seed = 1;
  int trials = 1;
  int parallelism = 1;

  void validate() const {
    schedule.validate();
    attack.threat.validate();
    if (trials < 1) throw std::invalid_argument("experiment: trials must be >= 1");
    if (parallelism < 1) throw std::invalid_argument("experiment: parallelism must be >= 1");
    if (attack.craft.dp_straight_through &&
        schedule.defense.kind != train::DefensePolicy::Kind::kDpsgd) {
      throw std::invalid_argument(
          "experiment: straight-through DP adaptation requires a DP-SGD victim defense");
    }
  }

  std::string canonical() const {
    std::string s = dataset.canonical() + attack.canonical();
    s += "model{" + model + "}";
    s += "schedule{epochs=" + std::to_string(schedule.epochs) +
         ",batch=" + std::to_string(schedule.batch) + ",lr=" + format_double(schedule.lr) +
         ",momentum=" + format_double(schedule.momentum) +
         ",defense=" + schedule.defense.to_string() + "}";
    s += "trials=" + std::to_string(trials) + ",master_seed=" + std::to_string(master_seed);
    // parallelism deliberately not part of the fingerprint: results must not
    // depend on it
    return s;
  }

  std::string fingerprint() const { return hex64(fnv1a64(canonical())); }
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Fraction of the patched base-class evaluation set classified as the
/// target class.
inline double eval_backdoor(const nn::Model& model, const data::Dataset& patched,
                            int target_class) {
  if (patched.size() == 0) throw std::invalid_argument("eval_backdoor: empty evaluation set");
  std::vector<int> pred = train::predict(model, patched);
  std::size_t hits = 0;
  for (int p : pred) hits += p == target_class ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// 1 iff the argmax prediction for the target image equals the adversarial label.
inline int eval_targeted(const nn::Model& model, const Tensor& target_image,
                         int adversarial_label) {
  Tensor batch({1, target_image.dim(0), target_image.dim(1), target_image.dim(2)},
               target_image.data);
  Tensor logits = model.logits(batch);
  int best = 0;
  for (int k = 1; k < model.classes(); ++k) {
    if (logits[static_cast<std::size_t>(k)] > logits[static_cast<std::size_t>(best)]) best = k;
  }
  return best == adversarial_label ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Trials
// ---------------------------------------------------------------------------

struct TrialResult {
  int trial = 0;
  std::uint64_t trial_seed = 0;
  double poison_success = 0.0;  // {0,1} for targeted, rate for backdoor
  double clean_val_acc = 0.0;
  std::string attack;
  std::string defense;
  int target_class = -1, base_class = -1, adversarial_label = -1;
  double final_alignment = std::numeric_limits<double>::quiet_NaN();
  bool aborted = false;
  std::string abort_reason;
};

struct ExperimentReport {
  std::string name;
  std::string config_fingerprint;
  int n_trials = 0;
  bool partial = false;
  std::vector<TrialResult> trials;

  double mean_success() const {
    double s = 0;
    int n = 0;
    for (const auto& t : trials) {
      if (t.aborted) continue;
      s += t.poison_success;
      ++n;
    }
    return n ? s / n : 0.0;
  }
  double mean_val_acc() const {
    double s = 0;
    int n = 0;
    for (const auto& t : trials) {
      if (t.aborted) continue;
      s += t.clean_val_acc;
      ++n;
    }
    return n ? s / n : 0.0;
  }
};

namespace detail {

// Sub-stream roles hung off the trial seed. Values are arbitrary but fixed:
// results must never depend on scheduling, only on (master seed, trial).
enum : std::uint64_t {
  kRoleClassPick = 0,
  kRoleTriggerSelect = 1,
  kRoleSurrogate = 2,
  kRoleCraft = 4,
  kRoleVictimInit = 5,
  kRoleVictimTrain = 6,
  kRoleTargetPick = 7,
  kRoleEvalPlacement = 8,
};

inline nn::Model fresh_model(const ExperimentConfig& cfg, const data::Dataset& ds,
                             std::uint64_t seed) {
  nn::Model m = nn::Model::from_spec(cfg.model, ds.h, ds.w, ds.c, ds.classes);
  Rng init(seed);
  m.init_he(init);
  return m;
}

}  // namespace detail

/// One complete attack/defense trial. Everything stochastic flows from
/// child streams of (master seed, trial index).
inline TrialResult run_trial(const ExperimentConfig& cfg, const data::Dataset& train_ds,
                             const data::Dataset& val_ds, int trial) {
  TrialResult res;
  res.trial = trial;
  res.trial_seed = child_seed(cfg.master_seed, static_cast<std::uint64_t>(trial));
  res.attack = cfg.attack.name();
  res.defense = cfg.schedule.defense.to_string();
  const std::uint64_t ts = res.trial_seed;

  Rng pick(child_seed(ts, detail::kRoleClassPick));
  const int classes = train_ds.classes;

  if (cfg.attack.kind == AttackSpec::Kind::kBackdoor) {
    attack::ThreatModel threat = cfg.attack.threat;
    threat.norm = attack::ThreatModel::Norm::kPatchL0;
    if (threat.target_class < 0) {
      threat.target_class = static_cast<int>(pick.uniform_int(classes));
    }
    if (threat.base_class < 0) {
      do {
        threat.base_class = static_cast<int>(pick.uniform_int(classes));
      } while (threat.base_class == threat.target_class);
    }
    res.target_class = threat.target_class;
    res.base_class = threat.base_class;

    attack::BackdoorTrigger trigger =
        attack::BackdoorTrigger::seeded(threat.patch_side, train_ds.c, cfg.attack.trigger_seed);
    trigger.placement = cfg.attack.placement;
    Rng select(child_seed(ts, detail::kRoleTriggerSelect));
    auto [poisoned, delta] = attack::apply_trigger(train_ds, trigger, threat, select);

    nn::Model victim = detail::fresh_model(cfg, train_ds, child_seed(ts, detail::kRoleVictimInit));
    Rng vt(child_seed(ts, detail::kRoleVictimTrain));
    train::trainer_run(victim, poisoned, nullptr, cfg.schedule, vt);

    res.clean_val_acc = train::evaluate_accuracy(victim, val_ds);
    Rng place(child_seed(ts, detail::kRoleEvalPlacement));
    data::Dataset patched =
        attack::patch_test_images(val_ds, trigger, threat.base_class, &place);
    res.poison_success = eval_backdoor(victim, patched, threat.target_class);
    return res;
  }

  if (cfg.attack.kind == AttackSpec::Kind::kTargeted) {
    attack::ThreatModel threat = cfg.attack.threat;
    threat.norm = attack::ThreatModel::Norm::kLinf;
    int base = threat.base_class;
    if (base < 0) base = static_cast<int>(pick.uniform_int(classes));
    int adv = threat.adversarial_label;
    if (adv < 0) {
      do {
        adv = static_cast<int>(pick.uniform_int(classes));
      } while (adv == base);
    }
    res.base_class = base;
    res.adversarial_label = adv;
    threat.base_class = base;
    threat.adversarial_label = adv;

    // surrogate: clean data, the victim's augmentation when adaptive,
    // otherwise the baseline flips/crops
    train::DefensePolicy surrogate_defense = train::DefensePolicy::parse("standard");
    attack::CraftConfig craft = cfg.attack.craft;
    if (cfg.attack.adaptive) {
      if (cfg.schedule.defense.kind == train::DefensePolicy::Kind::kDpsgd) {
        craft.dp_straight_through = true;
        craft.dp_clip = cfg.schedule.defense.clip;
        craft.dp_sigma = cfg.schedule.defense.sigma;
      } else {
        surrogate_defense = cfg.schedule.defense;
      }
    }
    auto [surrogate, surrogate_hist] = attack::make_adaptive_surrogate(
        train_ds, nullptr, cfg.model, cfg.schedule, surrogate_defense,
        child_seed(ts, detail::kRoleSurrogate));

    // target: a base-class validation image the surrogate classifies
    // correctly (falls back to any base-class image)
    Rng tp(child_seed(ts, detail::kRoleTargetPick));
    std::vector<std::size_t> base_idx = data::class_indices(val_ds, base);
    if (base_idx.empty()) throw std::runtime_error("trial: base class missing in val set");
    std::vector<int> pred = train::predict(surrogate, val_ds);
    std::vector<std::size_t> correct;
    for (std::size_t i : base_idx) {
      if (pred[i] == val_ds.examples[i].label) correct.push_back(i);
    }
    const std::vector<std::size_t>& pool = correct.empty() ? base_idx : correct;
    const std::size_t target_idx = pool[tp.uniform_int(pool.size())];

    attack::TargetSpec spec;
    spec.targets.push_back(val_ds.examples[target_idx]);
    spec.adversarial_labels.push_back(adv);

    Rng cr(child_seed(ts, detail::kRoleCraft));
    attack::CraftOutcome outcome = attack::craft_targeted(surrogate, train_ds, spec, threat,
                                                          craft, cr);
    res.final_alignment = outcome.final_alignment;

    data::Dataset poisoned = attack::apply_delta(train_ds, outcome.delta);
    nn::Model victim = detail::fresh_model(cfg, train_ds, child_seed(ts, detail::kRoleVictimInit));
    Rng vt(child_seed(ts, detail::kRoleVictimTrain));
    train::trainer_run(victim, poisoned, nullptr, cfg.schedule, vt);

    res.clean_val_acc = train::evaluate_accuracy(victim, val_ds);
    res.poison_success = eval_targeted(victim, spec.targets[0].image, adv);
    return res;
  }

  // attack = none: clean training, poison success trivially zero
  nn::Model victim = detail::fresh_model(cfg, train_ds, child_seed(ts, detail::kRoleVictimInit));
  Rng vt(child_seed(ts, detail::kRoleVictimTrain));
  train::trainer_run(victim, train_ds, nullptr, cfg.schedule, vt);
  res.clean_val_acc = train::evaluate_accuracy(victim, val_ds);
  res.poison_success = 0.0;
  return res;
}

/// Seeded trials with a worker pool; results are ordered and aggregated by
/// trial index, so any parallelism degree produces the same report.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, int n_trials,
                                       int parallelism) {
  cfg.validate();
  if (n_trials < 1) throw std::invalid_argument("run_experiment: n_trials must be >= 1");
  auto [train_ds, val_ds] = cfg.dataset.build();

  ExperimentReport report;
  report.name = cfg.attack.name() + "|" + cfg.schedule.defense.to_string();
  report.config_fingerprint = cfg.fingerprint();
  report.n_trials = n_trials;
  report.trials.resize(static_cast<std::size_t>(n_trials));

  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int t = next.fetch_add(1);
      if (t >= n_trials) return;
      try {
        report.trials[static_cast<std::size_t>(t)] = run_trial(cfg, train_ds, val_ds, t);
      } catch (const std::exception& e) {
        TrialResult r;
        r.trial = t;
        r.trial_seed = child_seed(cfg.master_seed, static_cast<std::uint64_t>(t));
        r.attack = cfg.attack.name();
        r.defense = cfg.schedule.defense.to_string();
        r.aborted = true;
        r.abort_reason = e.what();
        report.trials[static_cast<std::size_t>(t)] = std::move(r);
      }
    }
  };

  const int nthreads = std::min(parallelism, n_trials);
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& t : report.trials) report.partial = report.partial || t.aborted;
  return report;
}

}  // namespace harness
}  // namespace poisonlab

#endif  // POISONLAB_HARNESS_HPP_
