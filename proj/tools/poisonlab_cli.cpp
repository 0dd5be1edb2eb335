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

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "poisonlab/attack.hpp"
#include "poisonlab/config.hpp"
#include "poisonlab/harness.hpp"
#include "poisonlab/png.hpp"
#include "poisonlab/report.hpp"
#include "poisonlab/trainer.hpp"

namespace fs = std::filesystem;
namespace pl = poisonlab;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed_override = 0;
  bool has_seed_override = false;
  int parallelism_override = 0;
};

pl::config::RunConfig load_config(const CommonOpts& opts) {
  pl::config::RunConfig rc = pl::config::load_run_config(opts.config_path);
  if (opts.has_seed_override) rc.base.master_seed = opts.seed_override;
  if (opts.parallelism_override > 0) rc.base.parallelism = opts.parallelism_override;
  fs::create_directories(opts.out_dir);
  return rc;
}

void append_fingerprint(const std::string& csv_path, const std::string& fp) {
  std::ofstream os(csv_path, std::ios::binary | std::ios::app);
  os << "# config_fingerprint=" << fp << "\n";
}

// Trial-0 sub-streams; cmd_craft and cmd_train mirror the harness trial
// layout so a bundle crafted here reproduces experiment trial 0 exactly.
std::uint64_t trial0_role(const pl::harness::ExperimentConfig& cfg, std::uint64_t role) {
  return pl::child_seed(pl::child_seed(cfg.master_seed, 0), role);
}

int cmd_gen(const CommonOpts& opts, bool aug_sheet) {
  pl::config::RunConfig rc = load_config(opts);
  const std::string fp = rc.fingerprint();
  pl::data::Dataset full;
  switch (rc.base.dataset.kind) {
    case pl::harness::DatasetSpec::Kind::kShapeset:
      full = pl::data::gen_shapeset(rc.base.dataset.seed, rc.base.dataset.per_class,
                                    rc.base.dataset.h, rc.base.dataset.w, rc.base.dataset.c);
      break;
    case pl::harness::DatasetSpec::Kind::kCifar10:
      full = pl::data::load_cifar10(rc.base.dataset.path);
      break;
    case pl::harness::DatasetSpec::Kind::kFile:
      full = pl::data::load_dataset(rc.base.dataset.path);
      break;
  }
  if (!rc.base.dataset.class_filter.empty()) {
    full = pl::data::subset_classes(full, rc.base.dataset.class_filter);
  }
  full.provenance += "|cfg=" + fp;
  const std::string ds_path = (fs::path(opts.out_dir) / "dataset.plds").string();
  pl::data::save_dataset(full, ds_path);
  const std::string sheet_path = (fs::path(opts.out_dir) / "contact_sheet.png").string();
  pl::png::contact_sheet(full, std::min(10, rc.base.dataset.per_class), sheet_path,
                         "config_fingerprint=" + fp);
  std::cout << "wrote " << ds_path << " (" << full.size() << " examples, " << full.classes
            << " classes)\nwrote " << sheet_path << "\n";

  if (aug_sheet && rc.base.schedule.defense.kind != pl::train::DefensePolicy::Kind::kNone &&
      rc.base.schedule.defense.kind != pl::train::DefensePolicy::Kind::kDpsgd) {
    // augmented preview of the first few images under the configured defense
    pl::Rng rng(pl::child_seed(rc.base.master_seed, 0xA06));
    std::vector<pl::Tensor> images;
    const std::size_t n = std::min<std::size_t>(16, full.size());
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    pl::Tensor batch = pl::data::batch_images(full, idx);
    pl::Tensor labels = pl::data::batch_labels_onehot(full, idx);
    const auto& def = rc.base.schedule.defense;
    if (def.kind == pl::train::DefensePolicy::Kind::kMixup) {
      batch = pl::aug::mixup_batch(batch, labels, def.augment.k, def.augment.alpha, rng).images;
    } else if (def.kind == pl::train::DefensePolicy::Kind::kCutmix) {
      batch = pl::aug::cutmix_batch(batch, labels, rng).images;
    }
    const std::size_t stride = static_cast<std::size_t>(full.h) * full.w * full.c;
    for (std::size_t i = 0; i < n; ++i) {
      pl::Tensor img({full.h, full.w, full.c},
                     std::vector<double>(batch.data.begin() + static_cast<std::ptrdiff_t>(i * stride),
                                         batch.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride)));
      if (def.kind == pl::train::DefensePolicy::Kind::kCutout) {
        img = pl::aug::cutout(img, def.augment.cutout_side, rng).image;
      } else if (def.kind == pl::train::DefensePolicy::Kind::kStandard ||
                 def.kind == pl::train::DefensePolicy::Kind::kMaxup) {
        img = pl::aug::standard_aug(img, rng);
      }
      images.push_back(std::move(img));
    }
    const std::string aug_path = (fs::path(opts.out_dir) / "augmented_sheet.png").string();
    pl::png::image_grid(images, full.h, full.w, full.c, 4, aug_path, "config_fingerprint=" + fp);
    std::cout << "wrote " << aug_path << "\n";
  }
  return 0;
}

int cmd_craft(const CommonOpts& opts) {
  pl::config::RunConfig rc = load_config(opts);
  const pl::harness::ExperimentConfig& cfg = rc.base;
  const std::string fp = rc.fingerprint();
  auto [train_ds, val_ds] = cfg.dataset.build();

  if (cfg.attack.kind == pl::harness::AttackSpec::Kind::kBackdoor) {
    pl::attack::ThreatModel threat = cfg.attack.threat;
    threat.norm = pl::attack::ThreatModel::Norm::kPatchL0;
    pl::Rng pick(trial0_role(cfg, 0));
    if (threat.target_class < 0) threat.target_class = static_cast<int>(pick.uniform_int(train_ds.classes));
    if (threat.base_class < 0) {
      do {
        threat.base_class = static_cast<int>(pick.uniform_int(train_ds.classes));
      } while (threat.base_class == threat.target_class);
    }
    pl::attack::BackdoorTrigger trigger =
        pl::attack::BackdoorTrigger::seeded(threat.patch_side, train_ds.c, cfg.attack.trigger_seed);
    trigger.placement = cfg.attack.placement;
    pl::Rng select(trial0_role(cfg, 1));
    auto [poisoned, delta] = pl::attack::apply_trigger(train_ds, trigger, threat, select);
    delta.validate(train_ds);

    pl::attack::CraftOutcome outcome;
    outcome.delta = std::move(delta);
    for (const auto& [idx, d] : outcome.delta.entries) outcome.indices.push_back(idx);
    nlohmann::json j = pl::attack::bundle_to_json(outcome, train_ds, cfg.master_seed, fp, false,
                                                  false, "backdoor");
    const std::string path = (fs::path(opts.out_dir) / "bundle.json").string();
    pl::attack::save_bundle(j, path);
    std::cout << "wrote " << path << "\n"
              << "audit: entries=" << outcome.delta.entries.size()
              << " target_class=" << threat.target_class << " base_class=" << threat.base_class
              << " constraints=ok\n";
    return 0;
  }

  if (cfg.attack.kind != pl::harness::AttackSpec::Kind::kTargeted) {
    throw std::invalid_argument("craft: [attack] kind must be backdoor or targeted");
  }

  pl::attack::ThreatModel threat = cfg.attack.threat;
  threat.norm = pl::attack::ThreatModel::Norm::kLinf;
  pl::Rng pick(trial0_role(cfg, 0));
  int base = threat.base_class < 0 ? static_cast<int>(pick.uniform_int(train_ds.classes))
                                   : threat.base_class;
  int adv = threat.adversarial_label;
  if (adv < 0) {
    do {
      adv = static_cast<int>(pick.uniform_int(train_ds.classes));
    } while (adv == base);
  }
  threat.base_class = base;
  threat.adversarial_label = adv;

  pl::train::DefensePolicy surrogate_defense = pl::train::DefensePolicy::parse("standard");
  pl::attack::CraftConfig craft = cfg.attack.craft;
  if (cfg.attack.adaptive) {
    if (cfg.schedule.defense.kind == pl::train::DefensePolicy::Kind::kDpsgd) {
      craft.dp_straight_through = true;
      craft.dp_clip = cfg.schedule.defense.clip;
      craft.dp_sigma = cfg.schedule.defense.sigma;
    } else {
      surrogate_defense = cfg.schedule.defense;
    }
  }
  auto [surrogate, hist] = pl::attack::make_adaptive_surrogate(
      train_ds, nullptr, cfg.model, cfg.schedule, surrogate_defense, trial0_role(cfg, 2));

  pl::Rng tp(trial0_role(cfg, 7));
  std::vector<std::size_t> base_idx = pl::data::class_indices(val_ds, base);
  if (base_idx.empty()) throw std::runtime_error("craft: base class missing in val split");
  std::vector<int> pred = pl::train::predict(surrogate, val_ds);
  std::vector<std::size_t> correct;
  for (std::size_t i : base_idx) {
    if (pred[i] == val_ds.examples[i].label) correct.push_back(i);
  }
  const std::vector<std::size_t>& pool = correct.empty() ? base_idx : correct;
  const std::size_t target_idx = pool[tp.uniform_int(pool.size())];

  pl::attack::TargetSpec spec;
  spec.targets.push_back(val_ds.examples[target_idx]);
  spec.adversarial_labels.push_back(adv);

  pl::Rng cr(trial0_role(cfg, 4));
  pl::attack::CraftOutcome outcome =
      pl::attack::craft_targeted(surrogate, train_ds, spec, threat, craft, cr);
  outcome.delta.validate(train_ds);

  nlohmann::json j = pl::attack::bundle_to_json(outcome, train_ds, cfg.master_seed, fp,
                                                cfg.attack.adaptive, craft.dp_straight_through);
  const std::string path = (fs::path(opts.out_dir) / "bundle.json").string();
  pl::attack::save_bundle(j, path);

  const std::size_t cap = static_cast<std::size_t>(
      std::floor(threat.budget * static_cast<double>(train_ds.size())));
  std::cout << "wrote " << path << "\n"
            << "audit: initial_alignment=" << pl::format_double(outcome.initial_alignment)
            << " final_alignment=" << pl::format_double(outcome.final_alignment)
            << " max_linf=" << pl::format_double(outcome.delta.max_linf())
            << " entries=" << outcome.delta.entries.size() << " budget_cap=" << cap
            << " constraints=ok\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& bundle_path) {
  pl::config::RunConfig rc = load_config(opts);
  const pl::harness::ExperimentConfig& cfg = rc.base;
  const std::string fp = rc.fingerprint();
  auto [train_ds, val_ds] = cfg.dataset.build();

  pl::data::Dataset effective = train_ds;
  if (!bundle_path.empty()) {
    auto [delta, meta] = pl::attack::load_bundle(bundle_path, train_ds.h, train_ds.w, train_ds.c);
    delta.validate(train_ds);
    effective = pl::attack::apply_delta(train_ds, delta);
    std::cout << "applied bundle with " << delta.entries.size() << " poisons\n";
  }

  pl::nn::Model model = pl::nn::Model::from_spec(cfg.model, train_ds.h, train_ds.w, train_ds.c,
                                                 train_ds.classes);
  pl::Rng init(trial0_role(cfg, 5));
  model.init_he(init);
  pl::Rng tr(trial0_role(cfg, 6));
  pl::train::History hist = pl::train::trainer_run(model, effective, &val_ds, cfg.schedule, tr);

  const std::string ckpt = (fs::path(opts.out_dir) / "checkpoint.plck").string();
  nlohmann::json meta;
  meta["config_fingerprint"] = fp;
  meta["master_seed"] = cfg.master_seed;
  meta["defense"] = cfg.schedule.defense.to_string();
  pl::train::save_checkpoint(model, ckpt, meta);
  const std::string csv = (fs::path(opts.out_dir) / "history.csv").string();
  hist.to_csv(csv);
  append_fingerprint(csv, fp);
  std::cout << "wrote " << ckpt << "\nwrote " << csv << "\nfinal_val_accuracy="
            << pl::format_double(hist.final_val_acc()) << "\n";
  return 0;
}

int cmd_experiment(const CommonOpts& opts) {
  pl::config::RunConfig rc = load_config(opts);
  const std::string fp = rc.fingerprint();
  std::vector<pl::harness::ExperimentReport> cells;
  bool any_partial = false;
  for (const pl::harness::ExperimentConfig& cell : rc.cells()) {
    pl::harness::ExperimentReport r =
        pl::harness::run_experiment(cell, cell.trials, cell.parallelism);
    any_partial = any_partial || r.partial;
    std::cout << r.name << ": mean_success=" << pl::format_double(r.mean_success())
              << " mean_val_acc=" << pl::format_double(r.mean_val_acc())
              << (r.partial ? " [PARTIAL]" : "") << "\n";
    cells.push_back(std::move(r));
  }
  const std::string prefix = (fs::path(opts.out_dir) / "report").string();
  pl::report::emit_report(cells, fp, prefix);
  append_fingerprint(prefix + ".csv", fp);
  std::cout << "wrote " << prefix << ".{csv,json,svg}\n";
  return any_partial ? 1 : 0;
}

int cmd_report(const std::string& json_path, const std::string& out_dir) {
  std::ifstream is(json_path);
  if (!is) throw std::runtime_error("report: cannot open " + json_path);
  nlohmann::json j = nlohmann::json::parse(is);
  if (j.at("format") != "poisonlab.report/1") {
    throw std::runtime_error("report: unknown format in " + json_path);
  }
  std::vector<pl::harness::ExperimentReport> cells;
  std::string fp = "unknown";
  for (const auto& cj : j.at("cells")) {
    pl::harness::ExperimentReport cell;
    cell.name = cj.at("name");
    cell.config_fingerprint = cj.at("config_fingerprint");
    fp = cell.config_fingerprint;
    cell.n_trials = cj.at("n_trials");
    cell.partial = cj.at("partial");
    for (const auto& tj : cj.at("trials")) {
      pl::harness::TrialResult t;
      t.trial = tj.at("trial");
      t.trial_seed = tj.at("trial_seed");
      t.poison_success = tj.at("poison_success");
      t.clean_val_acc = tj.at("clean_val_acc");
      t.attack = tj.at("attack");
      t.defense = tj.at("defense");
      t.aborted = tj.at("aborted");
      cell.trials.push_back(std::move(t));
    }
    cells.push_back(std::move(cell));
  }
  fs::create_directories(out_dir);
  const std::string prefix = (fs::path(out_dir) / "report").string();
  pl::report::emit_report(cells, fp, prefix);
  std::cout << "wrote " << prefix << ".{csv,json,svg}\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"poisonlab: data-poisoning attacks vs augmentation defenses testbed"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string bundle_path, json_path;
  bool aug_sheet = false;

  auto add_common = [&](CLI::App* cmd, bool config_required = true) {
    auto* copt = cmd->add_option("--config", opts.config_path, "experiment config file");
    if (config_required) copt->required();
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed_override, "master seed override")
        ->each([&](const std::string&) { opts.has_seed_override = true; });
    cmd->add_option("--parallelism", opts.parallelism_override, "worker threads for trials");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a dataset and a PNG contact sheet");
  add_common(gen);
  gen->add_flag("--aug-sheet", aug_sheet, "also dump an augmented-batch grid");

  CLI::App* craft = app.add_subcommand("craft", "craft a poison bundle against a surrogate");
  add_common(craft);

  CLI::App* train_cmd = app.add_subcommand("train", "train a victim, optionally on a bundle");
  add_common(train_cmd);
  train_cmd->add_option("--bundle", bundle_path, "poison bundle to apply");

  CLI::App* exp = app.add_subcommand("experiment", "run the defense x attack grid");
  add_common(exp);

  CLI::App* rep = app.add_subcommand("report", "re-emit CSV/SVG from a JSON report");
  rep->add_option("--json", json_path, "report JSON file")->required();
  rep->add_option("--out", opts.out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(opts, aug_sheet);
    if (craft->parsed()) return cmd_craft(opts);
    if (train_cmd->parsed()) return cmd_train(opts, bundle_path);
    if (exp->parsed()) return cmd_experiment(opts);
    if (rep->parsed()) return cmd_report(json_path, opts.out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
