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

#include "poisonlab/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "poisonlab/report.hpp"

namespace data = poisonlab::data;
namespace nn = poisonlab::nn;
namespace hrn = poisonlab::harness;
namespace rep = poisonlab::report;
namespace trn = poisonlab::train;
using poisonlab::Rng;
using poisonlab::Tensor;

namespace {

nn::Model constant_model(int h, int w, int c, int classes, int winner) {
  nn::Model m = nn::Model::mlp(h, w, c, classes, {});
  // zero weights; bias forces the winner
  m.params()[static_cast<std::size_t>(h * w * c) * classes + winner] = 10.0;
  return m;
}

hrn::ExperimentConfig quick_backdoor_config() {
  hrn::ExperimentConfig cfg;
  cfg.dataset.kind = hrn::DatasetSpec::Kind::kShapeset;
  cfg.dataset.seed = 7;
  cfg.dataset.per_class = 8;
  cfg.dataset.h = 16;
  cfg.dataset.w = 16;
  cfg.dataset.c = 3;
  cfg.dataset.val_fraction = 0.25;
  cfg.model = "mlp:6";
  cfg.attack.kind = hrn::AttackSpec::Kind::kBackdoor;
  cfg.attack.threat.norm = poisonlab::attack::ThreatModel::Norm::kPatchL0;
  cfg.attack.threat.patch_side = 3;
  cfg.schedule.epochs = 1;
  cfg.schedule.batch = 16;
  cfg.schedule.lr = 0.05;
  cfg.schedule.momentum = 0.9;
  cfg.schedule.defense = trn::DefensePolicy::parse("standard");
  cfg.master_seed = 1234;
  cfg.trials = 3;
  return cfg;
}

hrn::ExperimentConfig quick_targeted_config() {
  hrn::ExperimentConfig cfg = quick_backdoor_config();
  cfg.dataset.per_class = 20;
  cfg.dataset.class_filter = {0, 3};
  cfg.attack.kind = hrn::AttackSpec::Kind::kTargeted;
  cfg.attack.threat = poisonlab::attack::ThreatModel{};
  cfg.attack.threat.budget = 0.05;  // floor(.05 * 30) = 1 poison
  cfg.attack.craft.steps = 3;
  cfg.attack.craft.step_size = 0.006;
  cfg.schedule.epochs = 2;
  return cfg;
}

}  // namespace

TEST(EvalBackdoor, ConstantModelsGiveExtremes) {
  data::Dataset ds = data::gen_shapeset(61, 5, 16, 16, 3);
  poisonlab::attack::BackdoorTrigger trig = poisonlab::attack::BackdoorTrigger::seeded(3, 3, 1);
  data::Dataset patched = poisonlab::attack::patch_test_images(ds, trig, 2);
  EXPECT_DOUBLE_EQ(hrn::eval_backdoor(constant_model(16, 16, 3, 10, 4), patched, 4), 1.0);
  EXPECT_DOUBLE_EQ(hrn::eval_backdoor(constant_model(16, 16, 3, 10, 5), patched, 4), 0.0);
}

TEST(EvalBackdoor, MatchesIndependentRecount) {
  data::Dataset ds = data::gen_shapeset(62, 6, 16, 16, 3);
  poisonlab::attack::BackdoorTrigger trig = poisonlab::attack::BackdoorTrigger::seeded(3, 3, 2);
  data::Dataset patched = poisonlab::attack::patch_test_images(ds, trig, 1);
  nn::Model m = nn::Model::mlp(16, 16, 3, 10, {5});
  Rng init(63);
  m.init_he(init);
  const int target = 6;
  const double got = hrn::eval_backdoor(m, patched, target);

  // independent recount: one forward per image, manual argmax
  int hits = 0;
  for (const auto& e : patched.examples) {
    Tensor b({1, 16, 16, 3}, e.image.data);
    Tensor logits = m.logits(b);
    int best = 0;
    for (int k = 1; k < 10; ++k) {
      if (logits[k] > logits[best]) best = k;
    }
    hits += best == target ? 1 : 0;
  }
  EXPECT_DOUBLE_EQ(got, static_cast<double>(hits) / patched.size());
}

TEST(EvalTargeted, ForcedLogitsAndRecount) {
  data::Dataset ds = data::gen_shapeset(64, 3, 16, 16, 3);
  const Tensor& img = ds.examples[0].image;
  EXPECT_EQ(hrn::eval_targeted(constant_model(16, 16, 3, 10, 7), img, 7), 1);
  EXPECT_EQ(hrn::eval_targeted(constant_model(16, 16, 3, 10, 2), img, 7), 0);

  nn::Model m = nn::Model::mlp(16, 16, 3, 10, {5});
  Rng init(65);
  m.init_he(init);
  Tensor b({1, 16, 16, 3}, img.data);
  Tensor logits = m.logits(b);
  int best = 0;
  for (int k = 1; k < 10; ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  EXPECT_EQ(hrn::eval_targeted(m, img, best), 1);
}

TEST(Experiment, SingleTrialMeanEqualsTrial) {
  hrn::ExperimentConfig cfg = quick_backdoor_config();
  hrn::ExperimentReport r = hrn::run_experiment(cfg, 1, 1);
  ASSERT_EQ(r.trials.size(), 1u);
  EXPECT_DOUBLE_EQ(r.mean_success(), r.trials[0].poison_success);
  EXPECT_DOUBLE_EQ(r.mean_val_acc(), r.trials[0].clean_val_acc);
}

TEST(Experiment, SameMasterSeedSameReport) {
  hrn::ExperimentConfig cfg = quick_backdoor_config();
  hrn::ExperimentReport a = hrn::run_experiment(cfg, 3, 1);
  hrn::ExperimentReport b = hrn::run_experiment(cfg, 3, 1);
  ASSERT_EQ(a.trials.size(), b.trials.size());
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    EXPECT_EQ(a.trials[i].poison_success, b.trials[i].poison_success);
    EXPECT_EQ(a.trials[i].clean_val_acc, b.trials[i].clean_val_acc);
    EXPECT_EQ(a.trials[i].target_class, b.trials[i].target_class);
  }
}

TEST(Experiment, ParallelismDoesNotChangeResults) {
  hrn::ExperimentConfig cfg = quick_targeted_config();
  hrn::ExperimentReport seq = hrn::run_experiment(cfg, 4, 1);
  hrn::ExperimentReport par = hrn::run_experiment(cfg, 4, 4);
  ASSERT_FALSE(seq.partial);
  ASSERT_FALSE(par.partial);
  ASSERT_EQ(seq.trials.size(), par.trials.size());
  for (std::size_t i = 0; i < seq.trials.size(); ++i) {
    EXPECT_EQ(seq.trials[i].poison_success, par.trials[i].poison_success);
    EXPECT_EQ(seq.trials[i].clean_val_acc, par.trials[i].clean_val_acc);
    EXPECT_EQ(seq.trials[i].final_alignment, par.trials[i].final_alignment);
  }
  EXPECT_EQ(rep::csv_string({seq}), rep::csv_string({par}));
}

TEST(Experiment, AbortedTrialSurfacesAsPartial) {
  hrn::ExperimentConfig cfg = quick_targeted_config();
  cfg.attack.threat.budget = 0.001;  // floor(budget*N) == 0 -> craft rejects
  hrn::ExperimentReport r = hrn::run_experiment(cfg, 2, 1);
  EXPECT_TRUE(r.partial);
  for (const auto& t : r.trials) {
    EXPECT_TRUE(t.aborted);
    EXPECT_FALSE(t.abort_reason.empty());
  }
}

TEST(Experiment, StraightThroughWithNonDpVictimRejected) {
  hrn::ExperimentConfig cfg = quick_targeted_config();
  cfg.attack.craft.dp_straight_through = true;
  EXPECT_THROW(hrn::run_experiment(cfg, 1, 1), std::invalid_argument);
}

TEST(Report, MeansAreExactArithmeticAverages) {
  hrn::ExperimentReport cell;
  cell.name = "x";
  cell.n_trials = 3;
  for (int i = 0; i < 3; ++i) {
    hrn::TrialResult t;
    t.trial = i;
    t.poison_success = i == 0 ? 1.0 : 0.0;
    t.clean_val_acc = 0.5 + 0.1 * i;
    t.defense = "standard";
    t.attack = "backdoor";
    cell.trials.push_back(t);
  }
  EXPECT_DOUBLE_EQ(cell.mean_success(), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(cell.mean_val_acc(), (0.5 + 0.6 + 0.7) / 3.0);
}

TEST(Report, EmptyReportGivesHeaderOnlyCsv) {
  EXPECT_EQ(rep::csv_string({}), "defense,attack,trials,mean_poison_success,mean_val_accuracy\n");
}

TEST(Report, CsvMeansMatchJsonPerTrialAverages) {
  hrn::ExperimentConfig cfg = quick_backdoor_config();
  hrn::ExperimentReport r = hrn::run_experiment(cfg, 3, 2);
  nlohmann::json j = rep::to_json({r});
  double s = 0, a = 0;
  for (const auto& t : j["cells"][0]["trials"]) {
    s += t["poison_success"].get<double>();
    a += t["clean_val_acc"].get<double>();
  }
  EXPECT_DOUBLE_EQ(j["cells"][0]["mean_poison_success"].get<double>(), s / 3.0);
  EXPECT_DOUBLE_EQ(j["cells"][0]["mean_val_accuracy"].get<double>(), a / 3.0);

  std::istringstream csv(rep::csv_string({r}));
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  std::istringstream rs(row);
  std::string field;
  std::vector<std::string> fields;
  while (std::getline(rs, field, ',')) fields.push_back(field);
  ASSERT_EQ(fields.size(), 5u);
  EXPECT_DOUBLE_EQ(std::stod(fields[3]), s / 3.0);
  EXPECT_DOUBLE_EQ(std::stod(fields[4]), a / 3.0);
}

TEST(Report, SvgPointsMatchCsvThroughDeclaredMapping) {
  hrn::ExperimentReport cell;
  cell.name = "targeted|mixup(2,1)";
  cell.n_trials = 2;
  for (int i = 0; i < 2; ++i) {
    hrn::TrialResult t;
    t.poison_success = i;           // mean 0.5
    t.clean_val_acc = 0.8 + 0.1 * i;  // mean 0.85
    t.defense = "mixup(2,1)";
    t.attack = "targeted";
    cell.trials.push_back(t);
  }
  const std::string svg = rep::svg_string({cell}, "fingerprint123");
  EXPECT_NE(svg.find("config_fingerprint: fingerprint123"), std::string::npos);

  std::regex circle_re("<circle cx=\"([0-9.eE+-]+)\" cy=\"([0-9.eE+-]+)\"");
  std::smatch m;
  ASSERT_TRUE(std::regex_search(svg, m, circle_re));
  const auto [want_x, want_y] = rep::svg_point(0.85, 0.5);
  EXPECT_DOUBLE_EQ(std::stod(m[1]), want_x);
  EXPECT_DOUBLE_EQ(std::stod(m[2]), want_y);
}

TEST(Report, FilesAreWritten) {
  const auto dir = std::filesystem::temp_directory_path() / "poisonlab_harness_test";
  std::filesystem::create_directories(dir);
  hrn::ExperimentConfig cfg = quick_backdoor_config();
  hrn::ExperimentReport r = hrn::run_experiment(cfg, 1, 1);
  const std::string prefix = (dir / "report").string();
  rep::emit_report({r}, cfg.fingerprint(), prefix);
  EXPECT_TRUE(std::filesystem::exists(prefix + ".csv"));
  EXPECT_TRUE(std::filesystem::exists(prefix + ".json"));
  EXPECT_TRUE(std::filesystem::exists(prefix + ".svg"));
}
