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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "poisonlab/attack.hpp"
#include "poisonlab/config.hpp"
#include "poisonlab/dataset.hpp"
#include "poisonlab/harness.hpp"
#include "poisonlab/report.hpp"
#include "poisonlab/trainer.hpp"

namespace fs = std::filesystem;
namespace pl = poisonlab;

namespace {

struct RunResult {
  int exit_code = 0;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli_output.log";
  const std::string cmd =
      std::string(POISONLAB_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  r.output = ss.str();
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "poisonlab_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kBaseConfig = R"(
[dataset]
kind = shapeset
seed = 7
per_class = 20
width = 16
height = 16
channels = 3
classes = 0,3
val_fraction = 0.25

[model]
kind = mlp
widths = 6

[attack]
kind = targeted
budget = 0.05
steps = 5
restarts = 1

[defense]
kind = standard

[schedule]
epochs = 2
batch = 16
lr = 0.05
momentum = 0.9
trials = 2
master_seed = 99
)";

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "exp.ini";
  std::ofstream os(p);
  os << text;
  return p;
}

}  // namespace

TEST(CliGen, SameSeedSameFilesAndLoaderRoundTrip) {
  const fs::path dir = fresh_dir("gen");
  const fs::path cfg = write_config(dir, kBaseConfig);
  ASSERT_EQ(run_cli("gen --config " + cfg.string() + " --out " + (dir / "a").string(), dir).exit_code, 0);
  ASSERT_EQ(run_cli("gen --config " + cfg.string() + " --out " + (dir / "b").string(), dir).exit_code, 0);
  EXPECT_EQ(read_file(dir / "a" / "dataset.plds"), read_file(dir / "b" / "dataset.plds"));
  EXPECT_EQ(read_file(dir / "a" / "contact_sheet.png"), read_file(dir / "b" / "contact_sheet.png"));

  pl::data::Dataset back = pl::data::load_dataset((dir / "a" / "dataset.plds").string());
  EXPECT_EQ(back.size(), 40u);
  EXPECT_EQ(back.classes, 2);
  EXPECT_NE(back.provenance.find("cfg="), std::string::npos);  // fingerprint embedded
}

TEST(CliConfig, UnknownKeyRejectedByName) {
  const fs::path dir = fresh_dir("badcfg");
  const fs::path cfg = write_config(dir, std::string(kBaseConfig) + "\n[schedule]\n");
  // duplicate section is fine; an unknown key is not
  const fs::path cfg2 = write_config(dir, std::string(kBaseConfig) + "\nnonsense_key = 1\n");
  RunResult r = run_cli("experiment --config " + cfg2.string() + " --out " + dir.string(), dir);
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("nonsense_key"), std::string::npos) << r.output;
}

TEST(CliConfig, DuplicateKeyRejected) {
  const fs::path dir = fresh_dir("dupcfg");
  std::string text = kBaseConfig;
  text += "\n[dataset]\nseed = 8\n";
  const fs::path cfg = write_config(dir, text);
  RunResult r = run_cli("gen --config " + cfg.string() + " --out " + dir.string(), dir);
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("duplicate"), std::string::npos) << r.output;
}

TEST(CliCraft, ZeroEpsilonBundleHasZeroDeltas) {
  const fs::path dir = fresh_dir("craft0");
  std::string text = kBaseConfig;
  text.replace(text.find("budget = 0.05"), 13, "budget = 0.05\nepsilon = 0");
  const fs::path cfg = write_config(dir, text);
  ASSERT_EQ(run_cli("craft --config " + cfg.string() + " --out " + dir.string(), dir).exit_code, 0);
  auto [delta, meta] = pl::attack::load_bundle((dir / "bundle.json").string(), 16, 16, 3);
  ASSERT_FALSE(delta.entries.empty());
  EXPECT_DOUBLE_EQ(delta.max_linf(), 0.0);
}

TEST(CliCraft, BundleReloadsRevalidatesAndAuditMatchesScan) {
  const fs::path dir = fresh_dir("craft");
  const fs::path cfg = write_config(dir, kBaseConfig);
  RunResult r = run_cli("craft --config " + cfg.string() + " --out " + dir.string(), dir);
  ASSERT_EQ(r.exit_code, 0) << r.output;

  pl::config::RunConfig rc = pl::config::load_run_config(cfg.string());
  auto [train_ds, val_ds] = rc.base.dataset.build();
  auto [delta, meta] = pl::attack::load_bundle((dir / "bundle.json").string(), 16, 16, 3);
  delta.validate(train_ds);  // all PoisonDelta invariants re-checked

  // independent scan of the bundle deltas vs the printed audit value
  double max_abs = 0.0;
  for (const auto& [idx, d] : delta.entries) {
    for (double v : d.data) max_abs = std::max(max_abs, std::abs(v));
  }
  const std::string needle = "max_linf=" + pl::format_double(max_abs);
  EXPECT_NE(r.output.find(needle), std::string::npos) << r.output << "\nwanted " << needle;
}

TEST(CliTrain, ReproducibleAndHistoryMatchesCheckpointReEval) {
  const fs::path dir = fresh_dir("train");
  const fs::path cfg = write_config(dir, kBaseConfig);
  ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + (dir / "a").string(), dir).exit_code, 0);
  ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + (dir / "b").string(), dir).exit_code, 0);
  EXPECT_EQ(read_file(dir / "a" / "checkpoint.plck"), read_file(dir / "b" / "checkpoint.plck"));
  EXPECT_EQ(read_file(dir / "a" / "history.csv"), read_file(dir / "b" / "history.csv"));

  // re-evaluation oracle: final history accuracy equals evaluating the
  // checkpointed model on the config's validation split
  pl::train::Checkpoint ckpt = pl::train::load_checkpoint((dir / "a" / "checkpoint.plck").string());
  pl::config::RunConfig rc = pl::config::load_run_config(cfg.string());
  auto [train_ds, val_ds] = rc.base.dataset.build();
  const double want = pl::train::evaluate_accuracy(ckpt.model, val_ds);

  std::ifstream is(dir / "a" / "history.csv");
  std::string line, last;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] != '#') last = line;
  }
  const auto second_comma = last.rfind(',');
  const double got = std::stod(last.substr(second_comma + 1));
  EXPECT_DOUBLE_EQ(got, want);
}

TEST(CliExperiment, SingleCellMatchesDirectCallAndGridHasRowPerCell) {
  const fs::path dir = fresh_dir("exp");
  const fs::path cfg = write_config(dir, kBaseConfig);
  RunResult r = run_cli("experiment --config " + cfg.string() + " --out " + (dir / "one").string(), dir);
  ASSERT_EQ(r.exit_code, 0) << r.output;

  pl::config::RunConfig rc = pl::config::load_run_config(cfg.string());
  pl::harness::ExperimentReport direct =
      pl::harness::run_experiment(rc.base, rc.base.trials, rc.base.parallelism);
  const std::string want_csv = pl::report::csv_string({direct});
  const std::string got_csv = read_file(dir / "one" / "report.csv");
  EXPECT_EQ(got_csv.substr(0, want_csv.size()), want_csv);

  // grid: 2 defenses x 1 attack -> 2 rows (+1 header, +1 fingerprint comment)
  std::string grid_text = kBaseConfig;
  grid_text += "\n[grid]\ndefenses = standard|mixup(2,1)\n";
  const fs::path gcfg = write_config(dir, grid_text);
  ASSERT_EQ(run_cli("experiment --config " + gcfg.string() + " --out " + (dir / "grid").string(), dir)
                .exit_code,
            0);
  std::istringstream gs(read_file(dir / "grid" / "report.csv"));
  int rows = 0;
  std::string line;
  std::getline(gs, line);  // header
  while (std::getline(gs, line)) {
    if (!line.empty() && line[0] != '#') ++rows;
  }
  EXPECT_EQ(rows, 2);

  // replay: re-running the same config reproduces the rows byte-identically
  ASSERT_EQ(run_cli("experiment --config " + gcfg.string() + " --out " + (dir / "grid2").string(), dir)
                .exit_code,
            0);
  EXPECT_EQ(read_file(dir / "grid" / "report.csv"), read_file(dir / "grid2" / "report.csv"));
}

TEST(CliReport, ReEmitsCsvFromJson) {
  const fs::path dir = fresh_dir("report");
  const fs::path cfg = write_config(dir, kBaseConfig);
  ASSERT_EQ(run_cli("experiment --config " + cfg.string() + " --out " + (dir / "run").string(), dir)
                .exit_code,
            0);
  ASSERT_EQ(run_cli("report --json " + (dir / "run" / "report.json").string() + " --out " +
                        (dir / "re").string(),
                    dir)
                .exit_code,
            0);
  // same rows; the re-emitted file lacks the CLI fingerprint trailer
  const std::string orig = read_file(dir / "run" / "report.csv");
  const std::string re = read_file(dir / "re" / "report.csv");
  EXPECT_EQ(orig.substr(0, re.size()), re);
  EXPECT_TRUE(fs::exists(dir / "re" / "report.svg"));
}
