// SPDX-License-Identifier: Apache-2.0
#include "crop/error.hpp"
#include "crop/harness.hpp"
#include "crop/model_io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

namespace crop {
namespace {

using testing::read_file;
using testing::TempDir;
namespace fs = std::filesystem;

// Small synthetic run: 4 generic and 2 personal users, short training.
std::string small_config(const fs::path& out, const std::string& extra = "") {
  return R"({
  "data": {"synthetic": {"num_generic_users": 4, "num_personal_users": 2, "samples_per_cell": 12}},
  "model": {"hidden": [12]},
  "generic_train": {"epochs": 10},
  "conventional": {"epochs": 10},
  "crop": {"initial": {"epochs": 10}, "final": {"epochs": 5}},
  "seeds": [1, 2],
  )" + extra + R"("output_dir": ")" + out.string() + R"("
})";
}

struct Workspace {
  TempDir dir;
  fs::path config;
  std::string err;

  explicit Workspace(const std::string& extra = "") {
    config = dir / "cfg.json";
    testing::write_file(config, small_config(dir / "out", extra));
  }
  fs::path out() const { return dir / "out"; }

  int operator()(const std::string& command, CommandOptions opts = {}) {
    opts.config = config;
    std::ostringstream o, e;
    const int code = run_command(command, opts, o, e);
    err = e.str();
    return code;
  }

  void full() {
    for (const char* c : {"generate", "train-generic", "personalize", "evaluate", "diagnose"}) {
      ASSERT_EQ((*this)(c), kExitOk) << c << ": " << err;
    }
  }
};

std::size_t lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

TEST(Harness, FullRunWritesEveryArtifact) {
  Workspace run;
  run.full();
  const fs::path o = run.out();
  EXPECT_TRUE(fs::exists(o / "data.csv"));
  for (std::uint64_t s : {1, 2}) {
    EXPECT_TRUE(fs::exists(o / files::generic_model(s)));
    EXPECT_TRUE(fs::exists(o / ("generic_s" + std::to_string(s) + "_history.csv")));
    for (const char* u : {"p00", "p01"}) {
      EXPECT_TRUE(fs::exists(o / files::personal_model("conventional", u, s)));
      EXPECT_TRUE(fs::exists(o / files::personal_model("crop", u, s)));
      for (const char* st : {"finetuned", "pruned", "mixed"}) EXPECT_TRUE(fs::exists(o / files::stage_model("crop", u, s, st)));
    }
  }
  // Header, one row per user, then the mean row.
  EXPECT_EQ(lines(read_file(o / "eval_summary.csv")), 2u + 2u);
  // users x seeds x states x contexts plus header.
  EXPECT_EQ(lines(read_file(o / "eval_report.csv")), 2u * 2u * 3u * 2u + 1u);
  // One GIP row per stage (steps 2..5) for each (user, seed).
  const std::string gip = read_file(o / "gip.csv");
  EXPECT_EQ(lines(gip), 2u * 2u * 4u + 1u);
  for (const char* step : {",2,finetuned,", ",3,pruned,", ",4,mixed,", ",5,final,"}) {
    EXPECT_NE(gip.find(step), std::string::npos) << step;
  }
  EXPECT_EQ(lines(read_file(o / "fim.csv")), 2u * 2u * 3u * 2u + 1u);
  EXPECT_NE(read_file(o / "crop.log").find("command=personalize seconds="), std::string::npos);
}

TEST(Harness, HeatmapHasPenultimateLayerShape) {
  Workspace run;
  run.full();
  const std::string text = read_file(run.out() / "heatmap_crop_p00_s1.csv");
  // Output layer reads 12 hidden units from 8 inputs: the penultimate weights are 12 x 8.
  EXPECT_EQ(lines(text), 12u);
  const std::string first = text.substr(0, text.find('\n'));
  EXPECT_EQ(std::count(first.begin(), first.end(), ','), 7);
  EXPECT_TRUE(fs::exists(run.out() / "heatmap_generic_s2.csv"));
  EXPECT_TRUE(fs::exists(run.out() / "heatmap_conventional_p01_s2.csv"));
}

TEST(Harness, RerunsAreByteIdentical) {
  Workspace a, b;
  a.full();
  b.full();
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(a.out())) {
    const auto name = entry.path().filename();
    if (name == "crop.log") continue;
    ASSERT_TRUE(fs::exists(b.out() / name)) << name;
    EXPECT_EQ(read_file(entry.path()), read_file(b.out() / name)) << name;
    ++compared;
  }
  EXPECT_GT(compared, 40u);
}

TEST(Harness, EvaluateReproducesInRunScores) {
  Workspace run;
  run.full();
  const auto eval = EvalReport::read_csv(run.out() / "eval_report.csv");
  for (const char* state : {"conventional", "crop"}) {
    const auto in_run = EvalReport::read_csv(run.out() / ("personalize_" + std::string(state) + "_report.csv"));
    ASSERT_EQ(in_run.records().size(), 2u * 2u * 2u);
    for (const auto& r : in_run.records()) {
      EXPECT_EQ(eval.value(r.user, r.seed, r.state, r.context), r.value) << r.user << ' ' << r.context;
    }
  }
  const std::string summary = read_file(run.out() / "eval_summary.csv");
  EXPECT_NE(summary.find("\nmean,"), std::string::npos);
  EXPECT_EQ(eval.delta("generic", "generic", 1).mean, 0.0);
}

TEST(Harness, ZeroEpochGenericIsTheInitialModel) {
  // A repeated key replaces the earlier section.
  Workspace run(R"("generic_train": {"epochs": 0}, )");
  ASSERT_EQ(run("train-generic"), kExitOk) << run.err;
  const ModelFile f = load_model(run.out() / files::generic_model(1));
  EXPECT_EQ(f.model, ModelParams::random(std::vector<std::size_t>{8, 12, 4}, 1));
}

TEST(Harness, SeedOptionRestrictsRuns) {
  Workspace run;
  CommandOptions opts;
  opts.seed = 2;
  ASSERT_EQ(run("train-generic", opts), kExitOk) << run.err;
  EXPECT_TRUE(fs::exists(run.out() / files::generic_model(2)));
  EXPECT_FALSE(fs::exists(run.out() / files::generic_model(1)));
}

TEST(Harness, MissingGenericIsUsageExit) {
  Workspace run;
  EXPECT_EQ(run("personalize"), kExitUsage);
  EXPECT_NE(run.err.find("generic_s1.cropmdl"), std::string::npos);
}

TEST(Harness, MissingPersonalModelsAreUsageExit) {
  Workspace run(R"("users": {"personal": ["p00"]}, )");
  ASSERT_EQ(run("train-generic"), kExitOk);
  CommandOptions opts;
  opts.method = "conventional";
  ASSERT_EQ(run("personalize", opts), kExitOk) << run.err;
  EXPECT_EQ(run("evaluate"), kExitUsage);
  EXPECT_EQ(run("diagnose"), kExitUsage);
}

TEST(Harness, ConfigErrorsAreUsageExit) {
  Workspace run(R"("contexts": {"available": ["c0"], "unseen": ["c0"]}, )");
  EXPECT_EQ(run("train-generic"), kExitUsage);
  Workspace bogus(R"("colour": 1, )");
  EXPECT_EQ(bogus("train-generic"), kExitUsage);
  Workspace ok;
  EXPECT_EQ(ok("fly"), kExitUsage);
  CommandOptions opts;
  opts.method = "magic";
  EXPECT_EQ(ok("personalize", opts), kExitUsage);
  CommandOptions missing;
  missing.config = ok.dir / "nope.json";
  std::ostringstream o, e;
  EXPECT_EQ(run_command("generate", missing, o, e), kExitUsage);
}

TEST(Harness, DivergenceIsNumericExit) {
  Workspace run(R"("generic_train": {"epochs": 10, "learning_rate": 1e200}, )");
  EXPECT_EQ(run("train-generic"), kExitNumeric) << run.err;
}

TEST(Harness, AblationLabelKeepsDefaultOutputs) {
  Workspace run(R"("users": {"personal": ["p00"]}, )");
  ASSERT_EQ(run("train-generic"), kExitOk);
  ASSERT_EQ(run("personalize"), kExitOk) << run.err;
  CommandOptions abl;
  abl.method = "crop";
  abl.strategy = "magnitude_top";
  abl.label = "top";
  ASSERT_EQ(run("personalize", abl), kExitOk) << run.err;
  abl.method.reset();
  ASSERT_EQ(run("evaluate", abl), kExitOk) << run.err;
  EXPECT_TRUE(fs::exists(run.out() / "eval_summary_top.csv"));
  EXPECT_TRUE(fs::exists(run.out() / files::personal_model("top", "p00", 1)));
  EXPECT_TRUE(fs::exists(run.out() / files::personal_model("crop", "p00", 1)));
  CommandOptions bad;
  bad.label = "generic";
  EXPECT_EQ(run("evaluate", bad), kExitUsage);
}

}  // namespace
}  // namespace crop
