#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ptwd/cli.hpp"

namespace ptwd::cli {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("ptwd_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    SynthSpec spec;
    spec.dims = Dims{6, 5, 4};
    spec.ranks = Ranks{{2, 2, 2}, {2, 2, 2}};
    spec.density = 0.5;
    spec.seed = 21;
    spec.value_scale = 0.7;
    save_coo(path("data.coo"), generate(spec).observed);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  RunConfig base(const std::string& command) const {
    RunConfig c;
    c.command = command;
    c.input = path("data.coo");
    c.ranks = Ranks{{2, 2, 2}, {2, 2, 2}};
    c.split_ratios = {7, 2, 1};
    c.hp.max_epochs = 30;
    c.hp.eta = 0.03;
    c.reps = 1;
    return c;
  }

  fs::path dir_;
};

TEST_F(CliTest, SingleRepetitionHasOneBlock) {
  auto r = run_train(base("train"));
  ASSERT_EQ(r.at("repetitions").size(), 1u);
  EXPECT_EQ(r.at("mean").at("rmse"), r.at("repetitions")[0].at("test").at("rmse"));
}

TEST_F(CliTest, MeanOverRepetitions) {
  auto c = base("train");
  c.reps = 10;
  c.hp.max_epochs = 5;
  auto r = run_train(c);
  const auto& reps = r.at("repetitions");
  ASSERT_EQ(reps.size(), 10u);
  double rmse = 0.0, mae = 0.0;
  for (std::size_t n = 0; n < reps.size(); ++n) {
    EXPECT_EQ(reps[n].at("seed").get<std::uint64_t>(), c.hp.seed + n);
    rmse += reps[n].at("test").at("rmse").get<double>();
    mae += reps[n].at("test").at("mae").get<double>();
  }
  EXPECT_NEAR(r.at("mean").at("rmse").get<double>(), rmse / 10, 1e-15);
  EXPECT_NEAR(r.at("mean").at("mae").get<double>(), mae / 10, 1e-15);
}

TEST_F(CliTest, MissingInputFails) {
  auto c = base("train");
  c.input = path("nope.coo");
  EXPECT_THROW(run(c), Error);
  c.input.clear();
  EXPECT_THROW(run(c), ParameterError);
}

TEST_F(CliTest, AblationArmsShareInitialization) {
  auto c = base("ablate");
  c.reps = 2;
  auto r = run_ablate(c);
  for (const auto& rep : r.at("repetitions"))
    EXPECT_EQ(rep.at("pid").at("init_fingerprint"), rep.at("plain").at("init_fingerprint"));
  EXPECT_TRUE(r.at("summary").contains("pid"));
  EXPECT_TRUE(r.at("summary").contains("plain"));
}

TEST_F(CliTest, AblationWithProportionalGainsIsBitwiseIdentical) {
  auto c = base("ablate");
  c.hp.cd = 0.0;
  auto r = run_ablate(c);
  const auto& rep = r.at("repetitions")[0];
  EXPECT_EQ(rep.at("pid").at("final_fingerprint"), rep.at("plain").at("final_fingerprint"));
  EXPECT_EQ(rep.at("pid").at("valid_rmse_history"), rep.at("plain").at("valid_rmse_history"));
}

TEST_F(CliTest, OnePointGridWins) {
  auto c = base("grid");
  c.grid_etas = {0.02};
  c.grid_lambdas = {0.001};
  auto r = run_grid(c);
  ASSERT_EQ(r.at("cells").size(), 1u);
  EXPECT_EQ(r.at("winner").at("eta"), 0.02);
  EXPECT_EQ(r.at("winner").at("lambda"), 0.001);
}

TEST_F(CliTest, GridRecordsDivergenceAndPicksMinimum) {
  auto c = base("grid");
  c.grid_etas = {1e6, 0.03, 0.01};
  c.grid_lambdas = {0.0, 0.01};
  auto r = run_grid(c);
  ASSERT_EQ(r.at("cells").size(), 6u);
  EXPECT_TRUE(r.at("cells")[0].at("diverged").get<bool>());
  const double best = r.at("winner").at("valid_rmse").get<double>();
  for (const auto& cell : r.at("cells")) {
    if (!cell.at("diverged").get<bool>()) {
      EXPECT_LE(best, cell.at("valid_rmse").get<double>());
    }
  }
  EXPECT_FALSE(r.at("winner").at("diverged").get<bool>());

  c.grid_etas.clear();
  EXPECT_THROW(run_grid(c), ParameterError);
}

TEST_F(CliTest, ConfigRoundTripsAndRerunIsByteIdentical) {
  auto c = base("train");
  c.hp.cd = 0.002;
  c.grid_etas = {0.5};
  c.dims = Dims{6, 5, 4};
  const json first = run(c);
  const RunConfig back = config_from_json(first);
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(run(back).dump(), first.dump());
}

TEST_F(CliTest, InputsAreNotModified) {
  const std::string before = slurp(path("data.coo"));
  run_train(base("train"));
  auto s = base("split");
  s.output = path("parts");
  auto r = run_split(s);
  EXPECT_EQ(slurp(path("data.coo")), before);
  auto train = ingest(path("parts.train.coo"));
  auto valid = ingest(path("parts.valid.coo"));
  auto test = ingest(path("parts.test.coo"));
  EXPECT_EQ(train.size() + valid.size() + test.size(), ingest(path("data.coo")).size());
  EXPECT_EQ(r.at("train").get<std::size_t>(), train.size());
}

TEST_F(CliTest, SynthThenEvaluateAgainstTruth) {
  RunConfig s;
  s.command = "synth";
  s.dims = Dims{5, 5, 5};
  s.ranks = Ranks{{2, 2, 2}, {2, 2, 2}};
  s.output = path("syn.coo");
  s.truth = path("syn.ckpt");
  run(s);
  RunConfig e;
  e.command = "evaluate";
  e.input = s.output;
  e.checkpoint = s.truth;
  e.normalize = false;
  auto r = run(e);
  EXPECT_LT(r.at("test").at("rmse").get<double>(), 1e-12);
}

int sh(const std::string& cmd) { return std::system(cmd.c_str()); }

TEST_F(CliTest, BinaryFailureExitsNonZeroWithoutReport) {
  const std::string report = path("report.json");
  const int rc = sh(std::string(PTWD_CLI_PATH) + " train --input " + path("missing.coo") + " --report " + report +
                    " 2>/dev/null");
  EXPECT_NE(rc, 0);
  EXPECT_FALSE(fs::exists(report));
}

TEST_F(CliTest, BinaryRerunFromReportIsByteIdentical) {
  const std::string first = path("first.json"), second = path("second.json");
  ASSERT_EQ(sh(std::string(PTWD_CLI_PATH) + " train --input " + path("data.coo") +
               " --ranks 2,2,2,2,2,2 --reps 2 --epochs 10 --split 7:2:1 --report " + first),
            0);
  ASSERT_EQ(sh(std::string(PTWD_CLI_PATH) + " train --config " + first + " --report " + second), 0);
  EXPECT_EQ(slurp(first), slurp(second));
  EXPECT_FALSE(slurp(first).empty());
}

}  // namespace
}  // namespace ptwd::cli
