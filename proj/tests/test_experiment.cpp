#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <unistd.h>

#include <gtest/gtest.h>

#include "cashlab/experiment.hpp"
#include "mock_endpoint.hpp"
#include "test_helpers.hpp"

using namespace cashlab;
using cashlab::testing::MockEndpoint;
using cashlab::testing::ScriptedReply;
namespace fs = std::filesystem;

namespace {

class ScratchDir {
 public:
  ScratchDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() /
            fmt::format("cashlab_{}_{}_{}", ::getpid(), info->test_suite_name(), info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

ExperimentConfig baseline_config(const fs::path& out, std::uint64_t seed = 11) {
  ExperimentConfig c;
  c.master_seed = seed;
  c.k_list = {3, 8};
  c.temperatures = {0.0};
  c.trials_per_cell = 10;
  c.selectors = {"log_mean", "logistic"};
  c.output_dir = out;
  return c;
}

std::vector<TrialRecord> records_of(const ResultStore& s, const std::string& selector) {
  std::vector<TrialRecord> out;
  for (const auto& r : s.records)
    if (r.selector == selector) out.push_back(r);
  return out;
}

}  // namespace

TEST(PlanCells, BaselinesIgnoreTemperatureAndZeroShotRunsAtKZero) {
  ExperimentConfig c;
  c.k_list = {0, 1, 5};
  c.temperatures = {0.0, 0.4};
  c.selectors = {"log_mean", "llm_zero_shot", "llm_meta_informed"};
  c.endpoint = LlmEndpointConfig{};
  const auto cells = plan_cells(c);
  std::vector<std::string> stems;
  for (const auto& cell : cells) stems.push_back(cell.file_stem());
  EXPECT_EQ(stems, (std::vector<std::string>{"llm_meta_informed__k1__t0.0", "llm_meta_informed__k1__t0.4",
                                             "llm_meta_informed__k5__t0.0", "llm_meta_informed__k5__t0.4",
                                             "llm_zero_shot__k0__t0.0", "llm_zero_shot__k0__t0.4",
                                             "log_mean__k1__t0.0", "log_mean__k5__t0.0"}));
}

TEST(ExperimentConfig, RejectsBadValues) {
  EXPECT_THROW(ExperimentConfig::from_json({{"trials_per_cell", 0}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"temperatures", {1.5}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"selectors", {"oracle"}}}), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json({{"selectors", {"llm_zero_shot"}}}), ConfigError);
  const auto c = ExperimentConfig::from_json({{"master_seed", 3}, {"k_list", {1, 2}}});
  EXPECT_EQ(c.master_seed, 3u);
  EXPECT_EQ(c.k_list, (std::vector<std::size_t>{1, 2}));
}

TEST(TrialSeed, DependsOnEveryComponent) {
  const CellKey base{"log_mean", 5, 0.0};
  const auto s = trial_seed(1, base, 0);
  EXPECT_NE(s, trial_seed(2, base, 0));
  EXPECT_NE(s, trial_seed(1, {"logistic", 5, 0.0}, 0));
  EXPECT_NE(s, trial_seed(1, {"log_mean", 6, 0.0}, 0));
  EXPECT_NE(s, trial_seed(1, {"log_mean", 5, 0.2}, 0));
  EXPECT_NE(s, trial_seed(1, base, 1));
  EXPECT_EQ(s, trial_seed(1, {"log_mean", 5, -0.0}, 0));
}

TEST(RunMatrix, BaselineCountsPerSelector) {
  ScratchDir dir;
  const auto summary = run_matrix(baseline_config(dir.path()));
  EXPECT_EQ(summary.computed.size(), 4u);
  const auto store = ResultStore::load_cells(dir.path());
  EXPECT_EQ(records_of(store, "log_mean").size(), 20u);
  EXPECT_EQ(records_of(store, "logistic").size(), 20u);
  for (const auto& r : store.records) {
    EXPECT_GE(r.regret, 0.0);
    EXPECT_EQ(r.temperature, 0.0);
  }
}

TEST(RunMatrix, SameSeedGivesByteIdenticalOutputs) {
  ScratchDir a, b;
  run_matrix(baseline_config(a.path()));
  auto cfg = baseline_config(b.path());
  cfg.workers = 3;
  run_matrix(cfg);
  EXPECT_EQ(read_text_file(a / "aggregate.csv"), read_text_file(b / "aggregate.csv"));
  EXPECT_EQ(read_text_file(a / "trials.jsonl"), read_text_file(b / "trials.jsonl"));
}

TEST(RunMatrix, ResumedRunMatchesUninterruptedRun) {
  ScratchDir full, resumed;
  run_matrix(baseline_config(full.path()));
  run_matrix(baseline_config(resumed.path()));
  // Simulate an interrupt: one cell lost, one half-written temp file left behind.
  fs::remove(resumed / "cells/logistic__k8__t0.0.jsonl");
  fs::remove(resumed / "aggregate.csv");
  fs::remove(resumed / "trials.jsonl");
  {
    std::ofstream partial(resumed / "cells/logistic__k8__t0.0.jsonl.tmp");
    partial << "{\"selector\": \"logi";
  }
  const auto summary = run_matrix(baseline_config(resumed.path()));
  EXPECT_EQ(summary.computed.size(), 1u);
  EXPECT_EQ(summary.skipped.size(), 3u);
  EXPECT_EQ(read_text_file(full / "aggregate.csv"), read_text_file(resumed / "aggregate.csv"));
  EXPECT_EQ(read_text_file(full / "trials.jsonl"), read_text_file(resumed / "trials.jsonl"));
}

TEST(RunMatrix, AddingASelectorDoesNotChangeOthers) {
  ScratchDir one, two;
  auto cfg = baseline_config(one.path());
  cfg.selectors = {"log_mean"};
  run_matrix(cfg);
  run_matrix(baseline_config(two.path()));
  const auto a = records_of(ResultStore::load_cells(one.path()), "log_mean");
  const auto b = records_of(ResultStore::load_cells(two.path()), "log_mean");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].to_json_line(), b[i].to_json_line());
}

TEST(RunMatrix, RecordsRegenerateFromTheirSeed) {
  ScratchDir dir;
  const auto cfg = baseline_config(dir.path());
  run_matrix(cfg);
  const auto grid = LambdaGrid::decades();
  for (const auto& r : ResultStore::load_cells(dir.path()).records) {
    const auto trial = trial_for(cfg.master_seed, r.cell(), r.trial, grid);
    EXPECT_EQ(r.seed, trial_seed(cfg.master_seed, r.cell(), r.trial));
    EXPECT_EQ(r.lambda_star, trial.target_lambda_star);
    EXPECT_EQ(r.regret, run_baseline(r.selector, trial, grid).regret);
    EXPECT_EQ(r.target_json, nlohmann::json::parse(task_to_json(trial.target, std::string("NEW"))).dump());
  }
}

TEST(EmitReport, AggregateMatchesIndependentRecomputation) {
  ScratchDir dir;
  run_matrix(baseline_config(dir.path()));
  // Recompute straight from the JSONL dump.
  std::map<std::string, std::vector<double>> regrets;
  std::istringstream jsonl(read_text_file(dir / "trials.jsonl"));
  for (std::string line; std::getline(jsonl, line);) {
    const auto j = nlohmann::json::parse(line);
    regrets[fmt::format("{},{}", j["selector"].get<std::string>(), j["k"].get<int>())].push_back(
        j["regret"].get<double>());
  }
  std::istringstream csv(read_text_file(dir / "aggregate.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "# cashlab aggregate v1");
  std::getline(csv, line);
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    ASSERT_EQ(f.size(), 9u);
    const auto& v = regrets.at(f[0] + "," + f[1]);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss2 = 0.0;
    for (double x : v) ss2 += (x - mean) * (x - mean);
    const double se = std::sqrt(ss2 / (v.size() - 1) / v.size());
    EXPECT_NEAR(std::stod(f[3]), mean, 1e-12);
    EXPECT_NEAR(std::stod(f[4]), se, 1e-12);
    EXPECT_NEAR(std::stod(f[5]), mean - 1.645 * se, 1e-12);
    EXPECT_NEAR(std::stod(f[6]), mean + 1.645 * se, 1e-12);
    EXPECT_EQ(std::stoul(f[7]), v.size());
    EXPECT_EQ(f[8], "0.0");
    ++rows;
  }
  EXPECT_EQ(rows, regrets.size());
}

TEST(EmitReport, TwoEmitsAreByteIdentical) {
  ScratchDir dir;
  run_matrix(baseline_config(dir.path()));
  const auto store = ResultStore::load_cells(dir.path());
  emit_report(store, dir / "a");
  emit_report(store, dir / "b");
  EXPECT_EQ(read_text_file(dir / "a/aggregate.csv"), read_text_file(dir / "b/aggregate.csv"));
  EXPECT_EQ(read_text_file(dir / "a/trials.jsonl"), read_text_file(dir / "b/trials.jsonl"));
}

TEST(EmitReport, EmptyCellIsOmittedAndLogged) {
  ScratchDir dir;
  run_matrix(baseline_config(dir.path()));
  const auto store = ResultStore::load_cells(dir.path());
  std::ostringstream log;
  emit_report(store, dir / "r", {{"log_mean", 3, 0.0}, {"log_mean", 99, 0.0}}, &log);
  EXPECT_NE(log.str().find("log_mean__k99__t0.0"), std::string::npos);
  EXPECT_EQ(read_text_file(dir / "r/aggregate.csv").find(",99,"), std::string::npos);
  EXPECT_THROW(emit_report(ResultStore{}, dir / "r"), DomainError);
}

TEST(RunMatrix, OracleFailureNamesTheTask) {
  const auto fn = detail::checked_curve_fn(LambdaGrid::decades());
  auto bad = cashlab::testing::reference_task();
  bad.n1 = 0;
  try {
    fn(bad);
    FAIL() << "expected an oracle failure";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("\"n1\": 0"), std::string::npos);
  }
}

TEST(RunMatrix, LlmCellsUseTheEndpointAndFailuresStayLocal) {
  ::setenv("CASHLAB_TEST_KEY", "k", 1);
  ScratchDir dir;
  ExperimentConfig cfg;
  cfg.k_list = {2};
  cfg.temperatures = {0.0, 0.6};
  cfg.trials_per_cell = 4;
  cfg.selectors = {"llm_meta_informed", "llm_zero_shot", "log_mean"};
  cfg.output_dir = dir.path();
  cfg.templates_dir = CASHLAB_TEMPLATE_DIR;

  MockEndpoint mock({{200, "0.01", {}}});
  LlmEndpointConfig ep;
  ep.base_url = mock.base_url();
  ep.auth_token_env = "CASHLAB_TEST_KEY";
  ep.max_in_flight = 2;
  cfg.endpoint = ep;
  HttpChatClient client(mock.base_url());
  const auto summary = run_matrix(cfg, &client);
  EXPECT_TRUE(summary.incomplete.empty());
  const auto store = ResultStore::load_cells(dir.path());
  EXPECT_EQ(store.records.size(), 4u * 5u);
  for (const auto& r : store.records)
    if (is_llm_selector(r.selector)) EXPECT_EQ(r.chosen_lambda, 1e-2);
  EXPECT_EQ(mock.requests().size(), 16u);
  std::set<double> temps;
  for (const auto& req : mock.requests()) temps.insert(req["temperature"].get<double>());
  EXPECT_EQ(temps, (std::set<double>{0.0, 0.6}));
  EXPECT_TRUE(fs::exists(dir / "transcripts/llm_zero_shot__k0__t0.6.jsonl"));

  ScratchDir broken_dir;
  cfg.output_dir = broken_dir.path();
  MockEndpoint broken({{500, "", {}}});
  ep.base_url = broken.base_url();
  ep.max_retries = 0;
  cfg.endpoint = ep;
  HttpChatClient broken_client(broken.base_url());
  const auto s2 = run_matrix(cfg, &broken_client);
  EXPECT_EQ(s2.incomplete.size(), 4u);
  EXPECT_EQ(s2.computed.size(), 1u);
  EXPECT_FALSE(fs::exists(broken_dir / "cells/llm_zero_shot__k0__t0.0.jsonl"));
  EXPECT_TRUE(fs::exists(broken_dir / "cells/log_mean__k2__t0.0.jsonl"));
}

TEST(VerifyOracle, RejectsTooFewDraws) {
  ExperimentConfig cfg;
  cfg.mc_draws = 999;
  EXPECT_THROW(verify_oracle(cfg), ConfigError);
}

TEST(VerifyOracle, ReportHasPerLambdaTable) {
  const auto rep = verify_tasks({cashlab::testing::reference_task()}, LambdaGrid::decades(), 1000, 7);
  EXPECT_EQ(rep.per_lambda_max().size(), 8u);
  const auto text = rep.to_text();
  for (double l : LambdaGrid::decades()) EXPECT_NE(text.find(format_float_repr(l)), std::string::npos);
  EXPECT_LE(rep.max_deviation, 0.02);
  EXPECT_NEAR(rep.mean_deviation * 8,
              [&] {
                double s = 0;
                for (std::size_t l = 0; l < 8; ++l) s += std::abs(rep.rmt[0][l] - rep.mc[0][l]);
                return s;
              }(),
              1e-12);
}
