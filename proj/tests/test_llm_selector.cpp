#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "cashlab/llm_selector.hpp"
#include "mock_endpoint.hpp"
#include "test_helpers.hpp"

using namespace cashlab;
using cashlab::testing::MockEndpoint;
using cashlab::testing::ScriptedReply;
using namespace std::chrono_literals;

namespace {

const char* kKeyEnv = "CASHLAB_TEST_KEY";

PromptTemplates templates() { return PromptTemplates::load(CASHLAB_TEMPLATE_DIR); }

std::string fixture(const char* name) {
  return read_text_file(std::filesystem::path(CASHLAB_FIXTURE_DIR) / name);
}

std::vector<ScriptedReply> replies(std::initializer_list<const char*> contents) {
  std::vector<ScriptedReply> out;
  for (const char* c : contents) out.push_back({200, c, 0ms});
  return out;
}

class LlmEndpointTest : public ::testing::Test {
 protected:
  void SetUp() override { ::setenv(kKeyEnv, "secret-token", 1); }

  LlmEndpointConfig config(const MockEndpoint& mock, int max_retries = 5) const {
    LlmEndpointConfig cfg;
    cfg.base_url = mock.base_url();
    cfg.model_name = "mock-model";
    cfg.temperature = 0.4;
    cfg.max_retries = max_retries;
    cfg.auth_token_env = kKeyEnv;
    return cfg;
  }

  Trial trial = cashlab::testing::prompt_fixture_trial();
  LambdaGrid grid = LambdaGrid::decades();
  PromptTemplates tpl = templates();
};

}  // namespace

TEST(RenderPrompt, ZeroShotMatchesFrozenFixture) {
  const auto b = render_prompt(cashlab::testing::prompt_fixture_trial(), LambdaGrid::decades(),
                               PromptMode::zero_shot, templates());
  EXPECT_EQ(b.text, fixture("prompt_zero_shot.txt"));
  EXPECT_EQ(b.k, 0u);
}

TEST(RenderPrompt, MetaInformedMatchesFrozenFixture) {
  const auto b = render_prompt(cashlab::testing::prompt_fixture_trial(), LambdaGrid::decades(),
                               PromptMode::meta_informed, templates());
  EXPECT_EQ(b.text, fixture("prompt_meta_informed.txt"));
  EXPECT_EQ(b.k, 2u);
}

TEST(RenderPrompt, ZeroShotHasNoPastTasksSection) {
  const auto b = render_prompt(cashlab::testing::prompt_fixture_trial(), LambdaGrid::decades(),
                               PromptMode::zero_shot, templates());
  EXPECT_EQ(b.text.find("Past tasks"), std::string::npos);
  EXPECT_EQ(detail::count_occurrences(b.text, "\"task_id\""), 1u);
}

TEST(RenderPrompt, MetaInformedListsEverySupportTaskOnce) {
  const auto b = render_prompt(cashlab::testing::prompt_fixture_trial(), LambdaGrid::decades(),
                               PromptMode::meta_informed, templates());
  EXPECT_EQ(detail::count_occurrences(b.text, "\"lambda_star\""), 2u);
  EXPECT_EQ(detail::count_occurrences(b.text, "\"task_id\""), 3u);
  EXPECT_EQ(detail::count_occurrences(b.text, grid_to_json(LambdaGrid::decades())), 1u);
  EXPECT_EQ(detail::count_occurrences(b.text, "\"task_id\": \"NEW\""), 1u);
}

TEST(RenderPrompt, MetaInformedWithoutSupportIsRejected) {
  auto t = cashlab::testing::prompt_fixture_trial();
  t.support.clear();
  EXPECT_THROW(render_prompt(t, LambdaGrid::decades(), PromptMode::meta_informed, templates()),
               InsufficientContextError);
}

TEST(RenderPrompt, GeneratedTrialsRenderDeterministically) {
  const auto tpl = templates();
  const auto grid = LambdaGrid::decades();
  Rng rng(12);
  auto stub = [](const TaskSpec&) {
    ErrorCurve c;
    c.lambdas = LambdaGrid::decades().values();
    c.errors.assign(8, 0.1);
    return c;
  };
  for (int i = 0; i < 50; ++i) {
    const auto trial = generate_trial(rng, 1 + i % 10, stub);
    for (auto mode : {PromptMode::zero_shot, PromptMode::meta_informed}) {
      const auto a = render_prompt(trial, grid, mode, tpl);
      const auto b = render_prompt(trial, grid, mode, tpl);
      ASSERT_EQ(a.text, b.text);
      ASSERT_EQ(detail::count_occurrences(a.text, task_to_json(trial.target, mode == PromptMode::zero_shot
                                                                                   ? TaskId(0LL)
                                                                                   : TaskId(std::string("NEW")))),
                1u);
    }
  }
}

TEST(PromptTemplates, MissingMarkerIsConfigError) {
  auto tpl = templates();
  tpl.zero_shot = "no markers at all";
  EXPECT_THROW(tpl.validate(), ConfigError);
  tpl = templates();
  tpl.meta_informed += "{{NEW_TASK_JSON}}";
  EXPECT_THROW(tpl.validate(), ConfigError);
}

TEST(ParseAndSnap, Examples) {
  const auto grid = LambdaGrid::decades();
  EXPECT_EQ(parse_and_snap("0.001", grid), 1e-3);
  EXPECT_EQ(parse_and_snap("2e-3", grid), 1e-3);
  EXPECT_EQ(parse_and_snap("banana", grid), std::nullopt);
}

TEST(ParseAndSnap, StripsWhitespaceAndMarkup) {
  const auto grid = LambdaGrid::decades();
  EXPECT_EQ(parse_and_snap("  0.01\n", grid), 1e-2);
  EXPECT_EQ(parse_and_snap("`0.01`", grid), 1e-2);
  EXPECT_EQ(parse_and_snap("**10**", grid), 1e1);
  EXPECT_EQ(parse_and_snap("\"1e2\"", grid), 1e2);
  EXPECT_EQ(parse_and_snap("0.1.", grid), 1e-1);
  EXPECT_EQ(parse_and_snap("1", grid), 1e0);
}

TEST(ParseAndSnap, RejectsNonNumbersAndNonPositives) {
  const auto grid = LambdaGrid::decades();
  for (const char* raw : {"", "   ", "0", "-1", "-0.001", "nan", "inf", "0.001 0.01", "lambda=0.1", "1e-3x", "."})
    EXPECT_EQ(parse_and_snap(raw, grid), std::nullopt) << raw;
}

TEST(ParseAndSnap, ClampsBeyondGridEnds) {
  const auto grid = LambdaGrid::decades();
  EXPECT_EQ(parse_and_snap("1e-9", grid), 1e-4);
  EXPECT_EQ(parse_and_snap("1e9", grid), 1e3);
}

TEST(ParseAndSnap, IdentityOnRenderedGridMembers) {
  const auto grid = LambdaGrid::decades();
  for (double g : grid) {
    EXPECT_EQ(parse_and_snap(format_float_repr(g), grid), g);
    EXPECT_EQ(parse_and_snap(fmt::format("{:e}", g), grid), g);
  }
}

TEST(ParseAndSnap, AgreesWithBruteForceLogDistance) {
  const auto grid = LambdaGrid::decades();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> expo(-6.0, 5.0);
  for (int i = 0; i < 10000; ++i) {
    const double x = std::pow(10.0, expo(rng));
    double best = grid[0];
    for (double g : grid)
      if (std::abs(std::log10(x) - std::log10(g)) < std::abs(std::log10(x) - std::log10(best)) - 1e-12) best = g;
    ASSERT_EQ(parse_and_snap(fmt::format("{:.17g}", x), grid), best) << x;
  }
}

TEST_F(LlmEndpointTest, PassesCompletionTextThrough) {
  MockEndpoint mock(replies({"0.001"}));
  HttpChatClient client(mock.base_url());
  const auto resp = query_lambda(render_prompt(trial, grid, PromptMode::zero_shot, tpl), config(mock), client);
  EXPECT_EQ(resp.content, "0.001");
  EXPECT_EQ(resp.prompt_tokens, 321);
  EXPECT_EQ(resp.completion_tokens, 3);
}

TEST_F(LlmEndpointTest, RequestCarriesConfiguredSettings) {
  MockEndpoint mock(replies({"0.001"}));
  HttpChatClient client(mock.base_url());
  const auto bundle = render_prompt(trial, grid, PromptMode::meta_informed, tpl);
  query_lambda(bundle, config(mock), client);
  const auto reqs = mock.requests();
  ASSERT_EQ(reqs.size(), 1u);
  EXPECT_EQ(reqs[0]["model"], "mock-model");
  EXPECT_EQ(reqs[0]["temperature"], 0.4);
  EXPECT_EQ(reqs[0]["max_tokens"], 5);
  ASSERT_EQ(reqs[0]["messages"].size(), 1u);
  EXPECT_EQ(reqs[0]["messages"][0]["role"], "user");
  EXPECT_EQ(reqs[0]["messages"][0]["content"], bundle.text);
  EXPECT_EQ(mock.auth_headers()[0], "Bearer secret-token");
}

TEST_F(LlmEndpointTest, SystemPlacementUsesSystemRole) {
  MockEndpoint mock(replies({"0.001"}));
  HttpChatClient client(mock.base_url());
  auto cfg = config(mock);
  cfg.placement = PromptPlacement::system;
  query_lambda(render_prompt(trial, grid, PromptMode::zero_shot, tpl), cfg, client);
  EXPECT_EQ(mock.requests()[0]["messages"][0]["role"], "system");
}

TEST_F(LlmEndpointTest, Http500SurfacesStatus) {
  MockEndpoint mock({{500, "", 0ms}});
  HttpChatClient client(mock.base_url());
  try {
    query_lambda(render_prompt(trial, grid, PromptMode::zero_shot, tpl), config(mock), client);
    FAIL() << "expected EndpointError";
  } catch (const EndpointError& e) {
    EXPECT_EQ(e.status(), 500);
    EXPECT_TRUE(e.retryable());
  }
}

TEST_F(LlmEndpointTest, LatencyCoversInjectedDelay) {
  MockEndpoint mock({{200, "0.1", 2000ms}});
  HttpChatClient client(mock.base_url());
  const auto resp = query_lambda(render_prompt(trial, grid, PromptMode::zero_shot, tpl), config(mock), client);
  EXPECT_GE(resp.latency_seconds, 2.0);
}

TEST_F(LlmEndpointTest, MissingCredentialIsConfigError) {
  MockEndpoint mock(replies({"0.1"}));
  HttpChatClient client(mock.base_url());
  auto cfg = config(mock);
  cfg.auth_token_env = "CASHLAB_TEST_KEY_THAT_IS_NOT_SET";
  EXPECT_THROW(query_lambda(render_prompt(trial, grid, PromptMode::zero_shot, tpl), cfg, client), ConfigError);
  EXPECT_TRUE(mock.requests().empty());
}

TEST_F(LlmEndpointTest, ValidFirstTryRecordsNoRetries) {
  MockEndpoint mock(replies({"0.01"}));
  HttpChatClient client(mock.base_url());
  const auto r = select_lambda(trial, grid, PromptMode::meta_informed, config(mock), client, tpl, 7);
  EXPECT_EQ(r.chosen_lambda, 1e-2);
  EXPECT_EQ(r.retries, 0);
  EXPECT_FALSE(r.fallback);
  EXPECT_EQ(r.trial_id, 7u);
  EXPECT_EQ(r.selector_name, "llm_meta_informed");
  EXPECT_EQ(r.regret, regret(1e-2, trial.target_curve));
}

TEST_F(LlmEndpointTest, InvalidTwiceThenOne) {
  MockEndpoint mock(replies({"banana", "lambda?", "1"}));
  HttpChatClient client(mock.base_url());
  const auto r = select_lambda(trial, grid, PromptMode::meta_informed, config(mock), client, tpl);
  EXPECT_EQ(r.retries, 2);
  EXPECT_EQ(r.chosen_lambda, 1e0);
  EXPECT_FALSE(r.fallback);
  EXPECT_EQ(mock.requests().size(), 3u);
}

TEST_F(LlmEndpointTest, ExhaustedMetaInformedFallsBackToLogMean) {
  MockEndpoint mock(replies({"no idea"}));
  HttpChatClient client(mock.base_url());
  const auto r = select_lambda(trial, grid, PromptMode::meta_informed, config(mock, 3), client, tpl);
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.retries, 3);
  EXPECT_EQ(mock.requests().size(), 4u);
  EXPECT_EQ(r.chosen_lambda, log_mean_select(trial, grid));
}

TEST_F(LlmEndpointTest, ExhaustedZeroShotFallsBackToGridMedian) {
  MockEndpoint mock(replies({"-5"}));
  HttpChatClient client(mock.base_url());
  const auto r = select_lambda(trial, grid, PromptMode::zero_shot, config(mock, 1), client, tpl);
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.chosen_lambda, grid.median());
  EXPECT_EQ(mock.requests().size(), 2u);
}

TEST_F(LlmEndpointTest, ServerErrorsShareTheRetryBudget) {
  MockEndpoint mock({{503, "", 0ms}, {429, "", 0ms}, {200, "100", 0ms}});
  HttpChatClient client(mock.base_url());
  const auto r = select_lambda(trial, grid, PromptMode::meta_informed, config(mock), client, tpl);
  EXPECT_EQ(r.chosen_lambda, 1e2);
  EXPECT_EQ(r.retries, 2);
}

TEST_F(LlmEndpointTest, PersistentServerErrorIsHardErrorWithTrialContext) {
  MockEndpoint mock({{500, "", 0ms}});
  HttpChatClient client(mock.base_url());
  try {
    select_lambda(trial, grid, PromptMode::meta_informed, config(mock, 2), client, tpl, 42);
    FAIL() << "expected EndpointError";
  } catch (const EndpointError& e) {
    EXPECT_EQ(e.status(), 500);
    EXPECT_NE(std::string(e.what()).find("trial=42"), std::string::npos);
  }
  EXPECT_EQ(mock.requests().size(), 3u);
}

TEST_F(LlmEndpointTest, ClientErrorIsNotRetried) {
  MockEndpoint mock({{400, "", 0ms}});
  HttpChatClient client(mock.base_url());
  EXPECT_THROW(select_lambda(trial, grid, PromptMode::meta_informed, config(mock), client, tpl), EndpointError);
  EXPECT_EQ(mock.requests().size(), 1u);
}

TEST_F(LlmEndpointTest, UnreachableEndpointIsTransportError) {
  LlmEndpointConfig cfg;
  cfg.base_url = "http://127.0.0.1:1/v1";
  cfg.auth_token_env = kKeyEnv;
  cfg.max_retries = 1;
  cfg.timeout_seconds = 2;
  HttpChatClient client(cfg.base_url, cfg.timeout_seconds);
  try {
    select_lambda(trial, grid, PromptMode::zero_shot, cfg, client, tpl, 3);
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_NE(std::string(e.what()).find("trial=3"), std::string::npos);
  }
}

TEST_F(LlmEndpointTest, TranscriptHasOneLinePerRequest) {
  MockEndpoint mock(replies({"x", "y", "0.001"}));
  HttpChatClient client(mock.base_url());
  std::ostringstream sink;
  TranscriptLog log(sink);
  select_lambda(trial, grid, PromptMode::meta_informed, config(mock), client, tpl, 5, &log);
  std::istringstream in(sink.str());
  std::vector<nlohmann::json> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["prompt"], render_prompt(trial, grid, PromptMode::meta_informed, tpl).text);
  EXPECT_EQ(lines[2]["parsed"], 1e-3);
  EXPECT_TRUE(lines[1]["parsed"].is_null());
  EXPECT_EQ(lines[2]["attempt"], 2);
  for (const auto& l : lines) EXPECT_EQ(l["trial_id"], 5);
  EXPECT_EQ(sink.str().find("secret-token"), std::string::npos);
}

TEST_F(LlmEndpointTest, RetryCountNeverExceedsBudget) {
  std::mt19937_64 rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<ScriptedReply> script;
    for (int i = 0; i < 6; ++i) script.push_back({200, rng() % 3 == 0 ? "0.1" : "nope", 0ms});
    MockEndpoint mock(script);
    HttpChatClient client(mock.base_url());
    const int budget = static_cast<int>(rng() % 4);
    const auto r = select_lambda(trial, grid, PromptMode::meta_informed, config(mock, budget), client, tpl);
    ASSERT_LE(r.retries, budget);
    ASSERT_EQ(mock.requests().size(), static_cast<std::size_t>(r.retries + 1));
    ASSERT_EQ(r.fallback, script[static_cast<std::size_t>(r.retries)].content != "0.1");
  }
}

TEST(LlmEndpointConfig, ValidationAndJson) {
  EXPECT_THROW(LlmEndpointConfig::from_json({{"max_tokens", 0}}), ConfigError);
  EXPECT_THROW(LlmEndpointConfig::from_json({{"max_retries", -1}}), ConfigError);
  EXPECT_THROW(LlmEndpointConfig::from_json({{"temperature", 1.5}}), ConfigError);
  EXPECT_THROW(LlmEndpointConfig::from_json({{"placement", "assistant"}}), ConfigError);
  const auto c = LlmEndpointConfig::from_json({{"model_name", "m"}, {"placement", "system"}});
  EXPECT_EQ(c.max_tokens, 5);
  EXPECT_EQ(c.placement, PromptPlacement::system);
}
