#pragma once

// Prompted lambda selection against a chat-completions endpoint.

#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include <Eigen/Dense>  // before httplib: <resolv.h> defines a _res macro that breaks Eigen
#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cashlab/errors.hpp"
#include "cashlab/io.hpp"
#include "cashlab/lambda_grid.hpp"
#include "cashlab/selectors.hpp"
#include "cashlab/task_space.hpp"

namespace cashlab {

enum class PromptMode { zero_shot, meta_informed };

inline std::string_view to_string(PromptMode m) {
  return m == PromptMode::zero_shot ? "zero_shot" : "meta_informed";
}

inline PromptMode prompt_mode_from_string(std::string_view s) {
  if (s == "zero_shot") return PromptMode::zero_shot;
  if (s == "meta_informed") return PromptMode::meta_informed;
  throw ConfigError(fmt::format("unknown prompt mode '{}'", s));
}

inline constexpr std::string_view kGridMarker = "{{LAMBDA_GRID_JSON}}";
inline constexpr std::string_view kPastMarker = "{{PAST_TASKS_JSON}}";
inline constexpr std::string_view kTaskMarker = "{{NEW_TASK_JSON}}";

namespace detail {

inline std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) ++n;
  return n;
}

inline void replace_once(std::string& text, std::string_view marker, const std::string& value) {
  const auto pos = text.find(marker);
  text.replace(pos, marker.size(), value);
}

}  // namespace detail

/// The two prompt templates with their placeholder markers. One trailing
/// newline is dropped from each file on load.
struct PromptTemplates {
  std::string zero_shot;
  std::string meta_informed;

  static PromptTemplates load(const std::filesystem::path& dir) {
    auto read = [&](const char* name) {
      auto text = read_text_file(dir / name);
      if (!text.empty() && text.back() == '\n') text.pop_back();
      return text;
    };
    PromptTemplates t{read("zero_shot.txt"), read("meta_informed.txt")};
    t.validate();
    return t;
  }

  void validate() const {
    auto require = [](const std::string& text, std::string_view marker, std::size_t count, std::string_view which) {
      if (detail::count_occurrences(text, marker) != count)
        throw ConfigError(fmt::format("{} template must contain {} exactly {} time(s)", which, marker, count));
    };
    require(zero_shot, kGridMarker, 1, "zero-shot");
    require(zero_shot, kTaskMarker, 1, "zero-shot");
    require(zero_shot, kPastMarker, 0, "zero-shot");
    require(meta_informed, kGridMarker, 1, "meta-informed");
    require(meta_informed, kTaskMarker, 1, "meta-informed");
    require(meta_informed, kPastMarker, 1, "meta-informed");
  }

  const std::string& get(PromptMode m) const { return m == PromptMode::zero_shot ? zero_shot : meta_informed; }
};

struct PromptBundle {
  std::string text;
  PromptMode mode = PromptMode::zero_shot;
  std::size_t k = 0;
  std::size_t trial_id = 0;
};

/// Zero-shot prompts ignore any support tasks and label the target 0;
/// meta-informed prompts list the support in generation order and label
/// the target "NEW".
inline PromptBundle render_prompt(const Trial& trial, const LambdaGrid& grid, PromptMode mode,
                                  const PromptTemplates& templates, std::size_t trial_id = 0) {
  if (mode == PromptMode::meta_informed && trial.k() == 0)
    throw InsufficientContextError("meta-informed prompt needs at least one support task");
  std::string text = templates.get(mode);
  // Substituted JSON never contains "{{", so order of replacement is irrelevant.
  detail::replace_once(text, kGridMarker, grid_to_json(grid));
  if (mode == PromptMode::meta_informed) {
    detail::replace_once(text, kPastMarker, support_to_json(trial.support));
    detail::replace_once(text, kTaskMarker, task_to_json(trial.target, std::string("NEW")));
  } else {
    detail::replace_once(text, kTaskMarker, task_to_json(trial.target, 0LL));
  }
  return {std::move(text), mode, mode == PromptMode::zero_shot ? 0 : trial.k(), trial_id};
}

enum class PromptPlacement { user, system };

struct LlmEndpointConfig {
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string model_name;
  double temperature = 0.0;
  int max_tokens = 5;
  int max_retries = 5;
  std::string auth_token_env = "CASHLAB_API_KEY";
  PromptPlacement placement = PromptPlacement::user;
  double timeout_seconds = 120.0;
  std::size_t max_in_flight = 4;

  void validate() const {
    if (base_url.empty()) throw ConfigError("endpoint base_url is empty");
    if (!(temperature >= 0.0 && temperature <= 1.0)) throw ConfigError("temperature must lie in [0, 1]");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (auth_token_env.empty()) throw ConfigError("auth_token_env is empty");
    if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  }

  static LlmEndpointConfig from_json(const nlohmann::json& j) {
    LlmEndpointConfig c;
    try {
      c.base_url = j.value("base_url", c.base_url);
      c.model_name = j.value("model_name", c.model_name);
      c.temperature = j.value("temperature", c.temperature);
      c.max_tokens = j.value("max_tokens", c.max_tokens);
      c.max_retries = j.value("max_retries", c.max_retries);
      c.auth_token_env = j.value("auth_token_env", c.auth_token_env);
      c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
      c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
      const auto placement = j.value("placement", std::string("user"));
      if (placement == "user") c.placement = PromptPlacement::user;
      else if (placement == "system") c.placement = PromptPlacement::system;
      else throw ConfigError(fmt::format("unknown prompt placement '{}'", placement));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad endpoint config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

struct ChatRequest {
  std::string model;
  nlohmann::json messages;
  double temperature = 0.0;
  int max_tokens = 5;
  std::string bearer_token;
};

struct ChatResponse {
  std::string content;
  int status = 200;
  double latency_seconds = 0.0;
  std::optional<long long> prompt_tokens;
  std::optional<long long> completion_tokens;
};

/// Transport seam. Implementations must be safe to call from several threads.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatResponse complete(const ChatRequest& req) = 0;
};

/// POSTs to {base_url}/chat/completions.
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(std::string base_url, double timeout_seconds = 120.0) : timeout_(timeout_seconds) {
    while (!base_url.empty() && base_url.back() == '/') base_url.pop_back();
    const auto scheme_end = base_url.find("://");
    const auto path_start = base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start == std::string::npos) {
      origin_ = base_url;
    } else {
      origin_ = base_url.substr(0, path_start);
      prefix_ = base_url.substr(path_start);
    }
  }

  ChatResponse complete(const ChatRequest& req) override {
    httplib::Client cli(origin_);
    const auto secs = static_cast<time_t>(timeout_);
    cli.set_read_timeout(secs, 0);
    cli.set_write_timeout(secs, 0);
    cli.set_connection_timeout(std::min<time_t>(secs, 30), 0);
    if (!cli.is_valid()) throw ConfigError(fmt::format("unsupported endpoint address '{}'", origin_));

    nlohmann::json body = {{"model", req.model},
                           {"messages", req.messages},
                           {"temperature", req.temperature},
                           {"max_tokens", req.max_tokens}};
    httplib::Headers headers = {{"Authorization", "Bearer " + req.bearer_token}};

    const auto t0 = std::chrono::steady_clock::now();
    auto res = cli.Post(prefix_ + "/chat/completions", headers, body.dump(), "application/json");
    const double latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!res) throw TransportError(fmt::format("request to {} failed: {}", origin_, httplib::to_string(res.error())));
    if (res->status < 200 || res->status >= 300)
      throw EndpointError(fmt::format("endpoint returned HTTP {}: {}", res->status, res->body.substr(0, 200)),
                          res->status);

    ChatResponse out;
    out.status = res->status;
    out.latency_seconds = latency;
    try {
      const auto j = nlohmann::json::parse(res->body);
      const auto& content = j.at("choices").at(0).at("message").at("content");
      out.content = content.is_string() ? content.get<std::string>() : std::string();
      if (j.contains("usage") && j["usage"].is_object()) {
        const auto& u = j["usage"];
        if (u.contains("prompt_tokens")) out.prompt_tokens = u["prompt_tokens"].get<long long>();
        if (u.contains("completion_tokens")) out.completion_tokens = u["completion_tokens"].get<long long>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("unparseable completion body: ") + e.what());
    }
    return out;
  }

 private:
  std::string origin_;
  std::string prefix_;
  double timeout_;
};

/// Appends one JSON object per line; shared across threads.
class TranscriptLog {
 public:
  explicit TranscriptLog(std::ostream& out) : out_(&out) {}

  void append(const nlohmann::ordered_json& record) {
    std::lock_guard lock(mu_);
    *out_ << record.dump() << '\n';
    out_->flush();
  }

 private:
  std::ostream* out_;
  std::mutex mu_;
};

inline std::string read_credential(const LlmEndpointConfig& cfg) {
  const char* v = std::getenv(cfg.auth_token_env.c_str());
  if (v == nullptr || *v == '\0')
    throw ConfigError(fmt::format("credential variable {} is not set", cfg.auth_token_env));
  return v;
}

/// One request. Returns the raw completion text and its metadata.
inline ChatResponse query_lambda(const PromptBundle& bundle, const LlmEndpointConfig& cfg, ChatClient& client) {
  ChatRequest req;
  req.model = cfg.model_name;
  req.temperature = cfg.temperature;
  req.max_tokens = cfg.max_tokens;
  req.bearer_token = read_credential(cfg);
  const char* role = cfg.placement == PromptPlacement::system ? "system" : "user";
  req.messages = nlohmann::json::array({{{"role", role}, {"content", bundle.text}}});
  return client.complete(req);
}

/// Grid value nearest (in log10) to the single number in `raw`, or nullopt.
inline std::optional<double> parse_and_snap(std::string_view raw, const LambdaGrid& grid) {
  auto is_markup = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) || c == '`' || c == '"' || c == '\'' || c == '*';
  };
  while (!raw.empty() && is_markup(raw.front())) raw.remove_prefix(1);
  while (!raw.empty() && is_markup(raw.back())) raw.remove_suffix(1);
  if (!raw.empty() && raw.back() == '.') raw.remove_suffix(1);
  if (raw.empty()) return std::nullopt;

  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), value);
  if (ec != std::errc() || ptr != raw.data() + raw.size()) return std::nullopt;
  if (!std::isfinite(value) || value <= 0.0) return std::nullopt;
  return grid.snap(value);
}

inline std::string_view llm_selector_name(PromptMode m) {
  return m == PromptMode::zero_shot ? "llm_zero_shot" : "llm_meta_informed";
}

/// render -> query -> parse, re-querying with identical settings until a
/// valid value arrives or max_retries re-queries are spent. Invalid output
/// then falls back to the log-mean choice (meta-informed) or the grid median
/// (zero-shot). Retryable transport/endpoint failures share the same budget;
/// once it is spent the last failure is rethrown with the trial attached.
inline SelectorResult select_lambda(const Trial& trial, const LambdaGrid& grid, PromptMode mode,
                                    const LlmEndpointConfig& cfg, ChatClient& client,
                                    const PromptTemplates& templates, std::size_t trial_id = 0,
                                    TranscriptLog* transcript = nullptr) {
  const auto bundle = render_prompt(trial, grid, mode, templates, trial_id);
  SelectorResult result;
  result.selector_name = std::string(llm_selector_name(mode));
  result.trial_id = trial_id;

  auto record = [&](int attempt) {
    nlohmann::ordered_json r;
    r["trial_id"] = trial_id;
    r["mode"] = to_string(mode);
    r["k"] = bundle.k;
    r["attempt"] = attempt;
    r["model"] = cfg.model_name;
    r["temperature"] = cfg.temperature;
    r["max_tokens"] = cfg.max_tokens;
    return r;
  };

  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    result.retries = attempt;
    auto r = record(attempt);
    if (attempt == 0) r["prompt"] = bundle.text;
    const bool last = attempt == cfg.max_retries;
    try {
      const auto resp = query_lambda(bundle, cfg, client);
      const auto snapped = parse_and_snap(resp.content, grid);
      r["status"] = resp.status;
      r["response"] = resp.content;
      r["latency_s"] = resp.latency_seconds;
      r["prompt_tokens"] = resp.prompt_tokens ? nlohmann::ordered_json(*resp.prompt_tokens) : nlohmann::ordered_json();
      r["completion_tokens"] = resp.completion_tokens ? nlohmann::ordered_json(*resp.completion_tokens) : nlohmann::ordered_json();
      r["parsed"] = snapped ? nlohmann::ordered_json(*snapped) : nlohmann::ordered_json();
      if (transcript) transcript->append(r);
      if (snapped) {
        result.chosen_lambda = *snapped;
        result.regret = regret(result.chosen_lambda, trial.target_curve);
        return result;
      }
    } catch (const TransportError& e) {
      r["error"] = e.what();
      if (transcript) transcript->append(r);
      if (last) throw TransportError(fmt::format("{} [trial={} mode={}]", e.what(), trial_id, to_string(mode)));
    } catch (const EndpointError& e) {
      r["status"] = e.status();
      r["error"] = e.what();
      if (transcript) transcript->append(r);
      if (last || !e.retryable())
        throw EndpointError(fmt::format("{} [trial={} mode={}]", e.what(), trial_id, to_string(mode)), e.status());
    }
  }

  result.fallback = true;
  result.chosen_lambda = mode == PromptMode::meta_informed ? log_mean_select(trial, grid) : grid.median();
  result.regret = regret(result.chosen_lambda, trial.target_curve);
  return result;
}

}  // namespace cashlab
