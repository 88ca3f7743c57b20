#pragma once

// The selector x k x temperature experiment matrix, its on-disk result
// store, aggregate tables, and the oracle-vs-simulation verification sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cashlab/errors.hpp"
#include "cashlab/format.hpp"
#include "cashlab/io.hpp"
#include "cashlab/lambda_grid.hpp"
#include "cashlab/llm_selector.hpp"
#include "cashlab/parallel.hpp"
#include "cashlab/ridge_mc.hpp"
#include "cashlab/rmt_oracle.hpp"
#include "cashlab/seeding.hpp"
#include "cashlab/selectors.hpp"
#include "cashlab/task_space.hpp"

namespace cashlab {

inline const std::vector<std::string>& known_selectors() {
  static const std::vector<std::string> names{"log_mean", "logistic", "llm_zero_shot", "llm_meta_informed"};
  return names;
}

inline bool is_llm_selector(std::string_view s) { return s.rfind("llm_", 0) == 0; }

struct ExperimentConfig {
  std::uint64_t master_seed = 0;
  std::vector<std::size_t> k_list{1, 2, 5, 10, 15, 20, 50, 100};
  std::vector<double> temperatures{0.0};
  std::size_t trials_per_cell = 1000;
  std::vector<std::string> selectors{"log_mean", "logistic"};
  std::optional<LlmEndpointConfig> endpoint;
  std::filesystem::path output_dir = "results";
  std::filesystem::path templates_dir = "templates";
  int mc_draws = 5000;
  std::size_t verify_tasks = 20;
  std::size_t workers = 1;

  void validate() const {
    if (trials_per_cell < 1) throw ConfigError("trials_per_cell must be >= 1");
    if (temperatures.empty()) throw ConfigError("temperatures must not be empty");
    for (double t : temperatures)
      if (!(t >= 0.0 && t <= 1.0)) throw ConfigError(fmt::format("temperature {} outside [0, 1]", t));
    if (selectors.empty()) throw ConfigError("no selectors configured");
    for (const auto& s : selectors) {
      if (std::find(known_selectors().begin(), known_selectors().end(), s) == known_selectors().end())
        throw ConfigError(fmt::format("unknown selector '{}'", s));
      if (is_llm_selector(s) && !endpoint) throw ConfigError(fmt::format("selector {} needs an endpoint section", s));
    }
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (endpoint) endpoint->validate();
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
      c.master_seed = j.value("master_seed", c.master_seed);
      c.k_list = j.value("k_list", c.k_list);
      c.temperatures = j.value("temperatures", c.temperatures);
      c.trials_per_cell = j.value("trials_per_cell", c.trials_per_cell);
      c.selectors = j.value("selectors", c.selectors);
      if (j.contains("endpoint")) c.endpoint = LlmEndpointConfig::from_json(j.at("endpoint"));
      c.output_dir = j.value("output_dir", c.output_dir.string());
      c.templates_dir = j.value("templates_dir", c.templates_dir.string());
      c.mc_draws = j.value("mc_draws", c.mc_draws);
      c.verify_tasks = j.value("verify_tasks", c.verify_tasks);
      c.workers = j.value("workers", c.workers);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad experiment config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(read_text_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
    }
  }
};

struct CellKey {
  std::string selector;
  std::size_t k = 0;
  double temperature = 0.0;

  auto tie() const { return std::tie(selector, k, temperature); }
  bool operator<(const CellKey& o) const { return tie() < o.tie(); }
  bool operator==(const CellKey& o) const { return tie() == o.tie(); }

  std::string file_stem() const { return fmt::format("{}__k{}__t{}", selector, k, format_float_repr(temperature)); }
};

/// Baselines run once per k >= 1 at temperature 0; meta-informed prompting
/// runs per k >= 1 and temperature; zero-shot runs only at k = 0, once per
/// temperature, whether or not 0 is in k_list.
inline std::vector<CellKey> plan_cells(const ExperimentConfig& cfg) {
  std::vector<CellKey> cells;
  for (const auto& s : cfg.selectors) {
    if (s == "llm_zero_shot") {
      for (double t : cfg.temperatures) cells.push_back({s, 0, t});
      continue;
    }
    for (std::size_t k : cfg.k_list) {
      if (k == 0) continue;
      if (is_llm_selector(s))
        for (double t : cfg.temperatures) cells.push_back({s, k, t});
      else
        cells.push_back({s, k, 0.0});
    }
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

/// hash(master_seed, selector, k, temperature, trial index).
inline std::uint64_t trial_seed(std::uint64_t master, const CellKey& cell, std::size_t trial) {
  return mix_seed({master, fnv1a64(cell.selector), static_cast<std::uint64_t>(cell.k), seed_word(cell.temperature),
                   static_cast<std::uint64_t>(trial)});
}

struct TrialRecord {
  std::string selector;
  std::size_t k = 0;
  double temperature = 0.0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double chosen_lambda = 0.0;
  double lambda_star = 0.0;
  double regret = 0.0;
  int retries = 0;
  bool fallback = false;
  std::string target_json;

  CellKey cell() const { return {selector, k, temperature}; }

  std::string to_json_line() const {
    nlohmann::ordered_json j;
    j["selector"] = selector;
    j["k"] = k;
    j["temperature"] = temperature;
    j["trial"] = trial;
    j["seed"] = seed;
    j["chosen_lambda"] = chosen_lambda;
    j["lambda_star"] = lambda_star;
    j["regret"] = regret;
    j["retries"] = retries;
    j["fallback"] = fallback;
    j["target"] = nlohmann::ordered_json::parse(target_json);
    return j.dump();
  }

  static TrialRecord from_json(const nlohmann::json& j) {
    TrialRecord r;
    r.selector = j.at("selector").get<std::string>();
    r.k = j.at("k").get<std::size_t>();
    r.temperature = j.at("temperature").get<double>();
    r.trial = j.at("trial").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.chosen_lambda = j.at("chosen_lambda").get<double>();
    r.lambda_star = j.at("lambda_star").get<double>();
    r.regret = j.at("regret").get<double>();
    r.retries = j.at("retries").get<int>();
    r.fallback = j.at("fallback").get<bool>();
    r.target_json = j.at("target").dump();
    return r;
  }
};

/// Per-trial records ordered by (selector, k, temperature, trial).
struct ResultStore {
  std::vector<TrialRecord> records;

  void sort() {
    std::sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
      return std::tie(a.selector, a.k, a.temperature, a.trial) < std::tie(b.selector, b.k, b.temperature, b.trial);
    });
  }

  static ResultStore read_jsonl(std::istream& in) {
    ResultStore s;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (line.empty()) continue;
      try {
        s.records.push_back(TrialRecord::from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("bad trial record on line {}: {}", n, e.what()));
      }
    }
    s.sort();
    return s;
  }

  /// Reads every completed cell file under `dir`/cells.
  static ResultStore load_cells(const std::filesystem::path& dir) {
    ResultStore s;
    const auto cells = dir / "cells";
    if (!std::filesystem::exists(cells)) return s;
    for (const auto& entry : std::filesystem::directory_iterator(cells)) {
      if (entry.path().extension() != ".jsonl") continue;
      std::istringstream in(read_text_file(entry.path()));
      auto part = read_jsonl(in);
      s.records.insert(s.records.end(), part.records.begin(), part.records.end());
    }
    s.sort();
    return s;
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& r : records) out += r.to_json_line() + "\n";
    return out;
  }
};

struct AggregateRow {
  std::string selector;
  std::size_t k = 0;
  double temperature = 0.0;
  double mean_regret = 0.0;
  double std_error = 0.0;
  double ci90_low = 0.0;
  double ci90_high = 0.0;
  std::size_t n_trials = 0;
  double fallback_rate = 0.0;
};

inline constexpr double kZ90 = 1.645;

/// One row per non-empty cell; standard error uses the n - 1 sample variance.
inline std::vector<AggregateRow> aggregate(const ResultStore& store) {
  std::map<CellKey, std::vector<const TrialRecord*>> by_cell;
  for (const auto& r : store.records) by_cell[r.cell()].push_back(&r);
  std::vector<AggregateRow> rows;
  for (const auto& [cell, recs] : by_cell) {
    AggregateRow row{cell.selector, cell.k, cell.temperature};
    const double n = static_cast<double>(recs.size());
    double sum = 0.0, fallbacks = 0.0;
    for (const auto* r : recs) {
      sum += r->regret;
      fallbacks += r->fallback ? 1.0 : 0.0;
    }
    row.mean_regret = sum / n;
    double ss = 0.0;
    for (const auto* r : recs) ss += (r->regret - row.mean_regret) * (r->regret - row.mean_regret);
    row.std_error = recs.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    row.ci90_low = row.mean_regret - kZ90 * row.std_error;
    row.ci90_high = row.mean_regret + kZ90 * row.std_error;
    row.n_trials = recs.size();
    row.fallback_rate = fallbacks / n;
    rows.push_back(row);
  }
  return rows;
}

inline std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::string out = "# cashlab aggregate v1\n";
  out += "selector,k,temperature,mean_regret,std_error,ci90_low,ci90_high,n_trials,fallback_rate\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.selector, r.k, format_float_repr(r.temperature),
                       format_float_repr(r.mean_regret), format_float_repr(r.std_error), format_float_repr(r.ci90_low),
                       format_float_repr(r.ci90_high), r.n_trials, format_float_repr(r.fallback_rate));
  return out;
}

/// Writes aggregate.csv and trials.jsonl under `dir`. Planned cells with no
/// records are left out of the table and reported on `log`.
inline void emit_report(const ResultStore& store, const std::filesystem::path& dir,
                        const std::vector<CellKey>& planned = {}, std::ostream* log = nullptr) {
  if (store.records.empty()) throw DomainError("result store is empty");
  const auto rows = aggregate(store);
  if (log)
    for (const auto& c : planned)
      if (std::none_of(rows.begin(), rows.end(), [&](const auto& r) { return CellKey{r.selector, r.k, r.temperature} == c; }))
        *log << fmt::format("cell {} has no records; omitted from aggregate\n", c.file_stem());
  write_file_atomic(dir / "aggregate.csv", aggregate_csv(rows));
  write_file_atomic(dir / "trials.jsonl", store.to_jsonl());
}

namespace detail {

/// Oracle curves for generated tasks; failures carry the offending task.
inline CurveFn checked_curve_fn(const LambdaGrid& grid) {
  return [grid](const TaskSpec& t) {
    try {
      return error_curve(t, grid);
    } catch (const Error& e) {
      throw NumericalValidityError(fmt::format("oracle failed on task {}: {}", task_to_json(t, 0LL), e.what()));
    }
  };
}

inline TrialRecord make_record(const CellKey& cell, std::size_t trial_index, std::uint64_t seed, const Trial& trial,
                               const SelectorResult& r) {
  TrialRecord rec;
  rec.selector = cell.selector;
  rec.k = cell.k;
  rec.temperature = cell.temperature;
  rec.trial = trial_index;
  rec.seed = seed;
  rec.chosen_lambda = r.chosen_lambda;
  rec.lambda_star = trial.target_lambda_star;
  rec.regret = r.regret;
  rec.retries = r.retries;
  rec.fallback = r.fallback;
  rec.target_json = task_to_json(trial.target, std::string("NEW"));
  return rec;
}

}  // namespace detail

/// Regenerates the trial behind one record.
inline Trial trial_for(std::uint64_t master, const CellKey& cell, std::size_t trial_index, const LambdaGrid& grid) {
  Rng rng(trial_seed(master, cell, trial_index));
  return generate_trial(rng, cell.k, detail::checked_curve_fn(grid));
}

inline SelectorResult run_baseline(std::string_view selector, const Trial& trial, const LambdaGrid& grid) {
  SelectorResult r;
  r.selector_name = std::string(selector);
  if (selector == "log_mean") r.chosen_lambda = log_mean_select(trial, grid);
  else if (selector == "logistic") r.chosen_lambda = logistic_select(trial, grid);
  else throw ConfigError(fmt::format("'{}' is not a baseline selector", selector));
  r.regret = regret(r.chosen_lambda, trial.target_curve);
  return r;
}

struct RunSummary {
  std::vector<CellKey> planned;
  std::vector<CellKey> computed;
  std::vector<CellKey> skipped;     // already on disk
  std::vector<std::pair<CellKey, std::string>> incomplete;  // endpoint failures
};

/// Evaluates every planned cell not already on disk. Each finished cell is
/// written atomically to cells/<stem>.jsonl, so an interrupted run resumes
/// where it stopped. Endpoint failures leave only that cell incomplete; oracle
/// failures abort the run.
inline RunSummary run_matrix(const ExperimentConfig& cfg, ChatClient* client = nullptr, std::ostream* log = nullptr) {
  cfg.validate();
  const auto grid = LambdaGrid::decades();
  RunSummary summary;
  summary.planned = plan_cells(cfg);
  std::optional<PromptTemplates> templates;

  for (const auto& cell : summary.planned) {
    const auto path = cfg.output_dir / "cells" / (cell.file_stem() + ".jsonl");
    if (std::filesystem::exists(path)) {
      summary.skipped.push_back(cell);
      continue;
    }
    std::vector<TrialRecord> records(cfg.trials_per_cell);
    const bool llm = is_llm_selector(cell.selector);
    if (!llm) {
      parallel_for(cfg.trials_per_cell, cfg.workers, [&](std::size_t i) {
        const auto seed = trial_seed(cfg.master_seed, cell, i);
        const auto trial = trial_for(cfg.master_seed, cell, i, grid);
        records[i] = detail::make_record(cell, i, seed, trial, run_baseline(cell.selector, trial, grid));
      });
    } else {
      if (!client) throw ConfigError(fmt::format("cell {} needs an endpoint client", cell.file_stem()));
      if (!templates) templates = PromptTemplates::load(cfg.templates_dir);
      auto endpoint = *cfg.endpoint;
      endpoint.temperature = cell.temperature;
      const auto mode = cell.selector == "llm_zero_shot" ? PromptMode::zero_shot : PromptMode::meta_informed;
      std::ostringstream transcript_buf;
      TranscriptLog transcript(transcript_buf);
      try {
        parallel_for(cfg.trials_per_cell, endpoint.max_in_flight, [&](std::size_t i) {
          const auto seed = trial_seed(cfg.master_seed, cell, i);
          const auto trial = trial_for(cfg.master_seed, cell, i, grid);
          const auto r = select_lambda(trial, grid, mode, endpoint, *client, *templates, i, &transcript);
          records[i] = detail::make_record(cell, i, seed, trial, r);
        });
      } catch (const TransportError& e) {
        summary.incomplete.emplace_back(cell, e.what());
      } catch (const EndpointError& e) {
        summary.incomplete.emplace_back(cell, e.what());
      }
      write_file_atomic(cfg.output_dir / "transcripts" / (cell.file_stem() + ".jsonl"), transcript_buf.str());
      if (!summary.incomplete.empty() && summary.incomplete.back().first == cell) {
        if (log) *log << fmt::format("cell {} incomplete: {}\n", cell.file_stem(), summary.incomplete.back().second);
        continue;
      }
    }
    std::string body;
    for (const auto& r : records) body += r.to_json_line() + "\n";
    write_file_atomic(path, body);
    summary.computed.push_back(cell);
    if (log) *log << fmt::format("cell {} done ({} trials)\n", cell.file_stem(), records.size());
  }

  const auto store = ResultStore::load_cells(cfg.output_dir);
  if (!store.records.empty()) emit_report(store, cfg.output_dir, summary.planned, log);
  return summary;
}

// ---- oracle verification

struct VerificationReport {
  std::vector<TaskSpec> tasks;
  std::vector<double> lambdas;
  std::vector<std::vector<double>> rmt;        // [task][lambda]
  std::vector<std::vector<double>> mc;         // [task][lambda]
  std::vector<std::vector<double>> mc_se;      // [task][lambda]
  double max_deviation = 0.0;
  double mean_deviation = 0.0;
  std::size_t worst_task = 0;
  std::size_t worst_lambda = 0;
  std::size_t argmin_matches = 0;
  double max_argmin_regret = 0.0;  // MC regret of the oracle argmin
  double gate = 0.02;
  double fidelity_gate = 0.005;

  bool agreement_passed() const { return max_deviation <= gate; }
  bool fidelity_passed() const { return max_argmin_regret <= fidelity_gate; }
  bool passed() const { return agreement_passed() && fidelity_passed(); }

  std::vector<double> per_lambda_max() const {
    std::vector<double> out(lambdas.size(), 0.0);
    for (std::size_t t = 0; t < tasks.size(); ++t)
      for (std::size_t l = 0; l < lambdas.size(); ++l) out[l] = std::max(out[l], std::abs(rmt[t][l] - mc[t][l]));
    return out;
  }

  std::vector<double> per_lambda_mean() const {
    std::vector<double> out(lambdas.size(), 0.0);
    for (std::size_t t = 0; t < tasks.size(); ++t)
      for (std::size_t l = 0; l < lambdas.size(); ++l) out[l] += std::abs(rmt[t][l] - mc[t][l]) / tasks.size();
    return out;
  }

  std::string to_text() const {
    std::string out = fmt::format("oracle vs simulation: {} tasks x {} lambdas\n", tasks.size(), lambdas.size());
    out += fmt::format("{:>10}  {:>10}  {:>10}\n", "lambda", "max|dev|", "mean|dev|");
    const auto mx = per_lambda_max();
    const auto mn = per_lambda_mean();
    for (std::size_t l = 0; l < lambdas.size(); ++l)
      out += fmt::format("{:>10}  {:>10.5f}  {:>10.5f}\n", format_float_repr(lambdas[l]), mx[l], mn[l]);
    out += fmt::format("max deviation {:.5f} (gate {}), mean deviation {:.5f}\n", max_deviation, gate, mean_deviation);
    out += fmt::format("worst cell: lambda={} task={}\n", format_float_repr(lambdas[worst_lambda]),
                       task_to_json(tasks[worst_task], static_cast<long long>(worst_task)));
    out += fmt::format("argmin agreement {}/{}, max simulated regret of oracle argmin {:.5f} (gate {})\n",
                       argmin_matches, tasks.size(), max_argmin_regret, fidelity_gate);
    out += passed() ? "PASS\n" : "FAIL\n";
    return out;
  }
};

/// Compares oracle errors with simulated ones on `tasks` x grid.
inline VerificationReport verify_tasks(const std::vector<TaskSpec>& tasks, const LambdaGrid& grid, int mc_draws,
                                       std::uint64_t seed, std::size_t workers = 1) {
  if (mc_draws < 1000) throw ConfigError(fmt::format("mc_draws must be >= 1000, got {}", mc_draws));
  VerificationReport rep;
  rep.tasks = tasks;
  rep.lambdas = grid.values();
  double total = 0.0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto curve = error_curve(tasks[t], grid);
    const auto sim = mc_error_curve(tasks[t], grid, mc_draws, mix_seed({seed, static_cast<std::uint64_t>(t)}),
                                    McOptions{workers});
    std::vector<double> mc, se;
    for (const auto& e : sim) {
      mc.push_back(e.mean_error);
      se.push_back(e.std_error);
    }
    for (std::size_t l = 0; l < grid.size(); ++l) {
      const double dev = std::abs(curve.errors[l] - mc[l]);
      total += dev;
      if (dev > rep.max_deviation) {
        rep.max_deviation = dev;
        rep.worst_task = t;
        rep.worst_lambda = l;
      }
    }
    const auto mc_argmin = static_cast<std::size_t>(std::min_element(mc.begin(), mc.end()) - mc.begin());
    if (mc_argmin == curve.argmin) ++rep.argmin_matches;
    rep.max_argmin_regret = std::max(rep.max_argmin_regret, mc[curve.argmin] - mc[mc_argmin]);
    rep.rmt.push_back(curve.errors);
    rep.mc.push_back(std::move(mc));
    rep.mc_se.push_back(std::move(se));
  }
  rep.mean_deviation = total / static_cast<double>(tasks.size() * grid.size());
  return rep;
}

/// Draws cfg.verify_tasks tasks from the generator and runs verify_tasks.
inline VerificationReport verify_oracle(const ExperimentConfig& cfg) {
  if (cfg.mc_draws < 1000) throw ConfigError(fmt::format("mc_draws must be >= 1000, got {}", cfg.mc_draws));
  Rng rng(mix_seed({cfg.master_seed, fnv1a64("verify-oracle")}));
  std::vector<TaskSpec> tasks;
  for (std::size_t i = 0; i < cfg.verify_tasks; ++i) tasks.push_back(generate_task(rng));
  return verify_tasks(tasks, LambdaGrid::decades(), cfg.mc_draws, mix_seed({cfg.master_seed, fnv1a64("mc")}),
                      cfg.workers);
}

}  // namespace cashlab
