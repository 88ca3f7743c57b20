// Command-line front end: experiment matrix, oracle verification and the
// CASH utilities.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cashlab/cash/blending.hpp"
#include "cashlab/cash/ensemble_config.hpp"
#include "cashlab/cash/maxucb.hpp"
#include "cashlab/cash/metadata.hpp"
#include "cashlab/experiment.hpp"

namespace {

using namespace cashlab;

std::string read_input(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  return read_text_file(path);
}

void write_output(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  write_file_atomic(path, text);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, sep);) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DomainError(fmt::format("line {}: '{}' is not a number", line, s));
  }
}

int cmd_generate(std::size_t k, std::size_t count, std::uint64_t seed, const std::string& out) {
  const auto grid = LambdaGrid::decades();
  Rng rng(seed);
  std::string text;
  for (std::size_t i = 0; i < count; ++i) text += trial_to_json(generate_trial(rng, k, rmt_curve_fn(grid)), i).dump() + "\n";
  write_output(out, text);
  return 0;
}

int cmd_verify(ExperimentConfig cfg, const std::string& json_out) {
  const auto rep = verify_oracle(cfg);
  std::cout << rep.to_text();
  if (!json_out.empty()) {
    nlohmann::ordered_json j;
    j["lambdas"] = rep.lambdas;
    j["rmt"] = rep.rmt;
    j["mc"] = rep.mc;
    j["mc_std_error"] = rep.mc_se;
    j["max_deviation"] = rep.max_deviation;
    j["mean_deviation"] = rep.mean_deviation;
    j["per_lambda_max"] = rep.per_lambda_max();
    j["per_lambda_mean"] = rep.per_lambda_mean();
    j["worst_task"] = nlohmann::ordered_json::parse(task_to_json(rep.tasks[rep.worst_task], static_cast<long long>(rep.worst_task)));
    j["worst_lambda"] = rep.lambdas[rep.worst_lambda];
    j["argmin_matches"] = rep.argmin_matches;
    j["max_argmin_regret"] = rep.max_argmin_regret;
    j["passed"] = rep.passed();
    write_output(json_out, j.dump(2) + "\n");
  }
  return rep.passed() ? 0 : 1;
}

int cmd_run(const ExperimentConfig& cfg) {
  std::unique_ptr<HttpChatClient> client;
  if (cfg.endpoint) client = std::make_unique<HttpChatClient>(cfg.endpoint->base_url, cfg.endpoint->timeout_seconds);
  const auto summary = run_matrix(cfg, client.get(), &std::cerr);
  fmt::print(stderr, "{} cells planned, {} computed, {} already present, {} incomplete\n", summary.planned.size(),
             summary.computed.size(), summary.skipped.size(), summary.incomplete.size());
  return summary.incomplete.empty() ? 0 : 1;
}

int cmd_report(const std::string& dir, const std::string& trials, const std::string& out) {
  ResultStore store;
  if (!trials.empty()) {
    std::istringstream in(read_input(trials));
    store = ResultStore::read_jsonl(in);
  } else {
    store = ResultStore::load_cells(dir);
  }
  emit_report(store, out.empty() ? dir : out, {}, &std::cerr);
  return 0;
}

/// CSV with a header row; one column is the target, every other column a model.
int cmd_blend(const std::string& path, const std::string& target_col, const std::string& metric_name,
              std::size_t rounds) {
  const auto metric = cash::metric_from_string(metric_name);
  std::istringstream in(read_input(path));
  std::string line;
  if (!std::getline(in, line)) throw DomainError("prediction file is empty");
  const auto header = split(line, ',');
  const auto target_it = std::find(header.begin(), header.end(), target_col);
  if (target_it == header.end()) throw DomainError(fmt::format("no '{}' column in header", target_col));
  const auto target_idx = static_cast<std::size_t>(target_it - header.begin());

  std::vector<std::vector<double>> cols(header.size());
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size())
      throw DomainError(fmt::format("line {}: {} fields, header has {}", n, cells.size(), header.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) cols[c].push_back(parse_double(cells[c], n));
  }
  auto to_vec = [](const std::vector<double>& v) {
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  std::vector<std::string> names;
  std::vector<Eigen::VectorXd> preds;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == target_idx) continue;
    names.push_back(header[c]);
    preds.push_back(to_vec(cols[c]));
  }
  const auto result = cash::greedy_blend(preds, to_vec(cols[target_idx]), metric, rounds);
  fmt::print("round,model,{}\n", cash::to_string(metric));
  for (std::size_t r = 0; r < result.selection.size(); ++r) {
    const double loss = result.loss_trace[r];
    fmt::print("{},{},{}\n", r + 1, names[result.selection[r]],
               format_float_repr(cash::higher_is_better(metric) ? -loss : loss));
  }
  const auto w = result.weights(names.size());
  fmt::print(stderr, "weights:");
  for (std::size_t i = 0; i < names.size(); ++i)
    if (w[i] > 0) fmt::print(stderr, " {}={}", names[i], format_float_repr(w[i]));
  fmt::print(stderr, "\n");
  return 0;
}

int cmd_bandit(const std::vector<double>& upper, std::size_t horizon, std::size_t seeds, std::uint64_t seed,
               double alpha) {
  std::vector<double> share(upper.size(), 0.0);
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto pulls = cash::simulate_uniform_bandit(upper, horizon, mix_seed({seed, s}), alpha);
    for (std::size_t i = 0; i < upper.size(); ++i)
      share[i] += static_cast<double>(pulls[i]) / static_cast<double>(horizon * seeds);
  }
  fmt::print("arm,upper,pull_share\n");
  for (std::size_t i = 0; i < upper.size(); ++i)
    fmt::print("{},{},{:.4f}\n", i, format_float_repr(upper[i]), share[i]);
  return 0;
}

int cmd_render_metadata(const std::string& path) {
  std::cout << cash::render_metadata(cash::DatasetMetadata::from_json(nlohmann::json::parse(read_input(path))));
  return 0;
}

int cmd_validate_config(const std::string& grid_path, const std::string& config_path, std::size_t expected) {
  const auto grid = cash::HyperparameterGrid::load(grid_path);
  const auto result = cash::validate_config(read_input(config_path), grid, expected);
  if (const auto* rej = std::get_if<cash::ConfigRejection>(&result)) {
    fmt::print("rejected: {} ({})\n", cash::to_string(rej->reason), rej->detail);
    return 2;
  }
  const auto& ok = std::get<cash::AcceptedConfig>(result);
  for (const auto& p : ok.projections)
    fmt::print(stderr, "projected {}[{}].{}: {} -> {}\n", p.family, p.row, p.column, format_float_repr(p.from),
               format_float_repr(p.to));
  std::cout << cash::render_config(ok.config, 2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learning laboratory for lambda selection and CASH utilities"};
  app.require_subcommand(1);

  // generate
  std::size_t gen_k = 5, gen_count = 10;
  std::uint64_t gen_seed = 0;
  std::string gen_out = "-";
  auto* gen = app.add_subcommand("generate", "Write solved trials (support + target) as JSONL");
  gen->add_option("-k,--support", gen_k, "Support tasks per trial");
  gen->add_option("-n,--count", gen_count, "Number of trials");
  gen->add_option("-s,--seed", gen_seed, "Seed");
  gen->add_option("-o,--out", gen_out, "Output file, - for stdout");

  // verify-oracle
  std::string verify_cfg_path, verify_json;
  std::uint64_t verify_seed = 0;
  int verify_draws = 5000;
  std::size_t verify_tasks = 20, verify_workers = 1;
  auto* verify = app.add_subcommand("verify-oracle", "Compare closed-form errors with simulation");
  verify->add_option("-c,--config", verify_cfg_path, "Experiment config (seed, mc_draws, verify_tasks, workers)");
  auto* vseed = verify->add_option("-s,--seed", verify_seed, "Master seed");
  auto* vdraws = verify->add_option("-d,--draws", verify_draws, "Simulated training sets per task (>= 1000)");
  auto* vtasks = verify->add_option("-t,--tasks", verify_tasks, "Number of generated tasks");
  auto* vworkers = verify->add_option("-j,--workers", verify_workers, "Worker threads");
  verify->add_option("--json", verify_json, "Also write the full report as JSON");

  // run
  std::string run_cfg_path, run_out;
  auto* run = app.add_subcommand("run", "Run (or resume) the experiment matrix");
  run->add_option("-c,--config", run_cfg_path, "Experiment config")->required();
  run->add_option("-o,--output-dir", run_out, "Override output_dir");

  // report
  std::string report_dir = "results", report_trials, report_out;
  auto* report = app.add_subcommand("report", "Rebuild aggregate.csv and trials.jsonl");
  report->add_option("-d,--dir", report_dir, "Results directory holding cells/");
  report->add_option("--trials", report_trials, "Read records from a trials JSONL file instead");
  report->add_option("-o,--out", report_out, "Output directory (defaults to --dir)");

  // blend
  std::string blend_path, blend_target = "target", blend_metric = "rmse";
  std::size_t blend_rounds = 50;
  auto* blend = app.add_subcommand("blend", "Greedy blend of model prediction columns");
  blend->add_option("predictions", blend_path, "CSV with a header row, - for stdin")->required();
  blend->add_option("--target", blend_target, "Name of the target column");
  blend->add_option("-m,--metric", blend_metric, "rmse | mae | rmsle | accuracy | log_loss | auc");
  blend->add_option("-r,--rounds", blend_rounds, "Maximum rounds");

  // bandit-sim
  std::vector<double> bandit_upper{0.6, 0.8, 1.0};
  std::size_t bandit_horizon = 500, bandit_seeds = 50;
  std::uint64_t bandit_seed = 0;
  double bandit_alpha = 0.5;
  auto* bandit = app.add_subcommand("bandit-sim", "MaxUCB on arms with Uniform[0, upper] rewards");
  bandit->add_option("-u,--upper", bandit_upper, "Upper reward bound per arm")->delimiter(',');
  bandit->add_option("--horizon", bandit_horizon, "Pulls per run");
  bandit->add_option("--runs", bandit_seeds, "Independent runs");
  bandit->add_option("-s,--seed", bandit_seed, "Seed");
  bandit->add_option("-a,--alpha", bandit_alpha, "Exploration parameter");

  // render-metadata
  std::string md_path;
  auto* md = app.add_subcommand("render-metadata", "Render a dataset metadata JSON file as the prompt block");
  md->add_option("metadata", md_path, "Metadata JSON, - for stdin")->required();

  // validate-config
  std::string vc_grid, vc_config;
  std::size_t vc_expected = 10;
  auto* vc = app.add_subcommand("validate-config", "Validate and repair an ensemble configuration");
  vc->add_option("-g,--grid", vc_grid, "Hyperparameter grid JSON")->required();
  vc->add_option("config", vc_config, "Configuration JSON, - for stdin")->required();
  vc->add_option("--models", vc_expected, "Required number of models");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_generate(gen_k, gen_count, gen_seed, gen_out);
    if (*verify) {
      ExperimentConfig cfg;
      if (!verify_cfg_path.empty()) cfg = ExperimentConfig::load(verify_cfg_path);
      if (verify_cfg_path.empty() || vseed->count()) cfg.master_seed = verify_seed;
      if (verify_cfg_path.empty() || vdraws->count()) cfg.mc_draws = verify_draws;
      if (verify_cfg_path.empty() || vtasks->count()) cfg.verify_tasks = verify_tasks;
      if (verify_cfg_path.empty() || vworkers->count()) cfg.workers = verify_workers;
      return cmd_verify(cfg, verify_json);
    }
    if (*run) {
      auto cfg = ExperimentConfig::load(run_cfg_path);
      if (!run_out.empty()) cfg.output_dir = run_out;
      return cmd_run(cfg);
    }
    if (*report) return cmd_report(report_dir, report_trials, report_out);
    if (*blend) return cmd_blend(blend_path, blend_target, blend_metric, blend_rounds);
    if (*bandit) return cmd_bandit(bandit_upper, bandit_horizon, bandit_seeds, bandit_seed, bandit_alpha);
    if (*md) return cmd_render_metadata(md_path);
    if (*vc) return cmd_validate_config(vc_grid, vc_config, vc_expected);
  } catch (const cashlab::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
