// bayescp command line.
//
//   bayescp run --config exp.json --out results/ [--seed N] [--parallel K]
//   bayescp sweep-report --in results/
//   bayescp convert-check --bundle data/cora/
//
// Exit codes: 0 success, 1 config error, 2 data error, 3 every cell failed.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "bayescp/errors.hpp"
#include "bayescp/experiments.hpp"
#include "bayescp/graph.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kDataError = 2;
constexpr int kTrainingError = 3;

int cmd_run(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
            std::size_t parallel) {
  bayescp::ExperimentConfig config;
  try {
    config = bayescp::load_config(config_path);
    if (seed) config.seed = *seed;
  } catch (const bayescp::ConfigError& e) {
    spdlog::error("{}", e.what());
    return kConfigError;
  }

  bayescp::ResultsTable table;
  try {
    bayescp::RunOptions options;
    options.parallel = parallel;
    options.checkpoint_dir = std::filesystem::path(out_dir) / "checkpoints";
    table = bayescp::run_experiment(config, options);
    bayescp::emit_outputs(table, out_dir);
  } catch (const bayescp::ConfigError& e) {
    spdlog::error("{}", e.what());
    return kConfigError;
  } catch (const bayescp::BundleError& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  } catch (const bayescp::Error& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }

  std::size_t failed = 0;
  for (const auto& c : table.cells) failed += c.failed ? 1 : 0;
  if (!table.cells.empty() && failed == table.cells.size()) {
    spdlog::error("training failed in every cell");
    return kTrainingError;
  }
  spdlog::info("wrote {} rows to {}", table.rows.size(), out_dir);
  return kOk;
}

int cmd_sweep_report(const std::string& in_dir) {
  try {
    const auto rows = bayescp::read_results_csv(std::filesystem::path(in_dir) / "results.csv");
    const auto report = bayescp::sweep_report(rows);
    std::cout << bayescp::summary_json(report, {}).dump(2) << '\n';
    if (report.best_beta) {
      spdlog::info("lowest mean inefficiency {} at beta = {}", *report.best_inefficiency, *report.best_beta);
    } else {
      spdlog::info("fewer than two beta cells; no selection");
    }
  } catch (const bayescp::Error& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
  return kOk;
}

int cmd_convert_check(const std::string& bundle_dir) {
  try {
    const auto b = bayescp::load_bundle(bundle_dir);
    nlohmann::ordered_json j;
    j["name"] = b.name;
    j["task"] = bayescp::to_string(b.task);
    j["num_nodes"] = b.num_nodes;
    j["num_edges"] = b.edges.size();
    j["feature_dim"] = b.feature_dim();
    j["num_classes"] = b.num_classes;
    if (b.task == bayescp::Task::kGraphClassification) j["num_graphs"] = b.num_graphs();
    j["train_items"] = b.train_items.size();
    j["valid"] = true;
    std::cout << j.dump(2) << '\n';
  } catch (const bayescp::Error& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  // stdout carries JSON reports; diagnostics go to stderr.
  spdlog::set_default_logger(spdlog::stderr_color_mt("bayescp"));

  CLI::App app{"Conformal prediction on Bayesian graph convolutional networks"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::size_t parallel = 1;
  auto* run = app.add_subcommand("run", "Train per temperature and run repeated conformal trials");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--seed", seed, "Override the config's base seed");
  run->add_option("--parallel", parallel, "Cells trained concurrently")->check(CLI::PositiveNumber);

  std::string in_dir;
  auto* report = app.add_subcommand("sweep-report", "Aggregate results.csv and pick the most efficient beta");
  report->add_option("--in", in_dir, "Directory written by 'run'")->required();

  std::string bundle_dir;
  auto* check = app.add_subcommand("convert-check", "Validate a graph bundle");
  check->add_option("--bundle", bundle_dir, "Bundle directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (*run) return cmd_run(config_path, out_dir, seed, parallel);
  if (*report) return cmd_sweep_report(in_dir);
  if (*check) return cmd_convert_check(bundle_dir);
  return kConfigError;
}
