#pragma once

// Experiment orchestration: train one model per temperature, then repeat
// conformal trials over fresh calibration/test partitions and fresh shared
// mask sets, and aggregate the per-trial metrics.
//
// Seeding. Every random stream is derived from the base seed with
// derive_seed(base, {stream, ...}):
//   {kDataStream}            synthetic graph generation
//   {kTrainSplitStream}      the fixed training set
//   {kModelStream}           weight init + training masks (same for every beta)
//   {kTrialStream, i}        cal/test partition of trial i
//   {kMaskStream, i}         shared prediction masks of trial i
// so any single trial can be reproduced in isolation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bayescp/errors.hpp"
#include "bayescp/gcn.hpp"
#include "bayescp/graph.hpp"
#include "bayescp/metrics.hpp"

namespace bayescp {

class ConfigError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kTrainSplitStream = 2;
inline constexpr std::uint64_t kModelStream = 3;
inline constexpr std::uint64_t kTrialStream = 4;
inline constexpr std::uint64_t kMaskStream = 5;

enum class ModelKind { kFrequentist, kBayesian };

struct SplitSizes {
  std::size_t train = 0;
  std::size_t cal = 0;
  std::size_t test = 0;
};

struct ExperimentConfig {
  std::string name;
  // Exactly one of bundle_path / synthetic is used.
  std::optional<std::filesystem::path> bundle_path;
  std::optional<SbmSpec> synthetic;
  ModelKind model = ModelKind::kBayesian;
  std::vector<double> beta_grid;
  double alpha = 0.1;
  // MC samples per prediction pass.
  std::size_t mc_samples = 20;
  int epochs = 200;
  double lr = 0.005;
  double weight_decay = 0.0;
  double dropout = 0.0;
  std::vector<std::size_t> hidden_dims{16};
  // Defaults to none for node tasks and sum for graph tasks.
  std::optional<Readout> readout;
  // One entry (shared by all layers) or one per layer.
  std::vector<double> drop_rates{0.5};
  bool learn_drop_rates = false;
  std::size_t train_samples = 1;
  double prior_scale = 1.0;
  double prior_a = 1.0;
  double prior_b = 1.0;
  std::size_t n_trials = 100;
  std::uint64_t seed = 0;
  SplitSizes split;
  bool resample_train = false;
  bool force_nonempty = false;
  std::size_t reliability_bins = kDefaultBins;

  // Throws ConfigError.
  void validate() const;
};

// Field names follow the struct; see README for the full list.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ResultRow {
  std::string dataset;
  std::string model;
  std::optional<double> beta;
  std::size_t trial = 0;
  double coverage = 0.0;
  double inefficiency = 0.0;
  double empty_rate = 0.0;
  double accuracy = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  std::optional<double> combined;
  double threshold = 0.0;
};

struct CellInfo {
  std::string model;
  std::optional<double> beta;
  bool failed = false;
  std::string error;
  // Pooled over the test items of every trial.
  ReliabilityDiagram diagram;
};

struct ResultsTable {
  std::string dataset;
  std::vector<ResultRow> rows;
  std::vector<CellInfo> cells;
};

// Identifies a cell in file names: "frequentist" or "beta_<value>".
std::string cell_label(const std::string& model, const std::optional<double>& beta);

struct RunOptions {
  std::size_t parallel = 1;
  // When set, each trained model is saved to <dir>/<cell_label>.
  std::optional<std::filesystem::path> checkpoint_dir;
};

// Throws BundleError for unreadable data; per-cell training failures are
// recorded in the table instead.
ResultsTable run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// Builds the graph the config describes (loads or generates it).
GraphBundle materialize_dataset(const ExperimentConfig& config);

struct MetricSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

// Linear-interpolation quantiles; sample standard deviation (0 for n < 2).
MetricSummary summarize(std::vector<double> values);

struct CellSummary {
  std::string dataset;
  std::string model;
  std::optional<double> beta;
  MetricSummary coverage;
  MetricSummary inefficiency;
  MetricSummary empty_rate;
  MetricSummary accuracy;
  MetricSummary ece;
  MetricSummary mce;
  // Over trials where the combined measure is defined.
  MetricSummary combined;
  MetricSummary threshold;
};

struct SweepReport {
  std::vector<CellSummary> cells;
  // Set only when at least two beta cells exist. Ties go to the smallest beta.
  std::optional<double> best_beta;
  std::optional<double> best_inefficiency;
  // Betas ordered by mean combined measure (ascending), cells with a defined
  // measure only.
  std::vector<std::pair<double, double>> combined_ranking;
};

// Aggregates rows grouped by (dataset, model, beta) in order of first appearance.
SweepReport sweep_report(const std::vector<ResultRow>& rows);

nlohmann::ordered_json summary_json(const SweepReport& report, const std::vector<CellInfo>& cells);

// results.csv, summary.json, boxplot.json and one reliability_<cell>.csv per
// cell with a diagram.
void emit_outputs(const ResultsTable& table, const std::filesystem::path& out_dir);

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

}  // namespace bayescp
