#include "bayescp/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "bayescp/conformal.hpp"
#include "bayescp/gdc.hpp"

namespace bayescp {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (bundle_path.has_value() == synthetic.has_value()) {
    throw ConfigError("dataset: give exactly one of 'bundle' or 'synthetic'");
  }
  if (model == ModelKind::kBayesian && beta_grid.empty()) throw ConfigError("beta_grid must be nonempty for bayesian runs");
  for (double b : beta_grid) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("beta_grid: values must be finite and >= 0");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
  if (mc_samples < 1) throw ConfigError("T must be >= 1");
  if (train_samples < 1) throw ConfigError("train_samples must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (split.test < 1) throw ConfigError("split.test must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (drop_rates.empty()) throw ConfigError("drop_rates must be nonempty");
  for (double p : drop_rates) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("drop_rates must lie in [0, 1]");
    if (learn_drop_rates && !(p > 0.0 && p < 1.0)) throw ConfigError("learnable drop_rates must lie in (0, 1)");
  }
  if (!(prior_scale > 0.0 && prior_a > 0.0 && prior_b > 0.0)) throw ConfigError("prior parameters must be positive");
  if (reliability_bins < 1) throw ConfigError("reliability_bins must be >= 1");
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  try {
    c.name = j.value("name", std::string{});
    const auto& ds = j.at("dataset");
    if (ds.contains("bundle")) c.bundle_path = ds.at("bundle").get<std::string>();
    if (ds.contains("synthetic")) {
      const auto& s = ds.at("synthetic");
      SbmSpec spec;
      spec.communities = s.value("communities", spec.communities);
      spec.nodes_per_community = s.value("nodes_per_community", spec.nodes_per_community);
      spec.p_in = s.value("p_in", spec.p_in);
      spec.p_out = s.value("p_out", spec.p_out);
      spec.feature_noise = s.value("feature_noise", spec.feature_noise);
      spec.label_noise = s.value("label_noise", spec.label_noise);
      spec.extra_features = s.value("extra_features", spec.extra_features);
      c.synthetic = spec;
    }
    const auto model = j.value("model", std::string("bayesian"));
    if (model == "bayesian") {
      c.model = ModelKind::kBayesian;
    } else if (model == "frequentist") {
      c.model = ModelKind::kFrequentist;
    } else {
      throw ConfigError("model must be 'frequentist' or 'bayesian'");
    }
    c.beta_grid = j.value("beta_grid", std::vector<double>{});
    c.alpha = j.value("alpha", c.alpha);
    c.mc_samples = j.value("T", c.mc_samples);
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.dropout = j.value("dropout", c.dropout);
    c.hidden_dims = j.value("hidden_dims", c.hidden_dims);
    if (j.contains("readout")) c.readout = parse_readout(j.at("readout").get<std::string>());
    c.drop_rates = j.value("drop_rates", c.drop_rates);
    c.learn_drop_rates = j.value("learn_drop_rates", c.learn_drop_rates);
    c.train_samples = j.value("train_samples", c.train_samples);
    c.prior_scale = j.value("prior_scale", c.prior_scale);
    c.prior_a = j.value("prior_a", c.prior_a);
    c.prior_b = j.value("prior_b", c.prior_b);
    c.n_trials = j.value("n_trials", c.n_trials);
    c.seed = j.value("seed", c.seed);
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split.train = s.value("train", std::size_t{0});
      c.split.cal = s.value("cal", std::size_t{0});
      c.split.test = s.value("test", std::size_t{0});
    }
    c.resample_train = j.value("resample_train", c.resample_train);
    c.force_nonempty = j.value("force_nonempty", c.force_nonempty);
    c.reliability_bins = j.value("reliability_bins", c.reliability_bins);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ValueError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto c = parse_config(j);
  if (c.bundle_path && c.bundle_path->is_relative()) c.bundle_path = path.parent_path() / *c.bundle_path;
  return c;
}

// ---------------------------------------------------------------------------
// Running

namespace {

std::string format_double(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

struct CellOutput {
  CellInfo info;
  std::vector<ResultRow> rows;
};

struct Experiment {
  const ExperimentConfig& config;
  GraphBundle bundle;
  NeighborIndex index;
  std::vector<int> labels;
  GcnConfig gcn;
  std::vector<double> drop_rates;
  std::vector<SplitSpec> splits;
};

BayesianModel train_cell_bayesian(const Experiment& ex, double beta, const SplitSpec& split) {
  const auto& c = ex.config;
  TemperatureConfig temp{beta, c.prior_scale, c.prior_a, c.prior_b};
  DropRates drop = c.learn_drop_rates ? DropRates::learnable(ex.drop_rates) : DropRates::fixed(ex.drop_rates);
  Rng rng(derive_seed(c.seed, kModelStream));
  BayesianTrainOptions opts;
  opts.epochs = c.epochs;
  opts.lr = c.lr;
  opts.drop_rate_lr = c.lr;
  opts.train_samples = c.train_samples;
  return train_bayesian(ex.bundle, ex.index, split, ex.gcn, temp, std::move(drop), rng, opts);
}

FrequentistModel train_cell_frequentist(const Experiment& ex, const SplitSpec& split) {
  Rng rng(derive_seed(ex.config.seed, kModelStream));
  return train_frequentist(ex.bundle, ex.index, split, ex.gcn, rng, ex.config.epochs, ex.config.lr);
}

ResultRow make_row(const Experiment& ex, const std::string& model, std::optional<double> beta, std::size_t trial,
                   const MetricsReport& m) {
  ResultRow r;
  r.dataset = ex.bundle.name;
  r.model = model;
  r.beta = beta;
  r.trial = trial;
  r.coverage = m.coverage;
  r.inefficiency = m.inefficiency;
  r.empty_rate = m.empty_rate;
  r.accuracy = m.accuracy;
  r.ece = m.ece;
  r.mce = m.mce;
  r.combined = m.combined;
  r.threshold = m.threshold;
  return r;
}

CellOutput run_cell(const Experiment& ex, std::optional<double> beta, const RunOptions& options) {
  const auto& c = ex.config;
  const bool bayesian = c.model == ModelKind::kBayesian;
  const std::string model_name = bayesian ? "bayesian" : "frequentist";
  CellOutput out;
  out.info.model = model_name;
  out.info.beta = beta;
  out.info.diagram.bins.resize(c.reliability_bins);
  const ConformalConfig cp{c.alpha, c.force_nonempty};

  try {
    std::optional<BayesianModel> bmodel;
    std::optional<FrequentistModel> fmodel;
    std::optional<PredictiveTable> fixed_table;
    auto train = [&](const SplitSpec& split) {
      if (bayesian) {
        bmodel = train_cell_bayesian(ex, *beta, split);
      } else {
        fmodel = train_cell_frequentist(ex, split);
        fixed_table = predict_deterministic(fmodel->config, fmodel->params, ex.bundle, ex.index);
      }
    };
    if (!c.resample_train) {
      train(ex.splits.front());
      if (options.checkpoint_dir) {
        const auto dir = *options.checkpoint_dir / cell_label(model_name, beta);
        if (bayesian) {
          save_checkpoint(dir, *bmodel);
        } else {
          save_checkpoint(dir, fmodel->config, fmodel->params, json{{"model", "frequentist"}});
        }
      }
    }
    for (std::size_t trial = 0; trial < c.n_trials; ++trial) {
      const SplitSpec& split = ex.splits[trial];
      if (c.resample_train) train(split);
      PredictiveTable table;
      if (bayesian) {
        std::vector<double> keep;
        for (std::size_t l = 0; l < bmodel->drop.num_layers(); ++l) keep.push_back(bmodel->drop.keep_prob(l));
        const MaskSet masks(derive_seed(c.seed, {kMaskStream, trial}), c.mc_samples, std::move(keep));
        table = mc_predict(*bmodel, ex.bundle, ex.index, masks);
      } else {
        table = *fixed_table;
      }
      const auto result = run_scp(table, ex.labels, split, cp);
      const auto metrics = evaluate_trial(result, table, ex.labels, split.test, c.reliability_bins);
      out.info.diagram.merge(metrics.diagram);
      out.rows.push_back(make_row(ex, model_name, beta, trial, metrics));
    }
  } catch (const Error& e) {
    out.info.failed = true;
    out.info.error = e.what();
    out.rows.clear();
  }
  return out;
}

}  // namespace

std::string cell_label(const std::string& model, const std::optional<double>& beta) {
  if (!beta) return model;
  return "beta_" + format_double(*beta);
}

GraphBundle materialize_dataset(const ExperimentConfig& config) {
  if (config.bundle_path) return load_bundle(*config.bundle_path);
  Rng rng(derive_seed(config.seed, kDataStream));
  auto b = generate_sbm(rng, *config.synthetic);
  b.name = config.name.empty() ? "sbm" : config.name;
  return b;
}

ResultsTable run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  Experiment ex{config, materialize_dataset(config), {}, {}, {}, {}, {}};
  ex.index = NeighborIndex(ex.bundle);
  ex.labels = ex.bundle.item_labels();

  ex.gcn.layer_dims.push_back(ex.bundle.feature_dim());
  ex.gcn.layer_dims.insert(ex.gcn.layer_dims.end(), config.hidden_dims.begin(), config.hidden_dims.end());
  ex.gcn.layer_dims.push_back(ex.bundle.num_classes);
  ex.gcn.readout = config.readout.value_or(ex.bundle.task == Task::kNodeClassification ? Readout::kNone : Readout::kSum);
  ex.gcn.weight_decay = config.weight_decay;
  ex.gcn.dropout_rate = config.dropout;
  try {
    ex.gcn.validate(ex.bundle.task);
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  const std::size_t layers = ex.gcn.num_layers();
  if (config.drop_rates.size() == 1) {
    ex.drop_rates.assign(layers, config.drop_rates.front());
  } else if (config.drop_rates.size() == layers) {
    ex.drop_rates = config.drop_rates;
  } else {
    throw ConfigError("drop_rates: need 1 or " + std::to_string(layers) + " entries");
  }

  try {
    std::optional<std::vector<std::size_t>> fixed_train;
    if (!config.resample_train) {
      if (!ex.bundle.train_items.empty()) {
        fixed_train = ex.bundle.train_items;
      } else {
        Rng rng(derive_seed(config.seed, kTrainSplitStream));
        fixed_train = resample_split(rng, ex.bundle, config.split.train, 0, 0).train;
      }
    }
    for (std::size_t trial = 0; trial < config.n_trials; ++trial) {
      Rng rng(derive_seed(config.seed, {kTrialStream, trial}));
      ex.splits.push_back(resample_split(rng, ex.bundle, config.split.train, config.split.cal, config.split.test, fixed_train));
    }
  } catch (const ValueError& e) {
    throw ConfigError(std::string("split: ") + e.what());
  }

  std::vector<std::optional<double>> cells;
  if (config.model == ModelKind::kFrequentist) {
    cells.emplace_back(std::nullopt);
  } else {
    for (double b : config.beta_grid) cells.emplace_back(b);
  }

  std::vector<CellOutput> outputs(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      spdlog::info("cell {} ({}/{}) started", cell_label(config.model == ModelKind::kBayesian ? "bayesian" : "frequentist", cells[i]),
                   i + 1, cells.size());
      outputs[i] = run_cell(ex, cells[i], options);
      if (outputs[i].info.failed) spdlog::warn("cell {} failed: {}", i + 1, outputs[i].info.error);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.parallel, cells.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  ResultsTable table;
  table.dataset = ex.bundle.name;
  for (auto& o : outputs) {
    table.rows.insert(table.rows.end(), o.rows.begin(), o.rows.end());
    table.cells.push_back(std::move(o.info));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Aggregation

namespace {

double quantile_sorted(const std::vector<double>& v, double p) {
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  if (lo == hi) return v[lo];
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

MetricSummary summarize(std::vector<double> values) {
  MetricSummary s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double x : values) sum += x;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : values) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  return s;
}

SweepReport sweep_report(const std::vector<ResultRow>& rows) {
  SweepReport report;
  std::vector<std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) {
    auto it = std::find_if(report.cells.begin(), report.cells.end(), [&](const CellSummary& c) {
      return c.dataset == r.dataset && c.model == r.model && c.beta == r.beta;
    });
    if (it == report.cells.end()) {
      report.cells.push_back(CellSummary{r.dataset, r.model, r.beta, {}, {}, {}, {}, {}, {}, {}, {}});
      groups.emplace_back();
      it = report.cells.end() - 1;
    }
    groups[static_cast<std::size_t>(it - report.cells.begin())].push_back(&r);
  }
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto collect = [&](auto field) {
      std::vector<double> v;
      for (const ResultRow* r : groups[i]) v.push_back(field(*r));
      return summarize(std::move(v));
    };
    auto& c = report.cells[i];
    c.coverage = collect([](const ResultRow& r) { return r.coverage; });
    c.inefficiency = collect([](const ResultRow& r) { return r.inefficiency; });
    c.empty_rate = collect([](const ResultRow& r) { return r.empty_rate; });
    c.accuracy = collect([](const ResultRow& r) { return r.accuracy; });
    c.ece = collect([](const ResultRow& r) { return r.ece; });
    c.mce = collect([](const ResultRow& r) { return r.mce; });
    c.threshold = collect([](const ResultRow& r) { return r.threshold; });
    std::vector<double> combined;
    for (const ResultRow* r : groups[i]) {
      if (r->combined) combined.push_back(*r->combined);
    }
    c.combined = summarize(std::move(combined));
  }

  std::vector<const CellSummary*> beta_cells;
  for (const auto& c : report.cells) {
    if (c.beta) beta_cells.push_back(&c);
  }
  std::sort(beta_cells.begin(), beta_cells.end(),
            [](const CellSummary* a, const CellSummary* b) { return *a->beta < *b->beta; });
  if (beta_cells.size() >= 2) {
    const CellSummary* best = nullptr;
    for (const CellSummary* c : beta_cells) {
      if (!best || c->inefficiency.mean < best->inefficiency.mean) best = c;
    }
    report.best_beta = *best->beta;
    report.best_inefficiency = best->inefficiency.mean;
  }
  for (const CellSummary* c : beta_cells) {
    if (c->combined.n > 0) report.combined_ranking.emplace_back(*c->beta, c->combined.mean);
  }
  std::stable_sort(report.combined_ranking.begin(), report.combined_ranking.end(),
                   [](const auto& a, const auto& b) { return a.second < b.second; });
  return report;
}

namespace {

ojson number_or_null(double x) { return std::isfinite(x) ? ojson(x) : ojson(nullptr); }

ojson beta_json(const std::optional<double>& beta) { return beta ? ojson(*beta) : ojson(nullptr); }

ojson metric_json(const MetricSummary& s) {
  ojson j;
  j["n"] = s.n;
  j["mean"] = number_or_null(s.mean);
  j["std"] = number_or_null(s.std);
  j["min"] = number_or_null(s.min);
  j["q1"] = number_or_null(s.q1);
  j["median"] = number_or_null(s.median);
  j["q3"] = number_or_null(s.q3);
  j["max"] = number_or_null(s.max);
  return j;
}

ojson box_json(std::vector<double> v) {
  ojson j;
  if (v.empty()) return j;
  std::sort(v.begin(), v.end());
  const double q1 = quantile_sorted(v, 0.25);
  const double q3 = quantile_sorted(v, 0.75);
  const double iqr = q3 - q1;
  const double lo_fence = q1 - 1.5 * iqr;
  const double hi_fence = q3 + 1.5 * iqr;
  double lo = v.back();
  double hi = v.front();
  ojson outliers = ojson::array();
  for (double x : v) {
    if (x < lo_fence || x > hi_fence) {
      outliers.push_back(x);
      continue;
    }
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  j["q1"] = q1;
  j["median"] = quantile_sorted(v, 0.5);
  j["q3"] = q3;
  j["whisker_low"] = lo;
  j["whisker_high"] = hi;
  j["outliers"] = outliers;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BundleError(BundleError::Kind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw BundleError(BundleError::Kind::kIo, "write failed for " + path.string());
}

std::string optional_str(const std::optional<double>& x) { return x ? format_double(*x) : "NA"; }

}  // namespace

ojson summary_json(const SweepReport& report, const std::vector<CellInfo>& cells) {
  ojson j;
  j["cells"] = ojson::array();
  for (const auto& c : report.cells) {
    ojson cj;
    cj["dataset"] = c.dataset;
    cj["model"] = c.model;
    cj["beta"] = beta_json(c.beta);
    cj["coverage"] = metric_json(c.coverage);
    cj["inefficiency"] = metric_json(c.inefficiency);
    cj["empty_rate"] = metric_json(c.empty_rate);
    cj["accuracy"] = metric_json(c.accuracy);
    cj["ece"] = metric_json(c.ece);
    cj["mce"] = metric_json(c.mce);
    cj["combined"] = metric_json(c.combined);
    cj["threshold"] = metric_json(c.threshold);
    j["cells"].push_back(cj);
  }
  ojson sel;
  sel["best_beta"] = report.best_beta ? ojson(*report.best_beta) : ojson(nullptr);
  sel["best_inefficiency"] = report.best_inefficiency ? ojson(*report.best_inefficiency) : ojson(nullptr);
  sel["combined_ranking"] = ojson::array();
  for (const auto& [beta, value] : report.combined_ranking) {
    sel["combined_ranking"].push_back(ojson{{"beta", beta}, {"combined", value}});
  }
  j["selection"] = sel;
  j["failures"] = ojson::array();
  for (const auto& c : cells) {
    if (c.failed) j["failures"].push_back(ojson{{"model", c.model}, {"beta", beta_json(c.beta)}, {"error", c.error}});
  }
  return j;
}

void emit_outputs(const ResultsTable& table, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw BundleError(BundleError::Kind::kIo, "cannot create " + out_dir.string() + ": " + ec.message());

  std::string csv = "dataset,model,beta,trial,coverage,inefficiency,empty_rate,accuracy,ece,mce,combined,threshold\n";
  for (const auto& r : table.rows) {
    csv += r.dataset + ',' + r.model + ',' + optional_str(r.beta) + ',' + std::to_string(r.trial) + ',' +
           format_double(r.coverage) + ',' + format_double(r.inefficiency) + ',' + format_double(r.empty_rate) + ',' +
           format_double(r.accuracy) + ',' + format_double(r.ece) + ',' + format_double(r.mce) + ',' +
           optional_str(r.combined) + ',' + format_double(r.threshold) + '\n';
  }
  write_text(out_dir / "results.csv", csv);

  const auto report = sweep_report(table.rows);
  write_text(out_dir / "summary.json", summary_json(report, table.cells).dump(2) + "\n");

  ojson box;
  box["cells"] = ojson::array();
  for (const auto& c : report.cells) {
    std::vector<double> cov, ineff;
    for (const auto& r : table.rows) {
      if (r.dataset == c.dataset && r.model == c.model && r.beta == c.beta) {
        cov.push_back(r.coverage);
        ineff.push_back(r.inefficiency);
      }
    }
    box["cells"].push_back(ojson{{"model", c.model},
                                 {"beta", beta_json(c.beta)},
                                 {"coverage", box_json(cov)},
                                 {"inefficiency", box_json(ineff)}});
  }
  write_text(out_dir / "boxplot.json", box.dump(2) + "\n");

  for (const auto& cell : table.cells) {
    if (cell.failed || cell.diagram.bins.empty()) continue;
    const std::size_t m = cell.diagram.num_bins();
    std::string rel = "bin,lower,upper,count,accuracy,confidence\n";
    for (std::size_t b = 0; b < m; ++b) {
      const auto& bin = cell.diagram.bins[b];
      rel += std::to_string(b + 1) + ',' + format_double(static_cast<double>(b) / static_cast<double>(m)) + ',' +
             format_double(static_cast<double>(b + 1) / static_cast<double>(m)) + ',' + std::to_string(bin.count) +
             ',' + format_double(bin.accuracy()) + ',' + format_double(bin.confidence()) + '\n';
    }
    const std::string tag = cell.beta ? format_double(*cell.beta) : cell.model;
    write_text(out_dir / ("reliability_" + tag + ".csv"), rel);
  }
}

std::vector<ResultRow> read_results_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError(BundleError::Kind::kMissingFile, "cannot open " + path.string());
  std::vector<ResultRow> rows;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw BundleError(BundleError::Kind::kMalformed,
                      path.filename().string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 12) fail("expected 12 columns");
    auto num = [&](const std::string& s) {
      double x = 0.0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
      if (ec != std::errc() || ptr != s.data() + s.size()) fail("bad number '" + s + "'");
      return x;
    };
    auto opt = [&](const std::string& s) -> std::optional<double> {
      if (s == "NA") return std::nullopt;
      return num(s);
    };
    ResultRow r;
    r.dataset = f[0];
    r.model = f[1];
    r.beta = opt(f[2]);
    r.trial = static_cast<std::size_t>(num(f[3]));
    r.coverage = num(f[4]);
    r.inefficiency = num(f[5]);
    r.empty_rate = num(f[6]);
    r.accuracy = num(f[7]);
    r.ece = num(f[8]);
    r.mce = num(f[9]);
    r.combined = opt(f[10]);
    r.threshold = num(f[11]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace bayescp
