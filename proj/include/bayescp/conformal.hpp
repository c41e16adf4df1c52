#pragma once

// Split conformal prediction with the negative log predictive probability as
// the nonconformity score.

#include <cstddef>
#include <span>
#include <vector>

#include "bayescp/gdc.hpp"
#include "bayescp/graph.hpp"

namespace bayescp {

inline constexpr double kProbabilityFloor = 1e-12;

struct ConformalConfig {
  // Target miscoverage, 0 < alpha < 1.
  double alpha = 0.1;
  // Add the argmax label to otherwise empty sets. Off by default: the
  // coverage guarantee is for the exact rule.
  bool force_nonempty = false;

  void validate() const;
};

// -log(max(p[label], 1e-12)).
double nll_score(std::span<const double> probs, int label);

// k = ceil((1 - alpha)(n + 1)) (the product is rounded to the nearest integer
// first when within 1e-9 of it); returns the k-th smallest score counting
// duplicates, or +inf when k > n.
double conformal_quantile(std::span<const double> scores, double alpha);

struct PredictionSet {
  std::size_t item = 0;
  std::vector<int> labels;
  double threshold = 0.0;
  // True when the set was empty and force_nonempty added the argmax label.
  bool forced = false;

  bool contains(int label) const;
  std::size_t size() const noexcept { return labels.size(); }
};

// Labels y with nll_score(probs, y) <= threshold, in increasing order.
PredictionSet build_prediction_set(std::span<const double> probs, double threshold, std::size_t item = 0);

struct ConformalResult {
  double threshold = 0.0;
  std::vector<double> calibration_scores;
  std::vector<PredictionSet> sets;
  // covered[i] == sets[i].contains(true label of test item i)
  std::vector<bool> covered;
  double coverage = 0.0;
  double inefficiency = 0.0;
  double empty_rate = 0.0;
  std::size_t forced_count = 0;
};

// Calibration scores from split.calibration, threshold, then one set per
// split.test item. Every index must be a row of the table.
ConformalResult run_scp(const PredictiveTable& predictive, const std::vector<int>& item_labels, const SplitSpec& split,
                        const ConformalConfig& config);

}  // namespace bayescp
