#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "bayescp/conformal.hpp"
#include "bayescp/numerics.hpp"

namespace bayescp {

// Fraction of sets containing the item's true label. Throws on an empty list.
double empirical_coverage(const std::vector<PredictionSet>& sets, const std::vector<int>& item_labels);
// Mean set size. Throws on an empty list.
double empirical_inefficiency(const std::vector<PredictionSet>& sets);

struct ReliabilityBin {
  std::size_t count = 0;
  double accuracy_sum = 0.0;
  double confidence_sum = 0.0;

  double accuracy() const noexcept { return count ? accuracy_sum / static_cast<double>(count) : 0.0; }
  double confidence() const noexcept { return count ? confidence_sum / static_cast<double>(count) : 0.0; }
};

// Bin m (1-based) covers confidences in ((m - 1)/M, m/M].
struct ReliabilityDiagram {
  std::vector<ReliabilityBin> bins;

  std::size_t num_bins() const noexcept { return bins.size(); }
  std::size_t total() const noexcept;
  // Adds the counts and sums of another diagram with the same bin count.
  void merge(const ReliabilityDiagram& other);
};

inline constexpr std::size_t kDefaultBins = 20;

// 1-based bin of a confidence in (0, 1]; confidence exactly m/M maps to bin m.
std::size_t reliability_bin(double confidence, std::size_t num_bins);

// Point prediction is the argmax (lowest index on ties), confidence its
// probability.
ReliabilityDiagram reliability(const Matrix& probs, const std::vector<int>& item_labels,
                               const std::vector<std::size_t>& items, std::size_t num_bins = kDefaultBins);

// Both throw ValueError when every bin is empty. MCE ignores empty bins.
double ece(const ReliabilityDiagram& diagram);
double mce(const ReliabilityDiagram& diagram);

// mce / accuracy; nullopt when accuracy is 0.
std::optional<double> combined_measure(double mce, double accuracy);

struct MetricsReport {
  double coverage = 0.0;
  double inefficiency = 0.0;
  double empty_rate = 0.0;
  double accuracy = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  std::optional<double> combined;
  double threshold = 0.0;
  ReliabilityDiagram diagram;
};

// Everything measured on the test items of one conformal trial.
MetricsReport evaluate_trial(const ConformalResult& result, const PredictiveTable& predictive,
                             const std::vector<int>& item_labels, const std::vector<std::size_t>& test_items,
                             std::size_t num_bins = kDefaultBins);

}  // namespace bayescp
