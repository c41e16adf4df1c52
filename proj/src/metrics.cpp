#include "bayescp/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "bayescp/errors.hpp"

namespace bayescp {

double empirical_coverage(const std::vector<PredictionSet>& sets, const std::vector<int>& item_labels) {
  if (sets.empty()) throw ValueError("empirical_coverage: empty test set");
  std::size_t hits = 0;
  for (const auto& s : sets) hits += s.contains(item_labels.at(s.item)) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(sets.size());
}

double empirical_inefficiency(const std::vector<PredictionSet>& sets) {
  if (sets.empty()) throw ValueError("empirical_inefficiency: empty test set");
  std::size_t total = 0;
  for (const auto& s : sets) total += s.size();
  return static_cast<double>(total) / static_cast<double>(sets.size());
}

std::size_t ReliabilityDiagram::total() const noexcept {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  return n;
}

void ReliabilityDiagram::merge(const ReliabilityDiagram& other) {
  if (bins.empty()) bins.resize(other.bins.size());
  if (other.bins.size() != bins.size()) throw ShapeError("ReliabilityDiagram::merge: bin count mismatch");
  for (std::size_t m = 0; m < bins.size(); ++m) {
    bins[m].count += other.bins[m].count;
    bins[m].accuracy_sum += other.bins[m].accuracy_sum;
    bins[m].confidence_sum += other.bins[m].confidence_sum;
  }
}

std::size_t reliability_bin(double confidence, std::size_t num_bins) {
  const double big_m = static_cast<double>(num_bins);
  auto upper = [&](std::size_t m) { return static_cast<double>(m) / big_m; };
  auto m = static_cast<std::size_t>(std::clamp(std::ceil(confidence * big_m), 1.0, big_m));
  // confidence * M can round across an edge; settle against the edges themselves.
  while (m > 1 && confidence <= upper(m - 1)) --m;
  while (m < num_bins && confidence > upper(m)) ++m;
  return m;
}

ReliabilityDiagram reliability(const Matrix& probs, const std::vector<int>& item_labels,
                               const std::vector<std::size_t>& items, std::size_t num_bins) {
  if (num_bins == 0) throw ValueError("reliability: need at least one bin");
  ReliabilityDiagram d;
  d.bins.resize(num_bins);
  for (std::size_t i : items) {
    auto p = probs.row(i);
    const auto top = std::max_element(p.begin(), p.end());
    const auto pred = static_cast<int>(top - p.begin());
    auto& bin = d.bins[reliability_bin(*top, num_bins) - 1];
    ++bin.count;
    bin.accuracy_sum += pred == item_labels.at(i) ? 1.0 : 0.0;
    bin.confidence_sum += *top;
  }
  return d;
}

double ece(const ReliabilityDiagram& d) {
  const std::size_t n = d.total();
  if (n == 0) throw ValueError("ece: all bins empty");
  double e = 0.0;
  for (const auto& b : d.bins) {
    if (b.count == 0) continue;
    e += static_cast<double>(b.count) / static_cast<double>(n) * std::abs(b.accuracy() - b.confidence());
  }
  return e;
}

double mce(const ReliabilityDiagram& d) {
  if (d.total() == 0) throw ValueError("mce: all bins empty");
  double worst = 0.0;
  for (const auto& b : d.bins) {
    if (b.count == 0) continue;
    worst = std::max(worst, std::abs(b.accuracy() - b.confidence()));
  }
  return worst;
}

std::optional<double> combined_measure(double mce_value, double accuracy) {
  if (!(accuracy > 0.0)) return std::nullopt;
  return mce_value / accuracy;
}

MetricsReport evaluate_trial(const ConformalResult& result, const PredictiveTable& predictive,
                             const std::vector<int>& item_labels, const std::vector<std::size_t>& test_items,
                             std::size_t num_bins) {
  MetricsReport r;
  r.coverage = empirical_coverage(result.sets, item_labels);
  r.inefficiency = empirical_inefficiency(result.sets);
  r.empty_rate = result.empty_rate;
  r.threshold = result.threshold;
  r.diagram = reliability(predictive.probs, item_labels, test_items, num_bins);
  double correct = 0.0;
  for (const auto& b : r.diagram.bins) correct += b.accuracy_sum;
  r.accuracy = correct / static_cast<double>(test_items.size());
  r.ece = ece(r.diagram);
  r.mce = mce(r.diagram);
  r.combined = combined_measure(r.mce, r.accuracy);
  return r;
}

}  // namespace bayescp
