#include "bayescp/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bayescp/errors.hpp"

namespace bayescp {

void ConformalConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValueError("alpha must lie in (0, 1)");
}

double nll_score(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw ValueError("nll_score: label " + std::to_string(label) + " out of range");
  }
  // log(1/p) rather than -log(p): for p = 1/C it reproduces log(C) exactly for
  // all C <= 100 except 49.
  const double p = std::max(probs[static_cast<std::size_t>(label)], kProbabilityFloor);
  return std::log(1.0 / p);
}

namespace {

std::size_t quantile_rank(std::size_t n, double alpha) {
  const double x = (1.0 - alpha) * static_cast<double>(n + 1);
  const double nearest = std::round(x);
  const double k = std::abs(x - nearest) < 1e-9 ? nearest : std::ceil(x);
  return static_cast<std::size_t>(k);
}

}  // namespace

double conformal_quantile(std::span<const double> scores, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValueError("conformal_quantile: alpha must lie in (0, 1)");
  const std::size_t n = scores.size();
  const std::size_t k = quantile_rank(n, alpha);
  if (k > n) return std::numeric_limits<double>::infinity();
  if (k == 0) return -std::numeric_limits<double>::infinity();
  std::vector<double> s(scores.begin(), scores.end());
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k - 1), s.end());
  return s[k - 1];
}

bool PredictionSet::contains(int label) const {
  return std::binary_search(labels.begin(), labels.end(), label);
}

PredictionSet build_prediction_set(std::span<const double> probs, double threshold, std::size_t item) {
  PredictionSet set;
  set.item = item;
  set.threshold = threshold;
  for (std::size_t y = 0; y < probs.size(); ++y) {
    if (nll_score(probs, static_cast<int>(y)) <= threshold) set.labels.push_back(static_cast<int>(y));
  }
  return set;
}

ConformalResult run_scp(const PredictiveTable& predictive, const std::vector<int>& item_labels, const SplitSpec& split,
                        const ConformalConfig& config) {
  config.validate();
  const std::size_t rows = predictive.probs.rows();
  auto check = [&](std::size_t i) {
    if (i >= rows || i >= item_labels.size()) {
      throw ValueError("run_scp: item " + std::to_string(i) + " not covered by the predictive table");
    }
  };
  ConformalResult r;
  r.calibration_scores.reserve(split.calibration.size());
  for (std::size_t i : split.calibration) {
    check(i);
    r.calibration_scores.push_back(nll_score(predictive.probs.row(i), item_labels[i]));
  }
  r.threshold = conformal_quantile(r.calibration_scores, config.alpha);

  std::size_t hits = 0;
  std::size_t total_size = 0;
  std::size_t empty = 0;
  for (std::size_t i : split.test) {
    check(i);
    const auto probs = predictive.probs.row(i);
    auto set = build_prediction_set(probs, r.threshold, i);
    if (set.labels.empty()) {
      ++empty;
      if (config.force_nonempty) {
        const auto top = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
        set.labels.push_back(top);
        set.forced = true;
        ++r.forced_count;
      }
    }
    const bool hit = set.contains(item_labels[i]);
    hits += hit ? 1 : 0;
    total_size += set.size();
    r.covered.push_back(hit);
    r.sets.push_back(std::move(set));
  }
  if (!split.test.empty()) {
    const double n = static_cast<double>(split.test.size());
    r.coverage = static_cast<double>(hits) / n;
    r.inefficiency = static_cast<double>(total_size) / n;
    r.empty_rate = static_cast<double>(empty) / n;
  }
  return r;
}

}  // namespace bayescp
