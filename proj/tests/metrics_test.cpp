#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "bayescp/errors.hpp"
#include "bayescp/metrics.hpp"

using namespace bayescp;

namespace {

PredictionSet set_of(std::size_t item, std::vector<int> labels) {
  PredictionSet s;
  s.item = item;
  s.labels = std::move(labels);
  return s;
}

}  // namespace

TEST(Coverage, Examples) {
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
  std::vector<PredictionSet> full, none, nine;
  for (std::size_t i = 0; i < 10; ++i) {
    full.push_back(set_of(i, {0, 1, 2}));
    none.push_back(set_of(i, {}));
    nine.push_back(set_of(i, {i == 3 ? 1 : labels[i]}));
  }
  EXPECT_EQ(empirical_coverage(full, labels), 1.0);
  EXPECT_EQ(empirical_coverage(none, labels), 0.0);
  EXPECT_DOUBLE_EQ(empirical_coverage(nine, labels), 0.9);
  EXPECT_THROW(empirical_coverage({}, labels), ValueError);
}

TEST(Inefficiency, Examples) {
  EXPECT_EQ(empirical_inefficiency({set_of(0, {1}), set_of(1, {0})}), 1.0);
  EXPECT_EQ(empirical_inefficiency({set_of(0, {0, 1, 2, 3, 4, 5, 6})}), 7.0);
  EXPECT_EQ(empirical_inefficiency({set_of(0, {1}), set_of(1, {0, 1}), set_of(2, {0, 1, 2})}), 2.0);
  EXPECT_THROW(empirical_inefficiency({}), ValueError);
}

TEST(Coverage, InvariantToTestOrder) {
  Rng rng(1);
  std::vector<int> labels(50);
  std::vector<PredictionSet> sets;
  for (std::size_t i = 0; i < 50; ++i) {
    labels[i] = static_cast<int>(rng.below(4));
    std::vector<int> s;
    for (int c = 0; c < 4; ++c) {
      if (rng.uniform() < 0.4) s.push_back(c);
    }
    sets.push_back(set_of(i, s));
  }
  const double cov = empirical_coverage(sets, labels);
  const double ineff = empirical_inefficiency(sets);
  shuffle(sets, rng);
  EXPECT_DOUBLE_EQ(empirical_coverage(sets, labels), cov);
  EXPECT_DOUBLE_EQ(empirical_inefficiency(sets), ineff);
}

TEST(ReliabilityBin, EdgesBelongToLowerBin) {
  for (std::size_t m = 1; m <= 20; ++m) {
    EXPECT_EQ(reliability_bin(static_cast<double>(m) / 20.0, 20), m) << m;
    EXPECT_EQ(reliability_bin(std::nextafter(static_cast<double>(m) / 20.0, 2.0), 20), std::min<std::size_t>(m + 1, 20));
  }
  EXPECT_EQ(reliability_bin(1e-300, 20), 1u);
  EXPECT_EQ(reliability_bin(0.7, 20), 14u);
  EXPECT_EQ(reliability_bin(0.3, 10), 3u);
}

TEST(Reliability, AllConfidentAndCorrect) {
  const Matrix p{{1.0, 0.0}, {0.0, 1.0}};
  const auto d = reliability(p, {0, 1}, {0, 1});
  EXPECT_EQ(d.num_bins(), 20u);
  EXPECT_EQ(d.bins[19].count, 2u);
  EXPECT_EQ(d.bins[19].accuracy(), 1.0);
  EXPECT_EQ(d.bins[19].confidence(), 1.0);
  for (std::size_t m = 0; m < 19; ++m) EXPECT_EQ(d.bins[m].count, 0u);
  EXPECT_EQ(ece(d), 0.0);
  EXPECT_EQ(mce(d), 0.0);
}

TEST(Reliability, SixSampleManualOracle) {
  // Confidences 0.62, 0.64, 0.61 land in bin 13 = (0.60, 0.65]; 0.96, 0.98, 0.99 in bin 20.
  const Matrix p{{0.62, 0.38}, {0.36, 0.64}, {0.61, 0.39}, {0.96, 0.04}, {0.02, 0.98}, {0.99, 0.01}};
  const std::vector<int> labels{0, 0, 0, 0, 1, 1};
  const auto d = reliability(p, labels, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(d.total(), 6u);
  const auto& b13 = d.bins[12];
  const auto& b20 = d.bins[19];
  EXPECT_EQ(b13.count, 3u);
  EXPECT_EQ(b20.count, 3u);
  EXPECT_NEAR(b13.accuracy(), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b13.confidence(), (0.62 + 0.64 + 0.61) / 3.0, 1e-15);
  EXPECT_NEAR(b20.accuracy(), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b20.confidence(), (0.96 + 0.98 + 0.99) / 3.0, 1e-15);
  const double gap13 = std::abs(2.0 / 3.0 - (0.62 + 0.64 + 0.61) / 3.0);
  const double gap20 = std::abs(2.0 / 3.0 - (0.96 + 0.98 + 0.99) / 3.0);
  EXPECT_NEAR(ece(d), 0.5 * gap13 + 0.5 * gap20, 1e-12);
  EXPECT_NEAR(mce(d), std::max(gap13, gap20), 1e-12);
}

TEST(Calibration, HandExamples) {
  ReliabilityDiagram perfect;
  perfect.bins.resize(20);
  perfect.bins[5] = {10, 2.75, 2.75};
  perfect.bins[17] = {4, 3.5, 3.5};
  EXPECT_EQ(ece(perfect), 0.0);
  EXPECT_EQ(mce(perfect), 0.0);

  ReliabilityDiagram single;
  single.bins.resize(20);
  single.bins[17] = {10, 6.0, 9.0};
  EXPECT_NEAR(ece(single), 0.3, 1e-12);
  EXPECT_NEAR(mce(single), 0.3, 1e-12);

  ReliabilityDiagram two;
  two.bins.resize(20);
  two.bins[11] = {30, 15.0, 18.0};
  two.bins[17] = {70, 49.0, 63.0};
  EXPECT_NEAR(ece(two), 0.17, 1e-12);
  EXPECT_NEAR(mce(two), 0.2, 1e-12);
}

TEST(Calibration, EmptyDiagramThrows) {
  ReliabilityDiagram d;
  d.bins.resize(20);
  EXPECT_THROW(ece(d), ValueError);
  EXPECT_THROW(mce(d), ValueError);
}

TEST(Calibration, EceNeverExceedsMce) {
  Rng rng(2);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 1 + rng.below(100);
    Matrix logits(n, 4);
    for (double& x : logits.data()) x = rng.normal() * 3.0;
    std::vector<int> labels(n);
    std::vector<std::size_t> items(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.below(4));
      items[i] = i;
    }
    const auto d = reliability(softmax_rows(logits), labels, items);
    EXPECT_LE(ece(d), mce(d) + 1e-15);
    EXPECT_EQ(d.total(), n);
  }
}

TEST(Calibration, ScalingLogitsKeepsAccuracy) {
  Rng rng(3);
  Matrix logits(200, 5);
  for (double& x : logits.data()) x = rng.normal();
  std::vector<int> labels(200);
  std::vector<std::size_t> items(200);
  for (std::size_t i = 0; i < 200; ++i) {
    labels[i] = static_cast<int>(rng.below(5));
    items[i] = i;
  }
  auto acc = [&](const Matrix& l) {
    const auto d = reliability(softmax_rows(l), labels, items);
    double s = 0.0;
    for (const auto& b : d.bins) s += b.accuracy_sum;
    return s;
  };
  const double base = acc(logits);
  for (double k : {0.1, 2.0, 17.0}) {
    Matrix scaled = logits;
    for (double& x : scaled.data()) x *= k;
    EXPECT_EQ(acc(scaled), base);
  }
}

TEST(CombinedMeasure, Examples) {
  EXPECT_NEAR(*combined_measure(0.2, 0.8), 0.25, 1e-15);
  EXPECT_EQ(*combined_measure(0.0, 0.5), 0.0);
  EXPECT_FALSE(combined_measure(0.3, 0.0).has_value());
}

TEST(Diagram, MergeAddsCounts) {
  ReliabilityDiagram a, b;
  a.bins.resize(20);
  b.bins.resize(20);
  a.bins[3] = {2, 1.0, 0.35};
  b.bins[3] = {1, 1.0, 0.18};
  b.bins[9] = {1, 0.0, 0.5};
  a.merge(b);
  EXPECT_EQ(a.total(), 4u);
  EXPECT_EQ(a.bins[3].count, 3u);
  ReliabilityDiagram c;
  c.bins.resize(10);
  EXPECT_THROW(a.merge(c), Error);
}
