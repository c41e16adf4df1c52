#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "bayescp/conformal.hpp"
#include "bayescp/errors.hpp"

using namespace bayescp;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Independent oracle: sort, then take position ceil((1 - alpha)(n + 1)) computed
// in exact rational arithmetic on alpha given as num / 1000.
double sort_oracle(std::vector<double> scores, int alpha_per_mille) {
  const long n = static_cast<long>(scores.size());
  const long numer = (1000 - alpha_per_mille) * (n + 1);
  const long k = (numer + 999) / 1000;
  if (k > n) return kInf;
  std::sort(scores.begin(), scores.end());
  return scores[static_cast<std::size_t>(k - 1)];
}

Matrix random_table(Rng& rng, std::size_t n, std::size_t c) {
  Matrix logits(n, c);
  for (double& x : logits.data()) x = rng.normal() * 2.0;
  return softmax_rows(logits);
}

}  // namespace

TEST(NllScore, Examples) {
  const std::vector<double> p{1.0, 0.0};
  EXPECT_EQ(nll_score(p, 0), 0.0);
  EXPECT_NEAR(nll_score(p, 1), -std::log(1e-12), 1e-12);
  EXPECT_NEAR(nll_score(p, 1), 27.631, 1e-3);
  const std::vector<double> q{std::exp(-1.0), 1.0 - std::exp(-1.0)};
  EXPECT_NEAR(nll_score(q, 0), 1.0, 1e-15);
  EXPECT_THROW(nll_score(p, 2), ValueError);
  EXPECT_THROW(nll_score(p, -1), ValueError);
}

TEST(Quantile, Examples) {
  const std::vector<double> nine{5, 1, 9, 3, 7, 2, 8, 4, 6};
  EXPECT_EQ(conformal_quantile(nine, 0.1), 9.0);
  const std::vector<double> four{0.4, 0.1, 0.3, 0.2};
  EXPECT_EQ(conformal_quantile(four, 0.5), 0.3);
  const std::vector<double> three{1, 2, 3};
  EXPECT_EQ(conformal_quantile(three, 0.1), kInf);
  EXPECT_EQ(conformal_quantile(std::vector<double>{}, 0.5), kInf);
}

TEST(Quantile, RejectsAlphaOutsideOpenInterval) {
  const std::vector<double> s{1.0};
  EXPECT_THROW(conformal_quantile(s, 0.0), ValueError);
  EXPECT_THROW(conformal_quantile(s, 1.0), ValueError);
  EXPECT_THROW(conformal_quantile(s, -0.2), ValueError);
}

TEST(Quantile, MatchesSortOracleOnRandomMultisets) {
  Rng rng(1);
  const int alphas[] = {10, 50, 100, 150, 200, 250, 300, 400, 440, 500};
  std::size_t infinite = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = rng.below(201);
    std::vector<double> s(n);
    // Small integer grid forces duplicates.
    for (double& x : s) x = static_cast<double>(rng.below(15)) * 0.25;
    const int a = alphas[rng.below(10)];
    const double got = conformal_quantile(s, a / 1000.0);
    const double want = sort_oracle(s, a);
    EXPECT_EQ(got, want) << "n=" << n << " alpha=" << a / 1000.0;
    infinite += std::isinf(want) ? 1 : 0;
  }
  EXPECT_GT(infinite, 0u);
}

TEST(Quantile, DuplicateOfMaxNeverLowersThreshold) {
  Rng rng(2);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> s(1 + rng.below(50));
    for (double& x : s) x = rng.uniform();
    const double before = conformal_quantile(s, 0.2);
    // From +inf a larger sample can legitimately reach a finite order statistic.
    if (std::isinf(before)) continue;
    s.push_back(*std::max_element(s.begin(), s.end()));
    EXPECT_GE(conformal_quantile(s, 0.2), before);
  }
}

TEST(Quantile, MonotoneNonincreasingInAlpha) {
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> s(rng.below(100));
    for (double& x : s) x = rng.uniform();
    double prev = kInf;
    for (double a : {0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.9}) {
      const double t = conformal_quantile(s, a);
      EXPECT_LE(t, prev);
      prev = t;
    }
  }
}

TEST(PredictionSet, Examples) {
  const std::vector<double> seven(7, 1.0 / 7.0);
  EXPECT_EQ(build_prediction_set(seven, kInf).size(), 7u);
  for (std::size_t c = 2; c <= 10; ++c) {
    const std::vector<double> uniform(c, 1.0 / static_cast<double>(c));
    EXPECT_EQ(build_prediction_set(uniform, std::log(static_cast<double>(c))).size(), c) << c;
  }
  const std::vector<double> p{0.7, 0.2, 0.1};
  const auto s = build_prediction_set(p, 1.0, 4);
  EXPECT_EQ(s.labels, (std::vector<int>{0}));
  EXPECT_EQ(build_prediction_set(p, 1.7).labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(s.item, 4u);
  EXPECT_TRUE(build_prediction_set(p, 0.1).labels.empty());
}

TEST(PredictionSet, LabelPermutationEquivariance) {
  Rng rng(4);
  for (int rep = 0; rep < 100; ++rep) {
    const auto t = random_table(rng, 1, 6);
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
    std::vector<double> permuted(6);
    for (int c = 0; c < 6; ++c) permuted[perm[c]] = t(0, c);
    const double thr = rng.uniform(0.0, 3.0);
    const auto a = build_prediction_set(t.row(0), thr);
    const auto b = build_prediction_set(permuted, thr);
    ASSERT_EQ(a.size(), b.size());
    for (int c = 0; c < 6; ++c) EXPECT_EQ(a.contains(c), b.contains(perm[c]));
  }
}

TEST(RunScp, PerfectCalibrationGivesZeroThreshold) {
  PredictiveTable table{Matrix{{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, {0.5, 0.5}}};
  const std::vector<int> labels{0, 1, 0, 1};
  SplitSpec split;
  split.calibration = {0, 1};
  split.test = {2, 3};
  ConformalConfig cfg;
  cfg.alpha = 0.4;
  const auto r = run_scp(table, labels, split, cfg);
  EXPECT_EQ(r.threshold, 0.0);
  EXPECT_EQ(r.sets[0].labels, (std::vector<int>{0}));
  EXPECT_TRUE(r.sets[1].labels.empty());
  EXPECT_EQ(r.coverage, 0.5);
  EXPECT_EQ(r.empty_rate, 0.5);
}

TEST(RunScp, EmptyCalibrationGivesFullSets) {
  Rng rng(5);
  PredictiveTable table{random_table(rng, 10, 7)};
  std::vector<int> labels(10);
  for (int& y : labels) y = static_cast<int>(rng.below(7));
  SplitSpec split;
  split.test = {0, 1, 2, 3, 4};
  const auto r = run_scp(table, labels, split, {});
  EXPECT_EQ(r.threshold, kInf);
  EXPECT_EQ(r.coverage, 1.0);
  EXPECT_EQ(r.inefficiency, 7.0);
}

TEST(RunScp, MismatchedSplitThrows) {
  PredictiveTable table{Matrix{{0.5, 0.5}}};
  SplitSpec split;
  split.test = {3};
  EXPECT_THROW(run_scp(table, {0}, split, {}), Error);
}

TEST(RunScp, ForceNonemptyAddsArgmaxAndCounts) {
  PredictiveTable table{Matrix{{0.9, 0.1}, {0.9, 0.1}, {0.3, 0.7}}};
  const std::vector<int> labels{0, 0, 0};
  SplitSpec split;
  split.calibration = {0, 1};
  split.test = {2};
  ConformalConfig cfg;
  cfg.alpha = 0.5;
  auto r = run_scp(table, labels, split, cfg);
  EXPECT_TRUE(r.sets[0].labels.empty());
  EXPECT_EQ(r.forced_count, 0u);
  cfg.force_nonempty = true;
  r = run_scp(table, labels, split, cfg);
  EXPECT_EQ(r.sets[0].labels, (std::vector<int>{1}));
  EXPECT_TRUE(r.sets[0].forced);
  EXPECT_EQ(r.forced_count, 1u);
}

TEST(RunScp, SetsAreNestedInAlpha) {
  Rng rng(6);
  for (int rep = 0; rep < 100; ++rep) {
    PredictiveTable table{random_table(rng, 60, 5)};
    std::vector<int> labels(60);
    for (int& y : labels) y = static_cast<int>(rng.below(5));
    SplitSpec split;
    for (std::size_t i = 0; i < 30; ++i) split.calibration.push_back(i);
    for (std::size_t i = 30; i < 60; ++i) split.test.push_back(i);
    std::vector<ConformalResult> res;
    for (double a : {0.05, 0.1, 0.2, 0.4}) {
      ConformalConfig cfg;
      cfg.alpha = a;
      res.push_back(run_scp(table, labels, split, cfg));
    }
    for (std::size_t k = 1; k < res.size(); ++k) {
      for (std::size_t i = 0; i < split.test.size(); ++i) {
        for (int y : res[k].sets[i].labels) EXPECT_TRUE(res[k - 1].sets[i].contains(y));
      }
    }
  }
}

TEST(Coverage, MonteCarloWithinTheoreticalBand) {
  // Continuous exchangeable scores: coverage is exactly ceil(0.9 * 501) / 501 in
  // expectation, inside [1 - alpha, 1 - alpha + 1/(n+1)].
  Rng rng(7);
  const std::size_t n = 500;
  const int trials = 10000;
  std::vector<double> cal(n);
  double hits = 0.0;
  for (int t = 0; t < trials; ++t) {
    for (double& x : cal) x = rng.uniform();
    const double test = rng.uniform();
    hits += test <= conformal_quantile(cal, 0.1) ? 1.0 : 0.0;
  }
  const double mean = hits / trials;
  const double sigma = std::sqrt(0.09 / trials);
  EXPECT_GE(mean, 0.9 - 3 * sigma);
  EXPECT_LE(mean, 0.9 + 1.0 / 501.0 + 3 * sigma);
}
