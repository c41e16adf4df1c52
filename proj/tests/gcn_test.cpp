#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "bayescp/errors.hpp"
#include "bayescp/gcn.hpp"
#include "bayescp/gdc.hpp"

using namespace bayescp;

namespace {

GraphBundle random_graph(Rng& rng, std::size_t n, std::size_t f, std::size_t classes, double p_edge) {
  GraphBundle b;
  b.num_nodes = n;
  b.num_classes = classes;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      if (rng.uniform() < p_edge) b.edges.emplace_back(u, v);
    }
  }
  b.features = Matrix(n, f);
  for (double& x : b.features.data()) x = rng.uniform(-1.0, 1.0);
  for (std::size_t v = 0; v < n; ++v) b.labels.push_back(static_cast<int>(rng.below(classes)));
  return b;
}

// Dense reference: H <- act(D^-1 (A + I) H W) with D the closed-neighborhood degree.
Matrix dense_forward(const GraphBundle& b, const GcnParams& params) {
  const std::size_t n = b.num_nodes;
  Matrix a(n, n);
  for (std::size_t v = 0; v < n; ++v) a(v, v) = 1.0;
  for (auto [u, v] : b.edges) a(u, v) = a(v, u) = 1.0;
  for (std::size_t v = 0; v < n; ++v) {
    double deg = 0.0;
    for (std::size_t u = 0; u < n; ++u) deg += a(v, u);
    for (std::size_t u = 0; u < n; ++u) a(v, u) /= deg;
  }
  Matrix h = b.features;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    Matrix next(n, params.weights[l].cols());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < next.cols(); ++j) {
        double s = 0.0;
        for (std::size_t u = 0; u < n; ++u) {
          for (std::size_t k = 0; k < h.cols(); ++k) s += a(i, u) * h(u, k) * params.weights[l](k, j);
        }
        next(i, j) = l + 1 < params.weights.size() ? std::max(s, 0.0) : s;
      }
    }
    h = next;
  }
  return h;
}

GcnConfig make_config(const GraphBundle& b, std::vector<std::size_t> hidden, Readout readout = Readout::kNone) {
  GcnConfig c;
  c.layer_dims.push_back(b.feature_dim());
  for (auto h : hidden) c.layer_dims.push_back(h);
  c.layer_dims.push_back(b.num_classes);
  c.readout = readout;
  return c;
}

double objective(const GraphBundle& b, const NeighborIndex& idx, const GcnConfig& c, const GcnParams& p,
                 const std::shared_ptr<const SampleMasks>& masks, const std::vector<std::size_t>& items, double wd) {
  const auto cache = forward(b, idx, c, p, masks);
  return mean_cross_entropy(cache.logits, b.item_labels(), items) + 0.5 * wd * p.squared_norm();
}

// Max relative error between analytic and central-difference gradients.
double gradient_check(const GraphBundle& b, const GcnConfig& c, GcnParams p,
                      const std::shared_ptr<const SampleMasks>& masks, const std::vector<std::size_t>& items,
                      double wd) {
  const NeighborIndex idx(b);
  const auto cache = forward(b, idx, c, p, masks);
  const auto g = gcn_backward(cache, b, idx, c, p, b.item_labels(), items, wd);
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    for (std::size_t i = 0; i < p.weights[l].size(); ++i) {
      double& w = p.weights[l].data()[i];
      const double orig = w;
      w = orig + h;
      const double up = objective(b, idx, c, p, masks, items, wd);
      w = orig - h;
      const double down = objective(b, idx, c, p, masks, items, wd);
      w = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g.weights[l].data()[i];
      const double err = std::abs(numeric - analytic) / std::max({1e-6, std::abs(numeric), std::abs(analytic)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

std::vector<std::size_t> all_items(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

TEST(GcnForward, IsolatedNodeSeesOnlyItself) {
  GraphBundle b;
  b.num_nodes = 1;
  b.num_classes = 2;
  b.features = Matrix{{2.0, -1.0}};
  b.labels = {0};
  const auto c = make_config(b, {});
  GcnParams p{{Matrix{{1.0, 0.5}, {3.0, -1.0}}}};
  const auto out = gcn_forward(b, NeighborIndex(b), c, p);
  EXPECT_EQ(out.logits, (Matrix{{-1.0, 2.0}}));
}

TEST(GcnForward, TwoNodeMeanAggregation) {
  GraphBundle b;
  b.num_nodes = 2;
  b.num_classes = 1;
  b.edges = {{0, 1}};
  b.features = Matrix{{1.0}, {3.0}};
  b.labels = {0, 0};
  const auto c = make_config(b, {});
  GcnParams p{{Matrix{{2.0}}}};
  const auto out = gcn_forward(b, NeighborIndex(b), c, p);
  EXPECT_EQ(out.logits, (Matrix{{4.0}, {4.0}}));
}

TEST(GcnForward, ZeroWeightsGiveZeroLogitsAndUniformLoss) {
  Rng rng(2);
  auto b = random_graph(rng, 6, 3, 4, 0.5);
  const auto c = make_config(b, {5});
  GcnParams p{{Matrix(3, 5), Matrix(5, 4)}};
  const NeighborIndex idx(b);
  const auto cache = gcn_forward(b, idx, c, p);
  for (double x : cache.logits.data()) EXPECT_EQ(x, 0.0);
  EXPECT_NEAR(mean_cross_entropy(cache.logits, b.labels, all_items(6)), std::log(4.0), 1e-15);
}

TEST(GcnForward, MatchesDenseOracle) {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 2 + rng.below(10);
    auto b = random_graph(rng, n, 4, 3, 0.4);
    const auto c = make_config(b, {6, 5});
    Rng init(rep);
    const auto p = init_params(c, init);
    const auto got = gcn_forward(b, NeighborIndex(b), c, p).logits;
    const auto ref = dense_forward(b, p);
    ASSERT_EQ(got.rows(), ref.rows());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got.data()[i], ref.data()[i], 1e-12);
  }
}

TEST(GcnForward, PermutationEquivariant) {
  Rng rng(5);
  auto b = random_graph(rng, 9, 3, 3, 0.4);
  const auto c = make_config(b, {4});
  Rng init(1);
  const auto p = init_params(c, init);
  std::vector<std::size_t> perm = all_items(9);
  shuffle(perm, rng);
  GraphBundle q = b;
  for (std::size_t v = 0; v < 9; ++v) {
    for (std::size_t k = 0; k < 3; ++k) q.features(perm[v], k) = b.features(v, k);
    q.labels[perm[v]] = b.labels[v];
  }
  q.edges.clear();
  for (auto [u, v] : b.edges) q.edges.emplace_back(perm[u], perm[v]);
  q.edges = canonicalize_edges(q.edges, 9);
  const auto lb = gcn_forward(b, NeighborIndex(b), c, p).logits;
  const auto lq = gcn_forward(q, NeighborIndex(q), c, p).logits;
  for (std::size_t v = 0; v < 9; ++v) {
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(lq(perm[v], k), lb(v, k), 1e-9);
  }
}

TEST(GcnForward, ShapeMismatchThrows) {
  Rng rng(1);
  auto b = random_graph(rng, 4, 3, 2, 0.5);
  auto c = make_config(b, {});
  GcnParams p{{Matrix(4, 2)}};
  EXPECT_THROW(gcn_forward(b, NeighborIndex(b), c, p), ShapeError);
}

TEST(GcnConfig, ReadoutMustMatchTask) {
  GcnConfig c;
  c.layer_dims = {3, 2};
  EXPECT_NO_THROW(c.validate(Task::kNodeClassification));
  EXPECT_THROW(c.validate(Task::kGraphClassification), ValueError);
  c.readout = Readout::kSum;
  EXPECT_THROW(c.validate(Task::kNodeClassification), ValueError);
  EXPECT_NO_THROW(c.validate(Task::kGraphClassification));
}

TEST(GcnBackward, MatchesFiniteDifferencesTwoAndThreeLayers) {
  Rng rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 3 + rng.below(6);
    auto b = random_graph(rng, n, 3, 3, 0.5);
    std::vector<std::size_t> hidden = rep % 2 == 0 ? std::vector<std::size_t>{4} : std::vector<std::size_t>{4, 3};
    const auto c = make_config(b, hidden);
    Rng init(100 + rep);
    const auto p = init_params(c, init);
    EXPECT_LT(gradient_check(b, c, p, nullptr, all_items(n), 0.0), 1e-5) << "rep " << rep;
    EXPECT_LT(gradient_check(b, c, p, nullptr, {0, n - 1}, 0.01), 1e-5) << "rep " << rep;
  }
}

TEST(GcnBackward, MatchesFiniteDifferencesUnderMasks) {
  Rng rng(22);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 3 + rng.below(6);
    auto b = random_graph(rng, n, 3, 2, 0.5);
    const auto c = make_config(b, {4, 3});
    Rng init(200 + rep);
    const auto p = init_params(c, init);
    const NeighborIndex idx(b);
    const MaskSet masks(rng.next_u64(), 1, {0.6, 0.7, 0.8});
    auto sample = std::make_shared<const SampleMasks>(masks.sample(0, idx, c.layer_dims));
    EXPECT_LT(gradient_check(b, c, p, sample, all_items(n), 0.0), 1e-4) << "rep " << rep;
  }
}

TEST(GcnBackward, MatchesFiniteDifferencesWithReadout) {
  Rng rng(23);
  for (Readout r : {Readout::kSum, Readout::kMean}) {
    GraphBundle b;
    b.task = Task::kGraphClassification;
    b.num_nodes = 7;
    b.num_classes = 2;
    b.edges = {{0, 1}, {1, 2}, {3, 4}, {4, 5}, {5, 6}, {3, 6}};
    b.features = Matrix(7, 3);
    for (double& x : b.features.data()) x = rng.uniform(-1, 1);
    b.graph_index = {0, 0, 0, 1, 1, 1, 1};
    b.graph_labels = {1, 0};
    const auto c = make_config(b, {4}, r);
    Rng init(3);
    const auto p = init_params(c, init);
    EXPECT_LT(gradient_check(b, c, p, nullptr, {0, 1}, 0.0), 1e-5);
  }
}

TEST(GcnBackward, AllZeroMasksLeaveOnlyWeightDecay) {
  Rng rng(3);
  auto b = random_graph(rng, 5, 3, 2, 0.6);
  const auto c = make_config(b, {4});
  Rng init(3);
  const auto p = init_params(c, init);
  const NeighborIndex idx(b);
  const MaskSet zeros(1, 1, {0.0, 0.0});
  auto masks = std::make_shared<const SampleMasks>(zeros.sample(0, idx, c.layer_dims));
  const double wd = 0.3;
  const auto cache = forward(b, idx, c, p, masks);
  for (double x : cache.logits.data()) EXPECT_EQ(x, 0.0);
  const auto g = gcn_backward(cache, b, idx, c, p, b.labels, all_items(5), wd);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < p.weights[l].size(); ++i) {
      EXPECT_DOUBLE_EQ(g.weights[l].data()[i], wd * p.weights[l].data()[i]);
    }
  }
}

TEST(GcnBackward, ZeroWeightSingleLayerHandCase) {
  // One layer, zero weights: softmax is uniform, so dL/dW = X_agg^T (1/C - onehot) / n.
  GraphBundle b;
  b.num_nodes = 2;
  b.num_classes = 2;
  b.edges = {{0, 1}};
  b.features = Matrix{{1.0}, {3.0}};
  b.labels = {0, 1};
  const auto c = make_config(b, {});
  GcnParams p{{Matrix(1, 2)}};
  const NeighborIndex idx(b);
  const auto cache = gcn_forward(b, idx, c, p);
  const auto g = gcn_backward(cache, b, idx, c, p, b.labels, {0}, 0.0);
  // Node 0 aggregates (1 + 3) / 2 = 2; gradient = 2 * (0.5 - 1, 0.5 - 0).
  EXPECT_DOUBLE_EQ(g.weights[0](0, 0), -1.0);
  EXPECT_DOUBLE_EQ(g.weights[0](0, 1), 1.0);
  EXPECT_DOUBLE_EQ(g.data_loss, std::log(2.0));
}

TEST(GcnBackward, EmptyTrainSetGivesZeroDataGradient) {
  Rng rng(3);
  auto b = random_graph(rng, 5, 3, 2, 0.6);
  const auto c = make_config(b, {});
  Rng init(3);
  const auto p = init_params(c, init);
  const NeighborIndex idx(b);
  const auto g = gcn_backward(gcn_forward(b, idx, c, p), b, idx, c, p, b.labels, {}, 0.0);
  EXPECT_EQ(g.data_loss, 0.0);
  for (double x : g.weights[0].data()) EXPECT_EQ(x, 0.0);
}

TEST(Accuracy, LowestIndexWinsTies) {
  const Matrix s{{0.5, 0.5}, {0.2, 0.8}};
  EXPECT_EQ(accuracy(s, {0, 1}, {0, 1}), 1.0);
  EXPECT_EQ(accuracy(s, {1, 1}, {0, 1}), 0.5);
}

namespace {

GraphBundle easy_sbm(std::uint64_t seed) {
  Rng rng(seed);
  SbmSpec spec;
  spec.communities = 3;
  spec.nodes_per_community = 60;
  spec.p_in = 0.2;
  spec.p_out = 0.01;
  spec.feature_noise = 0.5;
  return generate_sbm(rng, spec);
}

}  // namespace

TEST(Training, SeparableSbmReachesHighTestAccuracy) {
  const auto b = easy_sbm(1);
  const NeighborIndex idx(b);
  Rng split_rng(2);
  const auto split = resample_split(split_rng, b, 30, 0, 120);
  auto c = make_config(b, {16});
  c.weight_decay = 5e-4;
  Rng rng(3);
  const auto model = train_frequentist(b, idx, split, c, rng, 100, 0.01);
  const auto logits = gcn_forward(b, idx, c, model.params).logits;
  EXPECT_GE(accuracy(logits, b.labels, split.test), 0.95);
  EXPECT_LT(model.log.final_loss, model.log.initial_loss);
}

TEST(Training, ZeroEpochsReturnsInitialization) {
  const auto b = easy_sbm(1);
  const NeighborIndex idx(b);
  Rng split_rng(2);
  const auto split = resample_split(split_rng, b, 30, 0, 30);
  const auto c = make_config(b, {8});
  Rng a(9), b2(9);
  const auto model = train_frequentist(b, idx, split, c, a, 0, 0.01);
  EXPECT_EQ(model.params, init_params(c, b2));
  EXPECT_TRUE(model.log.epochs.empty());
  EXPECT_EQ(model.log.initial_loss, model.log.final_loss);
}

TEST(Training, SameSeedSameWeights) {
  const auto b = easy_sbm(4);
  const NeighborIndex idx(b);
  Rng split_rng(2);
  const auto split = resample_split(split_rng, b, 30, 0, 30);
  auto c = make_config(b, {8});
  c.dropout_rate = 0.3;
  Rng r1(5), r2(5);
  EXPECT_EQ(train_frequentist(b, idx, split, c, r1, 20, 0.01).params,
            train_frequentist(b, idx, split, c, r2, 20, 0.01).params);
}

TEST(Training, DivergenceIsReported) {
  // Adam steps have magnitude ~lr, so a huge rate overflows the weights.
  const auto b = easy_sbm(4);
  const NeighborIndex idx(b);
  Rng split_rng(2);
  const auto split = resample_split(split_rng, b, 30, 0, 30);
  const auto c = make_config(b, {8});
  Rng r(5);
  EXPECT_THROW(train_frequentist(b, idx, split, c, r, 5, 1e308), DivergenceError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto b = easy_sbm(1);
  auto c = make_config(b, {7, 5});
  c.weight_decay = 0.125;
  Rng rng(3);
  const auto p = init_params(c, rng);
  const auto dir = std::filesystem::temp_directory_path() / "bayescp_gcn_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, c, p, nlohmann::json::object({{"note", "x"}}));
  const auto back = load_checkpoint(dir);
  EXPECT_EQ(back.params, p);
  EXPECT_EQ(back.config.layer_dims, c.layer_dims);
  EXPECT_EQ(back.config.weight_decay, 0.125);
  EXPECT_EQ(back.meta["note"], "x");
}

TEST(Checkpoint, MissingDirectoryThrows) {
  EXPECT_THROW(load_checkpoint("/nonexistent/bayescp/ckpt"), Error);
}
