#pragma once

// Bayesian GCN through Graph DropConnect: every aggregation pair (v, u),
// self pair included, gets its own Bernoulli keep-mask over the layer's input
// features. Training minimizes the tempered free energy
//
//   F_beta = E_q[ sum_D -log p(y | x, theta) ] + beta * KL(q || p)
//
// divided by the number of training items, so beta = 0 gives exactly the
// frequentist mean cross-entropy.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "bayescp/gcn.hpp"
#include "bayescp/graph.hpp"
#include "bayescp/numerics.hpp"

namespace bayescp {

// Per-layer drop rates. In fixed mode `drop` holds probabilities in [0, 1].
// In learnable (ARM) mode the free parameters are keep-logits phi_l and the
// drop rate is sigmoid(-phi_l), always strictly inside (0, 1).
class DropRates {
 public:
  static DropRates fixed(std::vector<double> drop);
  static DropRates learnable(std::vector<double> initial_drop);

  bool is_learnable() const noexcept { return learnable_; }
  std::size_t num_layers() const noexcept { return learnable_ ? keep_logits_.size() : drop_.size(); }
  double drop_rate(std::size_t layer) const;
  double keep_prob(std::size_t layer) const { return 1.0 - drop_rate(layer); }
  std::vector<double> drop_rates() const;

  // Learnable mode only.
  std::span<double> keep_logits();
  std::span<const double> keep_logits() const;

 private:
  bool learnable_ = false;
  std::vector<double> drop_;
  std::vector<double> keep_logits_;
};

struct TemperatureConfig {
  double beta = 1.0;
  // Std-dev of the zero-mean Gaussian weight prior.
  double prior_scale = 1.0;
  // Beta(a, b) hyperparameters of the beta-Bernoulli mask prior; the prior
  // drop probability of a single mask entry is a / (a + b).
  double prior_a = 1.0;
  double prior_b = 1.0;

  void validate() const;
  double prior_drop() const noexcept { return prior_a / (prior_a + prior_b); }
};

double sigmoid(double x) noexcept;

// T stochastic passes worth of masks, stored as a seed: sample t of layer l is
// regenerated from derive_seed(seed, {t, l}) on demand, so every caller that
// asks for sample t sees the same bits.
class MaskSet {
 public:
  MaskSet(std::uint64_t seed, std::size_t samples, std::vector<double> keep_probs);

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t size() const noexcept { return samples_; }
  const std::vector<double>& keep_probs() const noexcept { return keep_; }

  // layer_dims as in GcnConfig (input widths are layer_dims[0..L-1]).
  SampleMasks sample(std::size_t t, const NeighborIndex& index, const std::vector<std::size_t>& layer_dims) const;

 private:
  std::uint64_t seed_;
  std::size_t samples_;
  std::vector<double> keep_;
};

// Draws a fresh mask seed from rng. T must be >= 1.
MaskSet sample_masks(Rng& rng, const DropRates& drop_rates, std::size_t samples);

ForwardCache gdc_forward(const GraphBundle& bundle, const NeighborIndex& index, const GcnConfig& config,
                         const GcnParams& params, const SampleMasks& masks);

// Number of mask entries in each layer: total_pairs * f_l.
std::vector<double> mask_counts(const NeighborIndex& index, const GcnConfig& config);

// KL(Bern(keep) || Bern(prior_keep)) for one variable.
double bernoulli_kl(double keep, double prior_keep);

struct KlTerms {
  // sum_l (1 - pi_l) / (2 s^2) ||W_l||^2
  double weight = 0.0;
  // sum_l N_l * KL(Bern(1 - pi_l) || Bern(1 - pi_prior))
  double mask = 0.0;
  double total() const noexcept { return weight + mask; }
};

KlTerms kl_divergence(const GcnParams& params, const DropRates& drop, const TemperatureConfig& temp,
                      std::span<const double> mask_counts);

struct FreeEnergy {
  double loss = 0.0;
  double nll = 0.0;
  // beta * kl_scale * KL, the part added to nll.
  double kl_contribution = 0.0;
  // Gradient of kl_contribution w.r.t. each weight matrix and keep-logit.
  std::vector<Matrix> weight_grads;
  std::vector<double> keep_logit_grads;
};

// loss = nll + beta * kl_scale * KL. With beta == 0 the KL part is skipped
// entirely, value and gradient.
FreeEnergy free_energy_loss(double nll, const GcnParams& params, const DropRates& drop, const TemperatureConfig& temp,
                            std::span<const double> mask_counts, double kl_scale);

struct BayesianModel {
  GcnConfig config;
  GcnParams params;
  DropRates drop;
  TemperatureConfig temperature;
  TrainingLog log;
};

struct BayesianTrainOptions {
  int epochs = 200;
  double lr = 0.005;
  // MC mask samples per optimization step.
  std::size_t train_samples = 1;
  // Adam learning rate for the keep-logits in ARM mode.
  double drop_rate_lr = 0.005;
};

// Weight decay and dropout in `config` are ignored; the KL term replaces them.
BayesianModel train_bayesian(const GraphBundle& bundle, const NeighborIndex& index, const SplitSpec& split,
                             const GcnConfig& config, const TemperatureConfig& temp, DropRates drop, Rng& rng,
                             const BayesianTrainOptions& options);

// Multivariate ARM estimate of d/dphi E_{z ~ Bern(sigmoid(phi))}[loss(z)] from
// one antithetic draw: (loss(1[u > sigmoid(-phi)]) - loss(1[u < sigmoid(phi)])) * (u - 1/2).
std::vector<double> arm_estimate(std::span<const double> keep_logits, Rng& rng,
                                 const std::function<double(const std::vector<std::uint8_t>&)>& loss);

struct ArmResult {
  // d mean-NLL / d phi_l, one entry per layer.
  std::vector<double> keep_logit_grads;
  double loss_plus = 0.0;
  double loss_minus = 0.0;
  // Masks of the 1[u > sigmoid(-phi)] pass, a valid draw from the posterior.
  SampleMasks masks_plus;
};

// Layer-level ARM gradient of the mean training NLL with respect to the
// keep-logits. Throws ModeError when the model's drop rates are fixed.
ArmResult arm_drop_rate_gradient(const BayesianModel& model, const GraphBundle& bundle, const NeighborIndex& index,
                                 const std::vector<std::size_t>& items, Rng& rng);

struct PredictiveTable {
  // One probability row per prediction item.
  Matrix probs;
};

// Mean over t of softmax(gdc_forward(masks_t)) for every item in one pass.
PredictiveTable mc_predict(const BayesianModel& model, const GraphBundle& bundle, const NeighborIndex& index,
                           const MaskSet& masks);

PredictiveTable predict_deterministic(const GcnConfig& config, const GcnParams& params, const GraphBundle& bundle,
                                      const NeighborIndex& index);

void save_checkpoint(const std::filesystem::path& dir, const BayesianModel& model);
BayesianModel load_bayesian_checkpoint(const std::filesystem::path& dir);

}  // namespace bayescp
