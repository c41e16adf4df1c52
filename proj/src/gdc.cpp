#include "bayescp/gdc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "bayescp/errors.hpp"

namespace bayescp {

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// DropRates

DropRates DropRates::fixed(std::vector<double> drop) {
  for (double p : drop) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValueError("DropRates: drop rate outside [0, 1]");
  }
  DropRates d;
  d.drop_ = std::move(drop);
  return d;
}

DropRates DropRates::learnable(std::vector<double> initial_drop) {
  DropRates d;
  d.learnable_ = true;
  for (double p : initial_drop) {
    if (!(p > 0.0 && p < 1.0)) throw ValueError("DropRates: learnable drop rate must be in (0, 1)");
    // drop = sigmoid(-phi)  =>  phi = log((1 - drop) / drop)
    d.keep_logits_.push_back(std::log((1.0 - p) / p));
  }
  return d;
}

double DropRates::drop_rate(std::size_t layer) const {
  return learnable_ ? sigmoid(-keep_logits_.at(layer)) : drop_.at(layer);
}

std::vector<double> DropRates::drop_rates() const {
  std::vector<double> out;
  for (std::size_t l = 0; l < num_layers(); ++l) out.push_back(drop_rate(l));
  return out;
}

std::span<double> DropRates::keep_logits() {
  if (!learnable_) throw ModeError("keep_logits: drop rates are fixed");
  return keep_logits_;
}

std::span<const double> DropRates::keep_logits() const {
  if (!learnable_) throw ModeError("keep_logits: drop rates are fixed");
  return keep_logits_;
}

void TemperatureConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ValueError("TemperatureConfig: beta must be finite and >= 0");
  if (!(prior_scale > 0.0)) throw ValueError("TemperatureConfig: prior_scale must be positive");
  if (!(prior_a > 0.0 && prior_b > 0.0)) throw ValueError("TemperatureConfig: Beta prior needs a, b > 0");
}

// ---------------------------------------------------------------------------
// Masks

MaskSet::MaskSet(std::uint64_t seed, std::size_t samples, std::vector<double> keep_probs)
    : seed_(seed), samples_(samples), keep_(std::move(keep_probs)) {
  if (samples_ == 0) throw ValueError("MaskSet: need at least one sample");
}

SampleMasks MaskSet::sample(std::size_t t, const NeighborIndex& index,
                            const std::vector<std::size_t>& layer_dims) const {
  if (layer_dims.size() != keep_.size() + 1) throw ShapeError("MaskSet: layer count mismatch");
  SampleMasks m;
  m.layers.resize(keep_.size());
  for (std::size_t l = 0; l < keep_.size(); ++l) {
    const std::size_t n = index.total_pairs() * layer_dims[l];
    auto& z = m.layers[l];
    const double keep = keep_[l];
    if (keep >= 1.0 || keep <= 0.0) {
      z.assign(n, keep >= 1.0 ? 1 : 0);
      continue;
    }
    z.resize(n);
    Rng rng(derive_seed(seed_, {t, l}));
    for (auto& bit : z) bit = rng.uniform() < keep ? 1 : 0;
  }
  return m;
}

MaskSet sample_masks(Rng& rng, const DropRates& drop_rates, std::size_t samples) {
  std::vector<double> keep;
  for (std::size_t l = 0; l < drop_rates.num_layers(); ++l) keep.push_back(drop_rates.keep_prob(l));
  return MaskSet(rng.next_u64(), samples, std::move(keep));
}

ForwardCache gdc_forward(const GraphBundle& bundle, const NeighborIndex& index, const GcnConfig& config,
                         const GcnParams& params, const SampleMasks& masks) {
  return forward(bundle, index, config, params, std::make_shared<const SampleMasks>(masks));
}

std::vector<double> mask_counts(const NeighborIndex& index, const GcnConfig& config) {
  std::vector<double> out;
  for (std::size_t l = 0; l < config.num_layers(); ++l) {
    out.push_back(static_cast<double>(index.total_pairs()) * static_cast<double>(config.layer_dims[l]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Free energy

namespace {

double xlogy_ratio(double x, double y) {
  if (x == 0.0) return 0.0;
  if (y == 0.0) return std::numeric_limits<double>::infinity();
  return x * std::log(x / y);
}

}  // namespace

double bernoulli_kl(double keep, double prior_keep) {
  return xlogy_ratio(keep, prior_keep) + xlogy_ratio(1.0 - keep, 1.0 - prior_keep);
}

KlTerms kl_divergence(const GcnParams& params, const DropRates& drop, const TemperatureConfig& temp,
                      std::span<const double> counts) {
  if (drop.num_layers() != params.weights.size() || counts.size() != params.weights.size()) {
    throw ShapeError("kl_divergence: layer count mismatch");
  }
  KlTerms kl;
  const double inv_two_s2 = 1.0 / (2.0 * temp.prior_scale * temp.prior_scale);
  const double prior_keep = 1.0 - temp.prior_drop();
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const double keep = drop.keep_prob(l);
    kl.weight += keep * inv_two_s2 * params.weights[l].squared_norm();
    kl.mask += counts[l] * bernoulli_kl(keep, prior_keep);
  }
  return kl;
}

FreeEnergy free_energy_loss(double nll, const GcnParams& params, const DropRates& drop, const TemperatureConfig& temp,
                            std::span<const double> counts, double kl_scale) {
  temp.validate();
  FreeEnergy fe;
  fe.nll = nll;
  fe.loss = nll;
  for (const auto& w : params.weights) fe.weight_grads.emplace_back(w.rows(), w.cols());
  fe.keep_logit_grads.assign(drop.num_layers(), 0.0);
  if (temp.beta == 0.0) return fe;

  const KlTerms kl = kl_divergence(params, drop, temp, counts);
  fe.kl_contribution = temp.beta * kl.total() * kl_scale;
  fe.loss = nll + fe.kl_contribution;

  const double coeff = temp.beta * kl_scale;
  const double inv_s2 = 1.0 / (temp.prior_scale * temp.prior_scale);
  const double prior_keep = 1.0 - temp.prior_drop();
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const double keep = drop.keep_prob(l);
    auto g = fe.weight_grads[l].data();
    auto w = params.weights[l].data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = coeff * keep * inv_s2 * w[i];
    if (drop.is_learnable()) {
      // d keep / d phi = keep (1 - keep)
      const double dkeep = keep * (1.0 - keep);
      const double d_weight = 0.5 * inv_s2 * params.weights[l].squared_norm();
      const double d_mask = counts[l] * (std::log(keep / prior_keep) - std::log((1.0 - keep) / (1.0 - prior_keep)));
      fe.keep_logit_grads[l] = coeff * dkeep * (d_weight + d_mask);
    }
  }
  return fe;
}

// ---------------------------------------------------------------------------
// ARM

std::vector<double> arm_estimate(std::span<const double> keep_logits, Rng& rng,
                                 const std::function<double(const std::vector<std::uint8_t>&)>& loss) {
  const std::size_t n = keep_logits.size();
  std::vector<double> u(n);
  std::vector<std::uint8_t> plus(n), minus(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = rng.uniform();
    plus[i] = u[i] > sigmoid(-keep_logits[i]) ? 1 : 0;
    minus[i] = u[i] < sigmoid(keep_logits[i]) ? 1 : 0;
  }
  const double diff = loss(plus) - loss(minus);
  std::vector<double> grad(n);
  for (std::size_t i = 0; i < n; ++i) grad[i] = diff * (u[i] - 0.5);
  return grad;
}

ArmResult arm_drop_rate_gradient(const BayesianModel& model, const GraphBundle& bundle, const NeighborIndex& index,
                                 const std::vector<std::size_t>& items, Rng& rng) {
  if (!model.drop.is_learnable()) throw ModeError("arm_drop_rate_gradient: drop rates are fixed");
  const auto phi = model.drop.keep_logits();
  const std::size_t layers = model.config.num_layers();
  if (phi.size() != layers) throw ShapeError("arm_drop_rate_gradient: layer count mismatch");

  auto plus = std::make_shared<SampleMasks>();
  auto minus = std::make_shared<SampleMasks>();
  plus->layers.resize(layers);
  minus->layers.resize(layers);
  std::vector<double> centered_u(layers, 0.0);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t n = index.total_pairs() * model.config.layer_dims[l];
    const double hi = sigmoid(-phi[l]);
    const double lo = sigmoid(phi[l]);
    auto& zp = plus->layers[l];
    auto& zm = minus->layers[l];
    zp.resize(n);
    zm.resize(n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      zp[i] = u > hi ? 1 : 0;
      zm[i] = u < lo ? 1 : 0;
      s += u - 0.5;
    }
    centered_u[l] = s;
  }

  const auto labels = bundle.item_labels();
  ArmResult r;
  r.loss_plus = mean_cross_entropy(forward(bundle, index, model.config, model.params, plus).logits, labels, items);
  r.loss_minus = mean_cross_entropy(forward(bundle, index, model.config, model.params, minus).logits, labels, items);
  const double diff = r.loss_plus - r.loss_minus;
  for (std::size_t l = 0; l < layers; ++l) r.keep_logit_grads.push_back(diff * centered_u[l]);
  r.masks_plus = std::move(*plus);
  return r;
}

// ---------------------------------------------------------------------------
// Training

BayesianModel train_bayesian(const GraphBundle& bundle, const NeighborIndex& index, const SplitSpec& split,
                             const GcnConfig& config, const TemperatureConfig& temp, DropRates drop, Rng& rng,
                             const BayesianTrainOptions& options) {
  config.validate(bundle.task);
  temp.validate();
  if (drop.num_layers() != config.num_layers()) throw ValueError("train_bayesian: one drop rate per layer required");
  if (options.train_samples == 0) throw ValueError("train_bayesian: train_samples must be >= 1");

  BayesianModel model{config, init_params(config, rng), std::move(drop), temp, {}};
  model.config.weight_decay = 0.0;
  model.config.dropout_rate = 0.0;
  const std::uint64_t mask_seed = rng.next_u64();
  Rng arm_rng(derive_seed(mask_seed, 0xa4a4a4a4ULL));

  const auto labels = bundle.item_labels();
  const auto counts = mask_counts(index, model.config);
  const double kl_scale = split.train.empty() ? 1.0 : 1.0 / static_cast<double>(split.train.size());
  const bool learnable = model.drop.is_learnable();

  std::vector<AdamState> adam;
  for (const auto& w : model.params.weights) adam.emplace_back(w, options.lr);
  Matrix phi_param(1, config.num_layers());
  AdamState phi_adam(phi_param, options.drop_rate_lr);

  auto objective = [&](std::uint64_t stream) {
    Rng eval_rng(derive_seed(mask_seed, stream));
    const auto ms = sample_masks(eval_rng, model.drop, 1);
    const auto cache = gdc_forward(bundle, index, model.config, model.params, ms.sample(0, index, model.config.layer_dims));
    const double nll = mean_cross_entropy(cache.logits, labels, split.train);
    return free_energy_loss(nll, model.params, model.drop, temp, counts, kl_scale).loss;
  };
  constexpr std::uint64_t kEvalStream = 0xe7a1e7a1ULL;
  model.log.initial_loss = objective(kEvalStream);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::vector<Matrix> data_grads;
    std::vector<double> arm_grads(config.num_layers(), 0.0);
    double nll = 0.0;
    double acc = 0.0;
    const MaskSet epoch_masks(derive_seed(mask_seed, static_cast<std::uint64_t>(epoch)), options.train_samples,
                              [&] {
                                std::vector<double> k;
                                for (std::size_t l = 0; l < model.drop.num_layers(); ++l) k.push_back(model.drop.keep_prob(l));
                                return k;
                              }());
    for (std::size_t s = 0; s < options.train_samples; ++s) {
      std::shared_ptr<const SampleMasks> masks;
      if (learnable) {
        auto arm = arm_drop_rate_gradient(model, bundle, index, split.train, arm_rng);
        for (std::size_t l = 0; l < arm_grads.size(); ++l) arm_grads[l] += arm.keep_logit_grads[l];
        masks = std::make_shared<const SampleMasks>(std::move(arm.masks_plus));
      } else {
        masks = std::make_shared<const SampleMasks>(epoch_masks.sample(s, index, model.config.layer_dims));
      }
      const auto cache = forward(bundle, index, model.config, model.params, masks);
      auto g = gcn_backward(cache, bundle, index, model.config, model.params, labels, split.train, 0.0);
      acc += accuracy(cache.logits, labels, split.train);
      if (s == 0) {
        data_grads = std::move(g.weights);
        nll = g.data_loss;
      } else {
        for (std::size_t l = 0; l < data_grads.size(); ++l) {
          auto dst = data_grads[l].data();
          auto src = g.weights[l].data();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
        nll += g.data_loss;
      }
    }
    if (options.train_samples > 1) {
      const double inv = 1.0 / static_cast<double>(options.train_samples);
      for (auto& m : data_grads) {
        for (double& x : m.data()) x *= inv;
      }
      nll *= inv;
      acc *= inv;
      for (double& g : arm_grads) g *= inv;
    }

    const auto fe = free_energy_loss(nll, model.params, model.drop, temp, counts, kl_scale);
    if (!std::isfinite(fe.loss)) {
      throw DivergenceError(epoch, "train_bayesian: non-finite loss at epoch " + std::to_string(epoch));
    }
    model.log.epochs.push_back({epoch, fe.loss, acc});

    for (std::size_t l = 0; l < data_grads.size(); ++l) {
      if (temp.beta != 0.0) {
        auto dst = data_grads[l].data();
        auto src = fe.weight_grads[l].data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
      adam_step(model.params.weights[l], data_grads[l], adam[l]);
    }
    if (learnable) {
      auto phi = model.drop.keep_logits();
      Matrix phi_grad(1, phi.size());
      for (std::size_t l = 0; l < phi.size(); ++l) {
        phi_param(0, l) = phi[l];
        phi_grad(0, l) = arm_grads[l] + fe.keep_logit_grads[l];
      }
      adam_step(phi_param, phi_grad, phi_adam);
      for (std::size_t l = 0; l < phi.size(); ++l) phi[l] = phi_param(0, l);
    }
    if (!model.params.all_finite()) {
      throw DivergenceError(epoch, "train_bayesian: non-finite weights at epoch " + std::to_string(epoch));
    }
  }
  model.log.final_loss = objective(kEvalStream);
  return model;
}

// ---------------------------------------------------------------------------
// Prediction

PredictiveTable mc_predict(const BayesianModel& model, const GraphBundle& bundle, const NeighborIndex& index,
                           const MaskSet& masks) {
  PredictiveTable table;
  for (std::size_t t = 0; t < masks.size(); ++t) {
    auto sm = std::make_shared<const SampleMasks>(masks.sample(t, index, model.config.layer_dims));
    const Matrix probs = softmax_rows(forward(bundle, index, model.config, model.params, sm).logits);
    if (t == 0) {
      table.probs = probs;
    } else {
      auto dst = table.probs.data();
      auto src = probs.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  if (masks.size() > 1) {
    const double inv = 1.0 / static_cast<double>(masks.size());
    for (double& x : table.probs.data()) x *= inv;
  }
  return table;
}

PredictiveTable predict_deterministic(const GcnConfig& config, const GcnParams& params, const GraphBundle& bundle,
                                      const NeighborIndex& index) {
  return {softmax_rows(gcn_forward(bundle, index, config, params).logits)};
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& dir, const BayesianModel& model) {
  nlohmann::json extra;
  extra["model"] = "bayesian";
  extra["drop_rates"] = {{"learnable", model.drop.is_learnable()}, {"values", model.drop.drop_rates()}};
  if (model.drop.is_learnable()) {
    const auto phi = model.drop.keep_logits();
    extra["drop_rates"]["keep_logits"] = std::vector<double>(phi.begin(), phi.end());
  }
  const auto& t = model.temperature;
  extra["temperature"] = {{"beta", t.beta}, {"prior_scale", t.prior_scale}, {"prior_a", t.prior_a}, {"prior_b", t.prior_b}};
  save_checkpoint(dir, model.config, model.params, extra);
}

BayesianModel load_bayesian_checkpoint(const std::filesystem::path& dir) {
  auto ck = load_checkpoint(dir);
  try {
    const auto& dr = ck.meta.at("drop_rates");
    DropRates drop;
    if (dr.at("learnable").get<bool>()) {
      drop = DropRates::learnable(std::vector<double>(ck.config.num_layers(), 0.5));
      const auto phi = dr.at("keep_logits").get<std::vector<double>>();
      auto dst = drop.keep_logits();
      if (phi.size() != dst.size()) throw Error("load_bayesian_checkpoint: keep_logits size mismatch");
      std::copy(phi.begin(), phi.end(), dst.begin());
    } else {
      drop = DropRates::fixed(dr.at("values").get<std::vector<double>>());
    }
    const auto& tj = ck.meta.at("temperature");
    TemperatureConfig temp{tj.at("beta").get<double>(), tj.at("prior_scale").get<double>(),
                           tj.at("prior_a").get<double>(), tj.at("prior_b").get<double>()};
    return BayesianModel{ck.config, std::move(ck.params), std::move(drop), temp, {}};
  } catch (const nlohmann::json::exception& e) {
    throw Error("load_bayesian_checkpoint: bad meta.json: " + std::string(e.what()));
  }
}

}  // namespace bayescp
