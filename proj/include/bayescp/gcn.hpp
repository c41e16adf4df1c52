#pragma once

// Graph convolution with mean aggregation over the closed neighborhood:
//
//   h_v^(l+1) = act( (1/c_v) * sum_{u in N(v) + {v}} (z_vu^(l) * h_u^(l)) W^(l) )
//
// where z is an optional per-pair, per-feature binary mask (all ones for the
// deterministic network). ReLU on hidden layers, identity on the last one.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bayescp/graph.hpp"
#include "bayescp/numerics.hpp"

namespace bayescp {

enum class Readout { kNone, kMean, kSum };

std::string to_string(Readout r);
Readout parse_readout(const std::string& s);

struct GcnConfig {
  // [f_0, f_1, ..., f_L]; f_L is the number of classes.
  std::vector<std::size_t> layer_dims;
  Readout readout = Readout::kNone;
  double weight_decay = 0.0;
  // Dropout on hidden activations, frequentist training only.
  double dropout_rate = 0.0;

  std::size_t num_layers() const noexcept { return layer_dims.empty() ? 0 : layer_dims.size() - 1; }
  // Throws ValueError if the config is inconsistent with `task`.
  void validate(Task task) const;
};

void to_json(nlohmann::json& j, const GcnConfig& c);
void from_json(const nlohmann::json& j, GcnConfig& c);

struct GcnParams {
  // weights[l] is f_l x f_{l+1}.
  std::vector<Matrix> weights;

  double squared_norm() const noexcept;
  bool all_finite() const noexcept;
  friend bool operator==(const GcnParams&, const GcnParams&) = default;
};

GcnParams init_params(const GcnConfig& config, Rng& rng);

// Keep-masks for one stochastic forward pass. layers[l] holds
// NeighborIndex::total_pairs() * f_l entries in {0, 1}; pair p = pair_offset(v) + k
// occupies [p * f_l, (p + 1) * f_l), k = 0 being the self pair.
struct SampleMasks {
  std::vector<std::vector<std::uint8_t>> layers;
};

struct ForwardCache {
  // inputs[l] is the layer-l input (after dropout for l > 0), n x f_l.
  std::vector<Matrix> inputs;
  // aggregated[l] = masked, degree-normalized neighborhood sum of inputs[l].
  std::vector<Matrix> aggregated;
  // pre_activation[l] = aggregated[l] * W^(l).
  std::vector<Matrix> pre_activation;
  // Inverted-dropout multipliers applied to inputs[l] (empty when unused).
  std::vector<Matrix> dropout_scale;
  std::shared_ptr<const SampleMasks> masks;
  // One row per prediction item (node, or graph after readout).
  Matrix logits;
};

struct Gradients {
  std::vector<Matrix> weights;
  // Mean cross-entropy over the training items (0 when there are none).
  double data_loss = 0.0;
  // 0.5 * weight_decay * ||W||^2.
  double penalty = 0.0;
  double loss() const noexcept { return data_loss + penalty; }
};

// Shared implementation behind gcn_forward and gdc_forward. `masks` may be
// null (all ones). `dropout_rng` enables frequentist dropout when non-null and
// config.dropout_rate > 0.
ForwardCache forward(const GraphBundle& bundle, const NeighborIndex& index, const GcnConfig& config,
                     const GcnParams& params, std::shared_ptr<const SampleMasks> masks = nullptr,
                     Rng* dropout_rng = nullptr);

ForwardCache gcn_forward(const GraphBundle& bundle, const NeighborIndex& index, const GcnConfig& config,
                         const GcnParams& params);

// Gradients of mean cross-entropy over `train_items` plus the L2 term with
// coefficient `weight_decay`.
Gradients gcn_backward(const ForwardCache& cache, const GraphBundle& bundle, const NeighborIndex& index,
                       const GcnConfig& config, const GcnParams& params, const std::vector<int>& item_labels,
                       const std::vector<std::size_t>& train_items, double weight_decay);

// Mean cross-entropy of softmax(logits) at the given items.
double mean_cross_entropy(const Matrix& logits, const std::vector<int>& item_labels,
                          const std::vector<std::size_t>& items);
// Fraction of items whose argmax (lowest index on ties) equals the label.
double accuracy(const Matrix& scores, const std::vector<int>& item_labels, const std::vector<std::size_t>& items);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct FrequentistModel {
  GcnConfig config;
  GcnParams params;
  TrainingLog log;
};

// Full-batch Adam training on split.train. Throws DivergenceError on a
// non-finite loss.
FrequentistModel train_frequentist(const GraphBundle& bundle, const NeighborIndex& index, const SplitSpec& split,
                                   const GcnConfig& config, Rng& rng, int epochs, double lr);

// Checkpoint directory: meta.json plus layer_<l>.bin per weight matrix
// ("BCPW" magic, u64 rows, u64 cols, row-major little-endian f64).
void save_checkpoint(const std::filesystem::path& dir, const GcnConfig& config, const GcnParams& params,
                     const nlohmann::json& extra = nlohmann::json::object());
struct Checkpoint {
  GcnConfig config;
  GcnParams params;
  nlohmann::json meta;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace bayescp
