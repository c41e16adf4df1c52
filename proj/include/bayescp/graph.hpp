#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bayescp/numerics.hpp"

namespace bayescp {

enum class Task { kNodeClassification, kGraphClassification };

std::string to_string(Task task);
Task parse_task(const std::string& s);

using Edge = std::pair<std::size_t, std::size_t>;

// One dataset. Graph-classification datasets are stored as the disjoint union
// of their graphs; `graph_index[v]` names the graph node v belongs to and the
// prediction items are graphs rather than nodes.
struct GraphBundle {
  std::string name;
  Task task = Task::kNodeClassification;
  std::size_t num_nodes = 0;
  std::size_t num_classes = 0;
  // Undirected, deduplicated, no self-loops, canonical (u < v), sorted.
  std::vector<Edge> edges;
  Matrix features;
  // Node labels. Required for node tasks, optional for graph tasks.
  std::vector<int> labels;
  std::vector<std::size_t> graph_index;
  std::vector<int> graph_labels;
  // Optional fixed training items (e.g. a public split shipped with the data).
  std::vector<std::size_t> train_items;

  std::size_t feature_dim() const noexcept { return features.cols(); }
  std::size_t num_graphs() const noexcept { return graph_labels.size(); }
  std::size_t num_items() const noexcept;
  int item_label(std::size_t item) const;
  std::vector<int> item_labels() const;
};

// Symmetrizes, drops self-loops and duplicates, returns sorted canonical edges.
std::vector<Edge> canonicalize_edges(std::vector<Edge> edges, std::size_t num_nodes);

// Checks every structural invariant; throws BundleError on the first violation.
void validate(const GraphBundle& bundle);

// Reads the on-disk bundle directory (meta.json, edges.csv, features.csv,
// labels.csv, and for graph tasks graph_index.csv + graph_labels.csv; an
// optional train.csv lists fixed training items).
GraphBundle load_bundle(const std::filesystem::path& dir);
void save_bundle(const GraphBundle& bundle, const std::filesystem::path& dir);

class NeighborIndex {
 public:
  NeighborIndex() = default;
  NeighborIndex(std::size_t num_nodes, const std::vector<Edge>& edges);
  explicit NeighborIndex(const GraphBundle& bundle) : NeighborIndex(bundle.num_nodes, bundle.edges) {}

  std::size_t num_nodes() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  // Sorted neighbors of v, self excluded.
  std::span<const std::size_t> neighbors(std::size_t v) const {
    return {neighbors_.data() + offsets_[v], offsets_[v + 1] - offsets_[v]};
  }
  // c_v = |N(v)| + 1.
  std::size_t degree_with_self(std::size_t v) const { return offsets_[v + 1] - offsets_[v] + 1; }

  // Aggregation pairs (v, u) for u in {v} followed by N(v): pair_offset(v) is
  // the position of (v, v); total_pairs() = sum over v of c_v.
  std::size_t pair_offset(std::size_t v) const { return offsets_[v] + v; }
  std::size_t total_pairs() const noexcept { return neighbors_.size() + num_nodes(); }

  friend bool operator==(const NeighborIndex&, const NeighborIndex&) = default;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> neighbors_;
};

struct SbmSpec {
  std::size_t communities = 2;
  std::size_t nodes_per_community = 50;
  double p_in = 0.5;
  double p_out = 0.05;
  // Standard deviation of the Gaussian noise added to one-hot features.
  double feature_noise = 0.0;
  // Probability that a node's label is replaced by a uniformly drawn class.
  double label_noise = 0.0;
  // Extra pure-noise feature columns appended after the one-hot block.
  std::size_t extra_features = 0;
};

GraphBundle generate_sbm(Rng& rng, const SbmSpec& spec);

struct SplitSpec {
  std::vector<std::size_t> train;
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

// Draws disjoint train/cal/test sets of the requested sizes uniformly from the
// bundle's items. When `fixed_train` is given it is used verbatim as the train
// set and only cal/test are drawn, from the remaining items.
SplitSpec resample_split(Rng& rng, const GraphBundle& bundle, std::size_t n_train, std::size_t n_cal,
                         std::size_t n_test,
                         const std::optional<std::vector<std::size_t>>& fixed_train = std::nullopt);

}  // namespace bayescp
