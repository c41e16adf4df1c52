#include "bayescp/gcn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "bayescp/errors.hpp"

namespace bayescp {

namespace fs = std::filesystem;

std::string to_string(Readout r) {
  switch (r) {
    case Readout::kNone: return "none";
    case Readout::kMean: return "mean";
    case Readout::kSum: return "sum";
  }
  return "none";
}

Readout parse_readout(const std::string& s) {
  if (s == "none") return Readout::kNone;
  if (s == "mean") return Readout::kMean;
  if (s == "sum") return Readout::kSum;
  throw ValueError("unknown readout '" + s + "'");
}

void GcnConfig::validate(Task task) const {
  if (layer_dims.size() < 2) throw ValueError("GcnConfig: need at least one layer");
  if (std::find(layer_dims.begin(), layer_dims.end(), 0) != layer_dims.end()) {
    throw ValueError("GcnConfig: zero layer width");
  }
  if ((readout == Readout::kNone) != (task == Task::kNodeClassification)) {
    throw ValueError("GcnConfig: readout must be none exactly for node classification");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValueError("GcnConfig: dropout_rate outside [0, 1)");
  if (!(weight_decay >= 0.0)) throw ValueError("GcnConfig: negative weight_decay");
}

void to_json(nlohmann::json& j, const GcnConfig& c) {
  j = nlohmann::json{{"layer_dims", c.layer_dims},
                     {"readout", to_string(c.readout)},
                     {"weight_decay", c.weight_decay},
                     {"dropout_rate", c.dropout_rate}};
}

void from_json(const nlohmann::json& j, GcnConfig& c) {
  c.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
  c.readout = parse_readout(j.value("readout", std::string("none")));
  c.weight_decay = j.value("weight_decay", 0.0);
  c.dropout_rate = j.value("dropout_rate", 0.0);
}

double GcnParams::squared_norm() const noexcept {
  double s = 0.0;
  for (const auto& w : weights) s += w.squared_norm();
  return s;
}

bool GcnParams::all_finite() const noexcept {
  return std::all_of(weights.begin(), weights.end(), [](const Matrix& w) { return w.all_finite(); });
}

GcnParams init_params(const GcnConfig& config, Rng& rng) {
  GcnParams p;
  for (std::size_t l = 0; l < config.num_layers(); ++l) {
    p.weights.push_back(glorot_init(rng, config.layer_dims[l], config.layer_dims[l + 1]));
  }
  return p;
}

namespace {

void check_shapes(const GraphBundle& bundle, const NeighborIndex& index, const GcnConfig& config,
                  const GcnParams& params, const SampleMasks* masks) {
  if (config.layer_dims.size() < 2) throw ShapeError("forward: config has no layers");
  if (bundle.feature_dim() != config.layer_dims[0]) {
    throw ShapeError("forward: feature dim " + std::to_string(bundle.feature_dim()) + " != layer_dims[0] " +
                     std::to_string(config.layer_dims[0]));
  }
  if (index.num_nodes() != bundle.num_nodes) throw ShapeError("forward: neighbor index size mismatch");
  if (params.weights.size() != config.num_layers()) throw ShapeError("forward: wrong number of weight matrices");
  for (std::size_t l = 0; l < config.num_layers(); ++l) {
    const auto& w = params.weights[l];
    if (w.rows() != config.layer_dims[l] || w.cols() != config.layer_dims[l + 1]) {
      throw ShapeError("forward: weight " + std::to_string(l) + " has wrong shape");
    }
  }
  if (masks) {
    if (masks->layers.size() != config.num_layers()) throw ShapeError("forward: mask layer count mismatch");
    for (std::size_t l = 0; l < config.num_layers(); ++l) {
      if (masks->layers[l].size() != index.total_pairs() * config.layer_dims[l]) {
        throw ShapeError("forward: mask for layer " + std::to_string(l) + " has wrong size");
      }
    }
  }
}

// out_v = (1/c_v) sum_{u in {v} + N(v)} z_vu * h_u
Matrix aggregate(const Matrix& h, const NeighborIndex& index, const std::uint8_t* mask) {
  const std::size_t f = h.cols();
  Matrix out(h.rows(), f);
  for (std::size_t v = 0; v < h.rows(); ++v) {
    auto acc = out.row(v);
    std::size_t pair = index.pair_offset(v);
    auto add = [&](std::size_t u) {
      auto hu = h.row(u);
      if (mask) {
        const std::uint8_t* z = mask + pair * f;
        for (std::size_t j = 0; j < f; ++j) acc[j] += z[j] ? hu[j] : 0.0;
      } else {
        for (std::size_t j = 0; j < f; ++j) acc[j] += hu[j];
      }
      ++pair;
    };
    add(v);
    for (std::size_t u : index.neighbors(v)) add(u);
    const double c = static_cast<double>(index.degree_with_self(v));
    for (double& x : acc) x /= c;
  }
  return out;
}

// Adjoint of aggregate: dh_u += (1/c_v) z_vu * dagg_v.
Matrix aggregate_backward(const Matrix& dagg, const NeighborIndex& index, const std::uint8_t* mask) {
  const std::size_t f = dagg.cols();
  Matrix dh(dagg.rows(), f);
  std::vector<double> g(f);
  for (std::size_t v = 0; v < dagg.rows(); ++v) {
    const double c = static_cast<double>(index.degree_with_self(v));
    auto dv = dagg.row(v);
    for (std::size_t j = 0; j < f; ++j) g[j] = dv[j] / c;
    std::size_t pair = index.pair_offset(v);
    auto scatter = [&](std::size_t u) {
      auto du = dh.row(u);
      if (mask) {
        const std::uint8_t* z = mask + pair * f;
        for (std::size_t j = 0; j < f; ++j) {
          if (z[j]) du[j] += g[j];
        }
      } else {
        for (std::size_t j = 0; j < f; ++j) du[j] += g[j];
      }
      ++pair;
    };
    scatter(v);
    for (std::size_t u : index.neighbors(v)) scatter(u);
  }
  return dh;
}

Matrix apply_readout(const Matrix& node_out, const GraphBundle& bundle, Readout readout) {
  if (readout == Readout::kNone) return node_out;
  Matrix out(bundle.num_graphs(), node_out.cols());
  std::vector<std::size_t> count(bundle.num_graphs(), 0);
  for (std::size_t v = 0; v < node_out.rows(); ++v) {
    const std::size_t g = bundle.graph_index[v];
    ++count[g];
    auto dst = out.row(g);
    auto src = node_out.row(v);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  if (readout == Readout::kMean) {
    for (std::size_t g = 0; g < out.rows(); ++g) {
      if (count[g] == 0) continue;
      for (double& x : out.row(g)) x /= static_cast<double>(count[g]);
    }
  }
  return out;
}

double log_sum_exp(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double x : row) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

ForwardCache forward(const GraphBundle& bundle, const NeighborIndex& index, const GcnConfig& config,
                     const GcnParams& params, std::shared_ptr<const SampleMasks> masks, Rng* dropout_rng) {
  check_shapes(bundle, index, config, params, masks.get());
  const std::size_t layers = config.num_layers();
  ForwardCache cache;
  cache.masks = std::move(masks);
  cache.inputs.reserve(layers);
  cache.aggregated.reserve(layers);
  cache.pre_activation.reserve(layers);
  cache.dropout_scale.resize(layers);

  const bool use_dropout = dropout_rng != nullptr && config.dropout_rate > 0.0;
  const double keep = 1.0 - config.dropout_rate;

  Matrix h = bundle.features;
  for (std::size_t l = 0; l < layers; ++l) {
    if (l > 0 && use_dropout) {
      Matrix scale(h.rows(), h.cols());
      for (std::size_t i = 0; i < h.size(); ++i) {
        scale.data()[i] = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
        h.data()[i] *= scale.data()[i];
      }
      cache.dropout_scale[l] = std::move(scale);
    }
    const std::uint8_t* mask = cache.masks ? cache.masks->layers[l].data() : nullptr;
    Matrix agg = aggregate(h, index, mask);
    Matrix pre = matmul(agg, params.weights[l]);
    cache.inputs.push_back(std::move(h));
    cache.aggregated.push_back(std::move(agg));
    h = pre;
    if (l + 1 < layers) {
      for (double& x : h.data()) x = x > 0.0 ? x : 0.0;
    }
    cache.pre_activation.push_back(std::move(pre));
  }
  cache.logits = apply_readout(h, bundle, config.readout);
  return cache;
}

ForwardCache gcn_forward(const GraphBundle& bundle, const NeighborIndex& index, const GcnConfig& config,
                         const GcnParams& params) {
  return forward(bundle, index, config, params);
}

Gradients gcn_backward(const ForwardCache& cache, const GraphBundle& bundle, const NeighborIndex& index,
                       const GcnConfig& config, const GcnParams& params, const std::vector<int>& item_labels,
                       const std::vector<std::size_t>& train_items, double weight_decay) {
  const std::size_t layers = config.num_layers();
  if (cache.pre_activation.size() != layers || cache.logits.empty()) {
    throw ValueError("gcn_backward: forward cache missing or incomplete");
  }
  Gradients grads;
  grads.weights.reserve(layers);
  for (const auto& w : params.weights) grads.weights.emplace_back(w.rows(), w.cols());

  // d loss / d item logits.
  const std::size_t classes = cache.logits.cols();
  Matrix dlogits(cache.logits.rows(), classes);
  if (!train_items.empty()) {
    const double inv_n = 1.0 / static_cast<double>(train_items.size());
    double loss = 0.0;
    for (std::size_t i : train_items) {
      auto z = cache.logits.row(i);
      const double lse = log_sum_exp(z);
      const int y = item_labels.at(i);
      loss += lse - z[static_cast<std::size_t>(y)];
      auto d = dlogits.row(i);
      for (std::size_t c = 0; c < classes; ++c) d[c] += std::exp(z[c] - lse) * inv_n;
      d[static_cast<std::size_t>(y)] -= inv_n;
    }
    grads.data_loss = loss * inv_n;

    Matrix dout;
    if (config.readout == Readout::kNone) {
      dout = std::move(dlogits);
    } else {
      std::vector<std::size_t> count(bundle.num_graphs(), 0);
      for (std::size_t g : bundle.graph_index) ++count[g];
      dout = Matrix(bundle.num_nodes, classes);
      for (std::size_t v = 0; v < bundle.num_nodes; ++v) {
        const std::size_t g = bundle.graph_index[v];
        const double scale = config.readout == Readout::kMean ? 1.0 / static_cast<double>(count[g]) : 1.0;
        auto src = dlogits.row(g);
        auto dst = dout.row(v);
        for (std::size_t c = 0; c < classes; ++c) dst[c] = src[c] * scale;
      }
    }

    for (std::size_t l = layers; l-- > 0;) {
      Matrix& dpre = dout;
      if (l + 1 < layers) {
        const Matrix& pre = cache.pre_activation[l];
        for (std::size_t i = 0; i < dpre.size(); ++i) {
          if (!(pre.data()[i] > 0.0)) dpre.data()[i] = 0.0;
        }
      }
      grads.weights[l] = matmul_at_b(cache.aggregated[l], dpre);
      if (l == 0) break;
      Matrix dagg = matmul_a_bt(dpre, params.weights[l]);
      const std::uint8_t* mask = cache.masks ? cache.masks->layers[l].data() : nullptr;
      Matrix dh = aggregate_backward(dagg, index, mask);
      if (!cache.dropout_scale[l].empty()) {
        for (std::size_t i = 0; i < dh.size(); ++i) dh.data()[i] *= cache.dropout_scale[l].data()[i];
      }
      dout = std::move(dh);
    }
  }

  if (weight_decay > 0.0) {
    for (std::size_t l = 0; l < layers; ++l) {
      auto g = grads.weights[l].data();
      auto w = params.weights[l].data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += weight_decay * w[i];
    }
    grads.penalty = 0.5 * weight_decay * params.squared_norm();
  }
  return grads;
}

double mean_cross_entropy(const Matrix& logits, const std::vector<int>& item_labels,
                          const std::vector<std::size_t>& items) {
  if (items.empty()) return 0.0;
  double loss = 0.0;
  for (std::size_t i : items) {
    auto z = logits.row(i);
    loss += log_sum_exp(z) - z[static_cast<std::size_t>(item_labels.at(i))];
  }
  return loss / static_cast<double>(items.size());
}

double accuracy(const Matrix& scores, const std::vector<int>& item_labels, const std::vector<std::size_t>& items) {
  if (items.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i : items) {
    auto r = scores.row(i);
    const auto pred = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    if (pred == item_labels.at(i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

FrequentistModel train_frequentist(const GraphBundle& bundle, const NeighborIndex& index, const SplitSpec& split,
                                   const GcnConfig& config, Rng& rng, int epochs, double lr) {
  config.validate(bundle.task);
  FrequentistModel model;
  model.config = config;
  model.params = init_params(config, rng);
  Rng dropout_rng(rng.next_u64());

  const auto labels = bundle.item_labels();
  std::vector<AdamState> adam;
  for (const auto& w : model.params.weights) adam.emplace_back(w, lr);

  auto eval_loss = [&] {
    const auto cache = gcn_forward(bundle, index, config, model.params);
    return mean_cross_entropy(cache.logits, labels, split.train) +
           0.5 * config.weight_decay * model.params.squared_norm();
  };
  model.log.initial_loss = eval_loss();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto cache = forward(bundle, index, config, model.params, nullptr, &dropout_rng);
    const auto grads =
        gcn_backward(cache, bundle, index, config, model.params, labels, split.train, config.weight_decay);
    if (!std::isfinite(grads.loss())) {
      throw DivergenceError(epoch, "train_frequentist: non-finite loss at epoch " + std::to_string(epoch));
    }
    model.log.epochs.push_back({epoch, grads.loss(), accuracy(cache.logits, labels, split.train)});
    for (std::size_t l = 0; l < model.params.weights.size(); ++l) {
      adam_step(model.params.weights[l], grads.weights[l], adam[l]);
    }
    if (!model.params.all_finite()) {
      throw DivergenceError(epoch, "train_frequentist: non-finite weights at epoch " + std::to_string(epoch));
    }
  }
  model.log.final_loss = eval_loss();
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'B', 'C', 'P', 'W'};

void put_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) {
    x |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  }
  return x;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const GcnConfig& config, const GcnParams& params,
                     const nlohmann::json& extra) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("save_checkpoint: cannot create " + dir.string());
  nlohmann::json meta = extra;
  meta["config"] = config;
  meta["num_layers"] = params.weights.size();
  {
    std::ofstream out(dir / "meta.json", std::ios::binary);
    if (!out) throw Error("save_checkpoint: cannot write meta.json in " + dir.string());
    out << meta.dump(2) << '\n';
  }
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const auto& w = params.weights[l];
    std::string buf(kMagic, 4);
    put_u64(buf, w.rows());
    put_u64(buf, w.cols());
    for (double x : w.data()) put_u64(buf, std::bit_cast<std::uint64_t>(x));
    const auto path = dir / ("layer_" + std::to_string(l) + ".bin");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_checkpoint: cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint ck;
  {
    std::ifstream in(dir / "meta.json");
    if (!in) throw Error("load_checkpoint: missing meta.json in " + dir.string());
    try {
      ck.meta = nlohmann::json::parse(in);
      ck.config = ck.meta.at("config").get<GcnConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw Error("load_checkpoint: bad meta.json: " + std::string(e.what()));
    }
  }
  for (std::size_t l = 0; l < ck.config.num_layers(); ++l) {
    const auto path = dir / ("layer_" + std::to_string(l) + ".bin");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_checkpoint: missing " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 20 || buf.compare(0, 4, kMagic, 4) != 0) throw Error("load_checkpoint: bad header in " + path.string());
    const auto rows = get_u64(buf, 4);
    const auto cols = get_u64(buf, 12);
    if (rows != ck.config.layer_dims[l] || cols != ck.config.layer_dims[l + 1] || buf.size() != 20 + 8 * rows * cols) {
      throw Error("load_checkpoint: shape mismatch in " + path.string());
    }
    Matrix w(rows, cols);
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = std::bit_cast<double>(get_u64(buf, 20 + 8 * i));
    ck.params.weights.push_back(std::move(w));
  }
  return ck;
}

}  // namespace bayescp
