#include "bayescp/graph.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string_view>

#include <json.hpp>

#include "bayescp/errors.hpp"

namespace bayescp {

namespace fs = std::filesystem;
using Kind = BundleError::Kind;

std::string to_string(Task task) {
  return task == Task::kNodeClassification ? "node-classification" : "graph-classification";
}

Task parse_task(const std::string& s) {
  if (s == "node-classification") return Task::kNodeClassification;
  if (s == "graph-classification") return Task::kGraphClassification;
  throw ValueError("unknown task '" + s + "'");
}

std::size_t GraphBundle::num_items() const noexcept {
  return task == Task::kNodeClassification ? num_nodes : num_graphs();
}

int GraphBundle::item_label(std::size_t item) const {
  return task == Task::kNodeClassification ? labels.at(item) : graph_labels.at(item);
}

std::vector<int> GraphBundle::item_labels() const {
  return task == Task::kNodeClassification ? labels : graph_labels;
}

std::vector<Edge> canonicalize_edges(std::vector<Edge> edges, std::size_t num_nodes) {
  std::vector<Edge> out;
  out.reserve(edges.size());
  for (auto [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes) {
      throw BundleError(Kind::kIndexOutOfRange,
                        "edge (" + std::to_string(u) + ", " + std::to_string(v) +
                            ") out of range for " + std::to_string(num_nodes) + " nodes");
    }
    if (u == v) continue;
    out.emplace_back(std::min(u, v), std::max(u, v));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void validate(const GraphBundle& b) {
  if (b.features.rows() != b.num_nodes) {
    throw BundleError(Kind::kMalformed, "features have " + std::to_string(b.features.rows()) +
                                            " rows, expected " + std::to_string(b.num_nodes));
  }
  if (b.num_classes == 0) throw BundleError(Kind::kMalformed, "num_classes must be positive");
  for (auto [u, v] : b.edges) {
    if (u >= b.num_nodes || v >= b.num_nodes) {
      throw BundleError(Kind::kIndexOutOfRange, "edge endpoint out of range");
    }
  }
  auto check_labels = [&](const std::vector<int>& labels, const char* what) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= b.num_classes) {
        throw BundleError(Kind::kLabelOutOfRange, std::string(what) + " " + std::to_string(i) +
                                                      " has label " + std::to_string(labels[i]));
      }
    }
  };
  if (b.task == Task::kNodeClassification) {
    if (b.labels.size() != b.num_nodes) {
      throw BundleError(Kind::kMalformed, "expected one label per node");
    }
    check_labels(b.labels, "node");
  } else {
    if (b.graph_index.size() != b.num_nodes) {
      throw BundleError(Kind::kMalformed, "expected one graph index per node");
    }
    for (std::size_t g : b.graph_index) {
      if (g >= b.num_graphs()) throw BundleError(Kind::kIndexOutOfRange, "graph index out of range");
    }
    for (auto [u, v] : b.edges) {
      if (b.graph_index[u] != b.graph_index[v]) {
        throw BundleError(Kind::kMalformed, "edge crosses graphs");
      }
    }
    check_labels(b.graph_labels, "graph");
    if (!b.labels.empty()) {
      if (b.labels.size() != b.num_nodes) throw BundleError(Kind::kMalformed, "expected one label per node");
      check_labels(b.labels, "node");
    }
  }
  for (std::size_t i : b.train_items) {
    if (i >= b.num_items()) throw BundleError(Kind::kIndexOutOfRange, "train item out of range");
  }
}

// ---------------------------------------------------------------------------
// Text IO

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError(Kind::kMissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Calls fn(line_number, fields) for every non-empty line.
template <typename Fn>
void for_each_csv_line(const fs::path& path, const std::string& text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  std::vector<std::string_view> fields;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    fields.clear();
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      auto field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
      fields.push_back(field);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    fn(line_no, fields);
  }
  (void)path;
}

std::string where(const fs::path& path, std::size_t line) {
  return path.filename().string() + ":" + std::to_string(line);
}

template <typename T>
T parse_number(std::string_view s, const fs::path& path, std::size_t line) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw BundleError(Kind::kMalformed, where(path, line) + ": cannot parse '" + std::string(s) + "'");
  }
  return value;
}

std::vector<long long> read_int_column(const fs::path& path) {
  const std::string text = read_file(path);
  std::vector<long long> out;
  for_each_csv_line(path, text, [&](std::size_t line, const std::vector<std::string_view>& f) {
    if (f.size() != 1) {
      throw BundleError(Kind::kMalformed, where(path, line) + ": expected 1 column, got " +
                                              std::to_string(f.size()));
    }
    out.push_back(parse_number<long long>(f[0], path, line));
  });
  return out;
}

std::vector<int> read_labels(const fs::path& path, std::size_t num_classes) {
  const std::string text = read_file(path);
  std::vector<int> out;
  for_each_csv_line(path, text, [&](std::size_t line, const std::vector<std::string_view>& f) {
    if (f.size() != 1) throw BundleError(Kind::kMalformed, where(path, line) + ": expected 1 column");
    const auto y = parse_number<long long>(f[0], path, line);
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw BundleError(Kind::kLabelOutOfRange, where(path, line) + ": label " + std::to_string(y) +
                                                    " outside [0, " + std::to_string(num_classes) + ")");
    }
    out.push_back(static_cast<int>(y));
  });
  return out;
}

std::vector<std::size_t> read_indices(const fs::path& path, std::size_t bound, const char* what) {
  std::vector<std::size_t> out;
  const std::string text = read_file(path);
  for_each_csv_line(path, text, [&](std::size_t line, const std::vector<std::string_view>& f) {
    if (f.size() != 1) throw BundleError(Kind::kMalformed, where(path, line) + ": expected 1 column");
    const auto i = parse_number<long long>(f[0], path, line);
    if (i < 0 || static_cast<std::size_t>(i) >= bound) {
      throw BundleError(Kind::kIndexOutOfRange, where(path, line) + ": " + what + " " +
                                                    std::to_string(i) + " out of range");
    }
    out.push_back(static_cast<std::size_t>(i));
  });
  return out;
}

void append_double(std::string& out, double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  out.append(buf, ptr);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BundleError(Kind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw BundleError(Kind::kIo, "write failed for " + path.string());
}

template <typename Range>
std::string one_per_line(const Range& values) {
  std::string s;
  for (const auto& v : values) {
    s += std::to_string(v);
    s += '\n';
  }
  return s;
}

}  // namespace

GraphBundle load_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw BundleError(Kind::kMissingFile, "bundle directory not found: " + dir.string());
  }
  GraphBundle b;
  const fs::path meta_path = dir / "meta.json";
  {
    const std::string text = read_file(meta_path);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(text);
      b.num_nodes = meta.at("num_nodes").get<std::size_t>();
      b.num_classes = meta.at("num_classes").get<std::size_t>();
      b.task = parse_task(meta.value("task", std::string("node-classification")));
      b.name = meta.value("name", std::string{});
      const auto feature_dim = meta.at("feature_dim").get<std::size_t>();
      b.features = Matrix(b.num_nodes, feature_dim);
    } catch (const nlohmann::json::exception& e) {
      throw BundleError(Kind::kMalformed, "meta.json: " + std::string(e.what()));
    } catch (const ValueError& e) {
      throw BundleError(Kind::kMalformed, "meta.json: " + std::string(e.what()));
    }
  }

  {
    const fs::path path = dir / "edges.csv";
    const std::string text = read_file(path);
    std::vector<Edge> raw;
    for_each_csv_line(path, text, [&](std::size_t line, const std::vector<std::string_view>& f) {
      if (f.size() != 2) {
        throw BundleError(Kind::kMalformed, where(path, line) + ": expected 2 columns, got " +
                                                std::to_string(f.size()));
      }
      const auto u = parse_number<long long>(f[0], path, line);
      const auto v = parse_number<long long>(f[1], path, line);
      if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= b.num_nodes ||
          static_cast<std::size_t>(v) >= b.num_nodes) {
        throw BundleError(Kind::kIndexOutOfRange, where(path, line) + ": edge (" + std::to_string(u) +
                                                      ", " + std::to_string(v) + ") out of range");
      }
      raw.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
    });
    b.edges = canonicalize_edges(std::move(raw), b.num_nodes);
  }

  {
    const fs::path path = dir / "features.csv";
    const std::string text = read_file(path);
    std::size_t row = 0;
    const std::size_t dim = b.features.cols();
    for_each_csv_line(path, text, [&](std::size_t line, const std::vector<std::string_view>& f) {
      if (row >= b.num_nodes) {
        throw BundleError(Kind::kMalformed, where(path, line) + ": more feature rows than nodes");
      }
      if (f.size() != dim) {
        throw BundleError(Kind::kMalformed, where(path, line) + ": expected " + std::to_string(dim) +
                                                " columns, got " + std::to_string(f.size()));
      }
      auto r = b.features.row(row);
      for (std::size_t j = 0; j < dim; ++j) r[j] = parse_number<double>(f[j], path, line);
      ++row;
    });
    if (row != b.num_nodes) {
      throw BundleError(Kind::kMalformed, "features.csv: " + std::to_string(row) + " rows, expected " +
                                              std::to_string(b.num_nodes));
    }
    if (!b.features.all_finite()) throw BundleError(Kind::kMalformed, "features.csv: non-finite value");
  }

  const fs::path labels_path = dir / "labels.csv";
  if (b.task == Task::kNodeClassification || fs::exists(labels_path)) {
    b.labels = read_labels(labels_path, b.num_classes);
    if (b.labels.size() != b.num_nodes) {
      throw BundleError(Kind::kMalformed, "labels.csv: " + std::to_string(b.labels.size()) +
                                              " rows, expected " + std::to_string(b.num_nodes));
    }
  }

  if (b.task == Task::kGraphClassification) {
    b.graph_labels = read_labels(dir / "graph_labels.csv", b.num_classes);
    const auto gi = read_int_column(dir / "graph_index.csv");
    if (gi.size() != b.num_nodes) {
      throw BundleError(Kind::kMalformed, "graph_index.csv: expected one row per node");
    }
    b.graph_index.reserve(gi.size());
    for (std::size_t i = 0; i < gi.size(); ++i) {
      if (gi[i] < 0 || static_cast<std::size_t>(gi[i]) >= b.num_graphs()) {
        throw BundleError(Kind::kIndexOutOfRange,
                          "graph_index.csv:" + std::to_string(i + 1) + ": graph id out of range");
      }
      b.graph_index.push_back(static_cast<std::size_t>(gi[i]));
    }
  }

  if (fs::exists(dir / "train.csv")) {
    b.train_items = read_indices(dir / "train.csv", b.num_items(), "train item");
  }

  validate(b);
  return b;
}

void save_bundle(const GraphBundle& b, const fs::path& dir) {
  validate(b);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw BundleError(Kind::kIo, "cannot create " + dir.string() + ": " + ec.message());

  nlohmann::ordered_json meta;
  meta["name"] = b.name;
  meta["task"] = to_string(b.task);
  meta["num_nodes"] = b.num_nodes;
  meta["num_classes"] = b.num_classes;
  meta["feature_dim"] = b.feature_dim();
  if (b.task == Task::kGraphClassification) meta["num_graphs"] = b.num_graphs();
  write_file(dir / "meta.json", meta.dump(2) + "\n");

  std::string edges;
  for (auto [u, v] : b.edges) {
    edges += std::to_string(u);
    edges += ',';
    edges += std::to_string(v);
    edges += '\n';
  }
  write_file(dir / "edges.csv", edges);

  std::string feats;
  for (std::size_t i = 0; i < b.num_nodes; ++i) {
    auto r = b.features.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j) feats += ',';
      append_double(feats, r[j]);
    }
    feats += '\n';
  }
  write_file(dir / "features.csv", feats);

  if (!b.labels.empty()) write_file(dir / "labels.csv", one_per_line(b.labels));
  if (b.task == Task::kGraphClassification) {
    write_file(dir / "graph_index.csv", one_per_line(b.graph_index));
    write_file(dir / "graph_labels.csv", one_per_line(b.graph_labels));
  }
  if (!b.train_items.empty()) write_file(dir / "train.csv", one_per_line(b.train_items));
}

// ---------------------------------------------------------------------------

NeighborIndex::NeighborIndex(std::size_t num_nodes, const std::vector<Edge>& edges) {
  std::vector<std::size_t> degree(num_nodes, 0);
  const auto canon = canonicalize_edges(edges, num_nodes);
  for (auto [u, v] : canon) {
    ++degree[u];
    ++degree[v];
  }
  offsets_.assign(num_nodes + 1, 0);
  for (std::size_t v = 0; v < num_nodes; ++v) offsets_[v + 1] = offsets_[v] + degree[v];
  neighbors_.resize(offsets_[num_nodes]);
  std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
  for (auto [u, v] : canon) {
    neighbors_[fill[u]++] = v;
    neighbors_[fill[v]++] = u;
  }
  for (std::size_t v = 0; v < num_nodes; ++v) {
    std::sort(neighbors_.begin() + static_cast<std::ptrdiff_t>(offsets_[v]),
              neighbors_.begin() + static_cast<std::ptrdiff_t>(offsets_[v + 1]));
  }
}

GraphBundle generate_sbm(Rng& rng, const SbmSpec& spec) {
  if (!(spec.p_out >= 0.0 && spec.p_out <= spec.p_in && spec.p_in <= 1.0)) {
    throw ValueError("generate_sbm: need 0 <= p_out <= p_in <= 1");
  }
  if (spec.communities == 0 || spec.nodes_per_community == 0) {
    throw ValueError("generate_sbm: empty graph");
  }
  if (!(spec.label_noise >= 0.0 && spec.label_noise <= 1.0) || spec.feature_noise < 0.0) {
    throw ValueError("generate_sbm: invalid noise level");
  }
  GraphBundle b;
  b.name = "sbm";
  b.task = Task::kNodeClassification;
  b.num_classes = spec.communities;
  b.num_nodes = spec.communities * spec.nodes_per_community;
  std::vector<int> community(b.num_nodes);
  for (std::size_t v = 0; v < b.num_nodes; ++v) {
    community[v] = static_cast<int>(v / spec.nodes_per_community);
  }

  for (std::size_t u = 0; u < b.num_nodes; ++u) {
    for (std::size_t v = u + 1; v < b.num_nodes; ++v) {
      const double p = community[u] == community[v] ? spec.p_in : spec.p_out;
      if (rng.uniform() < p) b.edges.emplace_back(u, v);
    }
  }

  const std::size_t dim = spec.communities + spec.extra_features;
  b.features = Matrix(b.num_nodes, dim);
  for (std::size_t v = 0; v < b.num_nodes; ++v) {
    auto r = b.features.row(v);
    for (std::size_t j = 0; j < dim; ++j) {
      const double base = j == static_cast<std::size_t>(community[v]) ? 1.0 : 0.0;
      r[j] = spec.feature_noise > 0.0 ? base + spec.feature_noise * rng.normal() : base;
    }
  }

  b.labels = community;
  if (spec.label_noise > 0.0) {
    for (std::size_t v = 0; v < b.num_nodes; ++v) {
      if (rng.uniform() < spec.label_noise) b.labels[v] = static_cast<int>(rng.below(spec.communities));
    }
  }
  return b;
}

SplitSpec resample_split(Rng& rng, const GraphBundle& bundle, std::size_t n_train, std::size_t n_cal,
                         std::size_t n_test, const std::optional<std::vector<std::size_t>>& fixed_train) {
  const std::size_t population = bundle.num_items();
  SplitSpec split;
  split.seed = rng.seed();

  std::vector<std::size_t> pool;
  if (fixed_train) {
    split.train = *fixed_train;
    std::vector<char> taken(population, 0);
    for (std::size_t i : split.train) {
      if (i >= population) throw ValueError("resample_split: fixed train item out of range");
      if (taken[i]) throw ValueError("resample_split: duplicate fixed train item");
      taken[i] = 1;
    }
    for (std::size_t i = 0; i < population; ++i) {
      if (!taken[i]) pool.push_back(i);
    }
    n_train = 0;
  } else {
    pool.resize(population);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
  }
  if (n_train + n_cal + n_test > pool.size()) {
    throw ValueError("resample_split: requested " + std::to_string(n_train + n_cal + n_test) +
                     " items from a population of " + std::to_string(pool.size()));
  }
  shuffle(pool, rng);
  auto it = pool.begin();
  if (!fixed_train) {
    split.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
    it += static_cast<std::ptrdiff_t>(n_train);
  }
  split.calibration.assign(it, it + static_cast<std::ptrdiff_t>(n_cal));
  it += static_cast<std::ptrdiff_t>(n_cal);
  split.test.assign(it, it + static_cast<std::ptrdiff_t>(n_test));
  return split;
}

}  // namespace bayescp
