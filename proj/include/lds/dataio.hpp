#pragma once

// Dataset bundles, splitting, edge subsampling and report export.
//
// A bundle is a directory with manifest.json:
//   {"name", "n_nodes", "n_features", "n_classes",
//    "features": {"format": "csv"|"f64", "file", "header"?},
//    "labels": "labels.csv", "edges"?: "edges.txt",
//    "masks"?: {"train", "validation", "test"},
//    "split_protocol"?: {"train", "validation", "test"}}
// Either fixed mask files or a per-seed split protocol must be present.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lds/binio.hpp"
#include "lds/dense_matrix.hpp"
#include "lds/error.hpp"
#include "lds/gcn.hpp"
#include "lds/graphgen.hpp"
#include "lds/rng.hpp"
#include "lds/runner.hpp"
#include "lds/sparse_matrix.hpp"

namespace lds {

using Edge = std::pair<std::size_t, std::size_t>;

struct SplitProtocol {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

struct Dataset {
  std::string name;
  std::shared_ptr<const DenseMatrix> x;
  std::vector<int> labels;  // kUnknownLabel where missing
  std::size_t n_classes = 0;
  std::optional<std::vector<Edge>> edges;  // undirected, i < j, sorted, unique
  std::optional<std::vector<std::size_t>> train, validation, test;
  std::optional<SplitProtocol> protocol;

  std::size_t n_nodes() const { return labels.size(); }
  bool has_masks() const { return train && validation && test; }
};

// ---- low-level readers ---------------------------------------------------------

namespace detail {

inline std::string where(const std::string& file, std::size_t line) {
  return file + ":" + std::to_string(line);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

inline bool parse_long(const std::string& s, long long& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return is;
}

}  // namespace detail

/// Dense features from CSV, one row per node. Blank and '#' lines are skipped.
inline DenseMatrix read_features_csv(const std::string& path) {
  std::ifstream is = detail::open_in(path);
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, lineno = 0;
  std::string line;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cells = detail::split_csv(t);
    if (rows == 0) cols = cells.size();
    if (cells.size() != cols)
      throw FormatError(detail::where(path, lineno) + ": expected " + std::to_string(cols) +
                        " columns, found " + std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c], v) || !std::isfinite(v))
        throw FormatError(detail::where(path, lineno) + ": column " + std::to_string(c + 1) +
                          ": not a finite number: '" + cells[c] + "'");
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw FormatError(path + ": no feature rows");
  return DenseMatrix(rows, cols, std::move(values));
}

/// Raw little-endian float64 features with a JSON header
/// {"shape": [rows, cols], "dtype": "float64"}.
inline DenseMatrix read_features_f64(const std::string& path, const std::string& header_path) {
  std::ifstream hs = detail::open_in(header_path);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(header_path + ": " + e.what());
  }
  if (!h.contains("shape") || !h["shape"].is_array() || h["shape"].size() != 2)
    throw FormatError(header_path + ": 'shape' must be [rows, cols]");
  if (h.value("dtype", std::string("float64")) != "float64")
    throw FormatError(header_path + ": only dtype float64 is supported");
  if (h.value("endian", std::string("little")) != "little")
    throw FormatError(header_path + ": only little-endian data is supported");
  const auto rows = h["shape"][0].get<std::size_t>();
  const auto cols = h["shape"][1].get<std::size_t>();
  DenseMatrix m = read_matrix_blob(path, rows, cols);
  if (!m.all_finite()) throw FormatError(path + ": non-finite feature value");
  return m;
}

/// `node_id,class_id` rows; an optional header line is skipped. Class ids
/// outside [0, n_classes) are errors; an empty class id or -1 marks an
/// unknown label. Nodes not listed are unknown.
inline std::vector<int> read_labels_csv(const std::string& path, std::size_t n_nodes,
                                        std::size_t n_classes) {
  std::ifstream is = detail::open_in(path);
  std::vector<int> labels(n_nodes, kUnknownLabel);
  std::vector<bool> seen(n_nodes, false);
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cells = detail::split_csv(t);
    long long node = 0, cls = kUnknownLabel;
    const bool numeric = cells.size() == 2 && detail::parse_long(cells[0], node);
    if (first && !numeric) {
      first = false;
      continue;  // header
    }
    first = false;
    if (!numeric) throw FormatError(detail::where(path, lineno) + ": expected 'node_id,class_id'");
    if (!cells[1].empty() && !detail::parse_long(cells[1], cls))
      throw FormatError(detail::where(path, lineno) + ": class id is not an integer");
    if (node < 0 || static_cast<std::size_t>(node) >= n_nodes)
      throw FormatError(detail::where(path, lineno) + ": node id " + std::to_string(node) +
                        " out of range [0, " + std::to_string(n_nodes) + ")");
    if (cls != kUnknownLabel && (cls < 0 || static_cast<std::size_t>(cls) >= n_classes))
      throw FormatError(detail::where(path, lineno) + ": unknown class id " + std::to_string(cls));
    if (seen[node]) throw FormatError(detail::where(path, lineno) + ": duplicate node id");
    seen[node] = true;
    labels[node] = static_cast<int>(cls);
  }
  return labels;
}

/// Whitespace-separated `i j` pairs. Returns the undirected edge set with
/// i < j, sorted and deduplicated; self-loops are dropped.
inline std::vector<Edge> read_edges(const std::string& path, std::size_t n_nodes) {
  std::ifstream is = detail::open_in(path);
  std::set<Edge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    long long i = 0, j = 0;
    std::string rest;
    if (!(ls >> i >> j) || (ls >> rest))
      throw FormatError(detail::where(path, lineno) + ": expected two node ids");
    if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= n_nodes ||
        static_cast<std::size_t>(j) >= n_nodes)
      throw FormatError(detail::where(path, lineno) + ": node id out of range [0, " +
                        std::to_string(n_nodes) + ")");
    if (i == j) continue;
    edges.insert({static_cast<std::size_t>(std::min(i, j)), static_cast<std::size_t>(std::max(i, j))});
  }
  return {edges.begin(), edges.end()};
}

/// Node ids separated by whitespace.
inline std::vector<std::size_t> read_mask(const std::string& path, std::size_t n_nodes) {
  std::ifstream is = detail::open_in(path);
  std::vector<std::size_t> out;
  std::set<std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    std::string tok;
    while (ls >> tok) {
      long long v = 0;
      if (!detail::parse_long(tok, v))
        throw FormatError(detail::where(path, lineno) + ": not a node id: '" + tok + "'");
      if (v < 0 || static_cast<std::size_t>(v) >= n_nodes)
        throw FormatError(detail::where(path, lineno) + ": node id " + std::to_string(v) +
                          " out of range");
      if (!seen.insert(static_cast<std::size_t>(v)).second)
        throw FormatError(detail::where(path, lineno) + ": duplicate node id " + std::to_string(v));
      out.push_back(static_cast<std::size_t>(v));
    }
  }
  return out;
}

inline SparseMatrix edges_to_adjacency(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<Triplet> t;
  t.reserve(2 * edges.size());
  for (const auto& [i, j] : edges) {
    if (i >= n || j >= n || i == j) throw DomainError("edge endpoints out of range");
    t.push_back({i, j, 1.0});
    t.push_back({j, i, 1.0});
  }
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

// ---- bundles -------------------------------------------------------------------

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string mpath = (fs::path(dir) / "manifest.json").string();
  std::ifstream ms = detail::open_in(mpath);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath + ": " + e.what());
  }
  auto file = [&](const std::string& rel) { return (fs::path(dir) / rel).string(); };
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!m.contains(key)) throw FormatError(mpath + ": missing '" + key + "'");
    return m[key];
  };
  Dataset d;
  try {
    d.name = m.value("name", fs::path(dir).filename().string());
    const auto n = need("n_nodes").get<std::size_t>();
    const auto f = need("n_features").get<std::size_t>();
    d.n_classes = need("n_classes").get<std::size_t>();
    const auto& feat = need("features");
    const std::string format = feat.value("format", std::string("csv"));
    DenseMatrix x;
    if (format == "csv") {
      x = read_features_csv(file(feat.at("file").get<std::string>()));
    } else if (format == "f64") {
      x = read_features_f64(file(feat.at("file").get<std::string>()),
                            file(feat.at("header").get<std::string>()));
    } else {
      throw FormatError(mpath + ": unknown feature format '" + format + "'");
    }
    if (x.rows() != n || x.cols() != f)
      throw FormatError(mpath + ": features are " + x.shape_string() + ", manifest says " +
                        std::to_string(n) + "x" + std::to_string(f));
    d.x = std::make_shared<const DenseMatrix>(std::move(x));
    d.labels = read_labels_csv(file(need("labels").get<std::string>()), n, d.n_classes);
    if (m.contains("edges") && !m["edges"].is_null())
      d.edges = read_edges(file(m["edges"].get<std::string>()), n);
    if (m.contains("masks") && !m["masks"].is_null()) {
      const auto& k = m["masks"];
      d.train = read_mask(file(k.at("train").get<std::string>()), n);
      d.validation = read_mask(file(k.at("validation").get<std::string>()), n);
      d.test = read_mask(file(k.at("test").get<std::string>()), n);
    }
    if (m.contains("split_protocol") && !m["split_protocol"].is_null()) {
      const auto& p = m["split_protocol"];
      d.protocol = SplitProtocol{p.at("train").get<std::size_t>(), p.at("validation").get<std::size_t>(),
                                 p.at("test").get<std::size_t>()};
      if (d.protocol->train + d.protocol->validation + d.protocol->test > n)
        throw FormatError(mpath + ": split_protocol sizes exceed n_nodes");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath + ": " + e.what());
  }
  if (!d.has_masks() && !d.protocol)
    throw FormatError(mpath + ": needs either 'masks' or 'split_protocol'");
  if (d.has_masks()) {
    std::vector<int> owner(d.n_nodes(), 0);
    for (const auto* mask : {&*d.train, &*d.validation, &*d.test})
      for (std::size_t v : *mask)
        if (++owner[v] > 1) throw FormatError(mpath + ": node " + std::to_string(v) + " is in two masks");
    for (const auto* mask : {&*d.train, &*d.validation})
      for (std::size_t v : *mask)
        if (d.labels[v] == kUnknownLabel)
          throw FormatError(mpath + ": node " + std::to_string(v) + " has no label but is in a labeled mask");
  }
  return d;
}

// ---- splitting -----------------------------------------------------------------

/// Seeded 50/50 partition of the validation nodes into (A) and (B), with
/// |A| = ceil(V / 2). Both halves keep ascending node order.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(
    const std::vector<std::size_t>& validation, std::uint64_t seed) {
  if (validation.size() < 2) throw DomainError("split_validation: need at least 2 validation nodes");
  std::vector<std::size_t> v = validation;
  Rng rng(mix64(seed ^ 0xa1b2));
  shuffle(std::span<std::size_t>(v), rng);
  const std::size_t na = (v.size() + 1) / 2;
  std::vector<std::size_t> a(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(na));
  std::vector<std::size_t> b(v.begin() + static_cast<std::ptrdiff_t>(na), v.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {a, b};
}

/// Class-proportional allocation of `total` slots over class sizes, by
/// largest remainder, every class with members getting at least one slot
/// while slots remain.
inline std::vector<std::size_t> proportional_quota(const std::vector<std::size_t>& sizes,
                                                   std::size_t total) {
  const std::size_t n = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  std::vector<std::size_t> q(sizes.size(), 0);
  if (n == 0 || total == 0) return q;
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    const double exact = static_cast<double>(total) * static_cast<double>(sizes[c]) / static_cast<double>(n);
    q[c] = std::min(sizes[c], static_cast<std::size_t>(std::floor(exact)));
    used += q[c];
    rem.push_back({exact - std::floor(exact), c});
  }
  for (std::size_t c = 0; c < sizes.size() && used < total; ++c)
    if (q[c] == 0 && sizes[c] > 0) {
      q[c] = 1;
      ++used;
    }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  while (used < total) {
    bool progressed = false;
    for (const auto& r : rem) {
      if (used == total) break;
      if (q[r.second] < sizes[r.second]) {
        ++q[r.second];
        ++used;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  while (used > total) {  // more classes than slots
    for (std::size_t c = sizes.size(); c-- > 0 && used > total;)
      if (q[c] > 0) {
        --q[c];
        --used;
      }
  }
  return q;
}

struct NodeSplit {
  std::vector<std::size_t> train, validation, test;
};

/// Seeded stratified train/validation/test split over labeled nodes.
inline NodeSplit stratified_split(const std::vector<int>& labels, std::size_t n_classes,
                                  const SplitProtocol& sizes, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t v = 0; v < labels.size(); ++v)
    if (labels[v] != kUnknownLabel) by_class.at(static_cast<std::size_t>(labels[v])).push_back(v);
  std::size_t labeled = 0;
  Rng rng(mix64(seed ^ 0x5711));
  for (auto& c : by_class) {
    shuffle(std::span<std::size_t>(c), rng);
    labeled += c.size();
  }
  if (sizes.train + sizes.validation + sizes.test > labeled)
    throw DomainError("stratified_split: split sizes exceed the labeled nodes");
  NodeSplit out;
  std::vector<std::size_t> offset(n_classes, 0);
  auto take = [&](std::size_t total, std::vector<std::size_t>& dst) {
    std::vector<std::size_t> avail(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) avail[c] = by_class[c].size() - offset[c];
    const auto q = proportional_quota(avail, total);
    for (std::size_t c = 0; c < n_classes; ++c)
      for (std::size_t k = 0; k < q[c]; ++k) dst.push_back(by_class[c][offset[c]++]);
    std::sort(dst.begin(), dst.end());
  };
  take(sizes.train, out.train);
  take(sizes.validation, out.validation);
  take(sizes.test, out.test);
  return out;
}

/// Train / (A) / (B) / test split for one seed: fixed masks if the bundle
/// has them, otherwise a fresh stratified split from the protocol.
inline LabeledSplit make_split(const Dataset& d, std::uint64_t seed) {
  NodeSplit s;
  if (d.has_masks()) {
    s = {*d.train, *d.validation, *d.test};
  } else {
    s = stratified_split(d.labels, d.n_classes, *d.protocol, seed);
  }
  auto [a, b] = split_validation(s.validation, seed);
  return LabeledSplit(d.labels, d.n_classes, std::move(s.train), std::move(a), std::move(b),
                      std::move(s.test));
}

/// Uniform sample without replacement of floor(fraction * M) undirected edges;
/// the result keeps the input order.
inline std::vector<Edge> subsample_edges(const std::vector<Edge>& edges, double retain_fraction,
                                         std::uint64_t seed) {
  if (edges.empty()) throw DomainError("subsample_edges: empty edge list");
  if (!(retain_fraction > 0.0 && retain_fraction <= 1.0))
    throw DomainError("subsample_edges: retain_fraction must lie in (0, 1]");
  if (retain_fraction == 1.0) return edges;
  const auto keep = static_cast<std::size_t>(std::floor(retain_fraction * static_cast<double>(edges.size())));
  std::vector<std::size_t> idx(edges.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(mix64(seed ^ 0xed9e));
  shuffle(std::span<std::size_t>(idx), rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<Edge> out;
  out.reserve(keep);
  for (std::size_t i : idx) out.push_back(edges[i]);
  return out;
}

// ---- reports -------------------------------------------------------------------

/// One (grid point, seed) run.
struct RunRecord {
  std::string key;  // grid point identifier
  std::uint64_t seed = 0;
  double val_a_acc = kNaN;
  double val_b_acc = kNaN;
  double val_acc = kNaN;
  double test_acc = kNaN;
  double expected_edges = kNaN;
  std::size_t epochs = 0;
  std::size_t outer_updates = 0;
  std::size_t inner_steps = 0;
  double seconds = 0.0;
  std::string stop_reason;
  std::vector<LdsTracePoint> trace;
  std::vector<GroupMeans> groups;
  std::vector<EdgeHistogram> histograms;
  std::optional<EdgeDistribution> theta;  // exported as a triple list
  std::string theta_file;

  friend bool operator==(const RunRecord& a, const RunRecord& b);
};

struct RunReport {
  nlohmann::json config;
  std::string method;
  std::string dataset;
  nlohmann::json selected;  // chosen grid point
  std::vector<RunRecord> runs;  // runs of the selected grid point
  double test_mean = kNaN;
  double test_std = kNaN;
  double val_mean = kNaN;
  double val_std = kNaN;
  double expected_edges_mean = kNaN;
  double seconds = 0.0;
};

/// Mean and sample standard deviation (n - 1); the deviation is NaN below 2 values.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {kNaN, kNaN};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, kNaN};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

inline void summarize(RunReport& r) {
  std::vector<double> test, val, edges;
  for (const auto& run : r.runs) {
    test.push_back(run.test_acc);
    val.push_back(run.val_acc);
    edges.push_back(run.expected_edges);
  }
  std::tie(r.test_mean, r.test_std) = mean_std(test);
  std::tie(r.val_mean, r.val_std) = mean_std(val);
  r.expected_edges_mean = mean_std(edges).first;
}

namespace detail {

inline bool same_num(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

inline bool same_trace(const LdsTracePoint& a, const LdsTracePoint& b) {
  return a.epoch == b.epoch && a.step == b.step && a.global_step == b.global_step &&
         a.outer_updates == b.outer_updates && same_num(a.inner_loss, b.inner_loss) &&
         same_num(a.outer_loss, b.outer_loss) && same_num(a.acc_a, b.acc_a) &&
         same_num(a.acc_b, b.acc_b) && same_num(a.acc_test, b.acc_test) &&
         same_num(a.expected_edges, b.expected_edges) && same_num(a.eta, b.eta);
}

inline nlohmann::json to_json(const EdgeHistogram& h) {
  return {{"node", h.node}, {"group", h.group}, {"counts", h.counts}, {"group_size", h.group_size}};
}

inline EdgeHistogram histogram_from_json(const nlohmann::json& j) {
  EdgeHistogram h;
  h.node = j.at("node").get<std::size_t>();
  h.group = j.at("group").get<std::string>();
  h.counts = j.at("counts").get<std::array<double, 6>>();
  h.group_size = j.at("group_size").get<std::size_t>();
  return h;
}

inline std::string fmt(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline bool operator==(const RunRecord& a, const RunRecord& b) {
  using detail::same_num;
  if (a.key != b.key || a.seed != b.seed || !same_num(a.val_a_acc, b.val_a_acc) ||
      !same_num(a.val_b_acc, b.val_b_acc) || !same_num(a.val_acc, b.val_acc) ||
      !same_num(a.test_acc, b.test_acc) || !same_num(a.expected_edges, b.expected_edges) ||
      a.epochs != b.epochs || a.outer_updates != b.outer_updates || a.inner_steps != b.inner_steps ||
      !same_num(a.seconds, b.seconds) || a.stop_reason != b.stop_reason || a.trace.size() != b.trace.size() ||
      a.groups.size() != b.groups.size() || a.histograms.size() != b.histograms.size() ||
      a.theta.has_value() != b.theta.has_value())
    return false;
  for (std::size_t i = 0; i < a.trace.size(); ++i)
    if (!detail::same_trace(a.trace[i], b.trace[i])) return false;
  for (std::size_t i = 0; i < a.groups.size(); ++i) {
    const auto &ga = a.groups[i], &gb = b.groups[i];
    if (ga.node != gb.node || ga.global_step != gb.global_step || ga.means.size() != gb.means.size())
      return false;
    for (std::size_t r = 0; r < ga.means.size(); ++r)
      for (int c = 0; c < 4; ++c)
        if (!same_num(ga.means[r][c], gb.means[r][c])) return false;
  }
  for (std::size_t i = 0; i < a.histograms.size(); ++i) {
    const auto &ha = a.histograms[i], &hb = b.histograms[i];
    if (ha.node != hb.node || ha.group != hb.group || ha.counts != hb.counts || ha.group_size != hb.group_size)
      return false;
  }
  if (a.theta && (a.theta->theta() != b.theta->theta() || a.theta->symmetric() != b.theta->symmetric() ||
                  a.theta->diag_zero() != b.theta->diag_zero()))
    return false;
  return true;
}

/// Writes report.json (every field), traces.csv, groups.csv, histograms.csv
/// and one theta triple list per run that carries a learned distribution.
/// Sets theta_file on the runs it exports.
inline void export_report(RunReport& r, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create '" + dir + "': " + ec.message());
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    auto& run = r.runs[i];
    if (!run.theta) continue;
    run.theta_file = "theta_" + std::to_string(i) + ".txt";
    write_theta_triples((fs::path(dir) / run.theta_file).string(), *run.theta, 0.0);
  }
  nlohmann::json j;
  j["config"] = r.config;
  j["method"] = r.method;
  j["dataset"] = r.dataset;
  j["selected"] = r.selected;
  j["test_mean"] = detail::num(r.test_mean);
  j["test_std"] = detail::num(r.test_std);
  j["val_mean"] = detail::num(r.val_mean);
  j["val_std"] = detail::num(r.val_std);
  j["expected_edges_mean"] = detail::num(r.expected_edges_mean);
  j["seconds"] = r.seconds;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json x;
    x["key"] = run.key;
    x["seed"] = run.seed;
    x["val_a_acc"] = detail::num(run.val_a_acc);
    x["val_b_acc"] = detail::num(run.val_b_acc);
    x["val_acc"] = detail::num(run.val_acc);
    x["test_acc"] = detail::num(run.test_acc);
    x["expected_edges"] = detail::num(run.expected_edges);
    x["epochs"] = run.epochs;
    x["outer_updates"] = run.outer_updates;
    x["inner_steps"] = run.inner_steps;
    x["seconds"] = run.seconds;
    x["stop_reason"] = run.stop_reason;
    x["theta_file"] = run.theta_file;
    nlohmann::json tr = nlohmann::json::array();
    for (const auto& p : run.trace) tr.push_back(to_json(p));
    x["trace"] = tr;
    nlohmann::json gr = nlohmann::json::array();
    for (const auto& g : run.groups) gr.push_back(to_json(g));
    x["groups"] = gr;
    nlohmann::json hi = nlohmann::json::array();
    for (const auto& h : run.histograms) hi.push_back(detail::to_json(h));
    x["histograms"] = hi;
    runs.push_back(x);
  }
  j["runs"] = runs;
  {
    std::ofstream os(fs::path(dir) / "report.json");
    if (!os) throw FormatError("cannot write report.json in '" + dir + "'");
    os << j.dump(1) << '\n';
  }

  std::ofstream tr(fs::path(dir) / "traces.csv");
  tr << "key,seed,epoch,step,global_step,outer_updates,inner_loss,outer_loss,acc_a,acc_b,acc_test,"
        "expected_edges,eta\n";
  for (const auto& run : r.runs)
    for (const auto& p : run.trace)
      tr << run.key << ',' << run.seed << ',' << p.epoch << ',' << p.step << ',' << p.global_step << ','
         << p.outer_updates << ',' << detail::fmt(p.inner_loss) << ',' << detail::fmt(p.outer_loss) << ','
         << detail::fmt(p.acc_a) << ',' << detail::fmt(p.acc_b) << ',' << detail::fmt(p.acc_test) << ','
         << detail::fmt(p.expected_edges) << ',' << detail::fmt(p.eta) << '\n';
  std::ofstream gr(fs::path(dir) / "groups.csv");
  gr << "key,seed,node,global_step";
  for (const char* g : kGroupNames) gr << ',' << g;
  gr << '\n';
  for (const auto& run : r.runs)
    for (const auto& g : run.groups)
      for (std::size_t k = 0; k < g.means.size(); ++k) {
        gr << run.key << ',' << run.seed << ',' << g.node << ',' << g.global_step[k];
        for (double m : g.means[k]) gr << ',' << detail::fmt(m);
        gr << '\n';
      }
  std::ofstream hi(fs::path(dir) / "histograms.csv");
  hi << "key,seed,node,group,group_size,bin,lower,upper,count,fraction\n";
  for (const auto& run : r.runs)
    for (const auto& h : run.histograms)
      for (std::size_t b = 0; b < h.counts.size(); ++b) {
        const double lo = b == 0 ? 0.0 : kHistogramEdges[b - 1];
        const double hi_edge = b < kHistogramEdges.size() ? kHistogramEdges[b] : 1.0;
        hi << run.key << ',' << run.seed << ',' << h.node << ',' << h.group << ',' << h.group_size << ','
           << b << ',' << detail::fmt(lo) << ',' << detail::fmt(hi_edge) << ',' << detail::fmt(h.counts[b])
           << ',' << detail::fmt(h.group_size ? h.counts[b] / static_cast<double>(h.group_size) : kNaN)
           << '\n';
      }
  if (!tr || !gr || !hi) throw FormatError("write failed in '" + dir + "'");
}

inline RunReport load_report(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(dir) / "report.json").string();
  std::ifstream is = detail::open_in(path);
  RunReport r;
  try {
    const nlohmann::json j = nlohmann::json::parse(is);
    r.config = j.at("config");
    r.method = j.at("method").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.selected = j.at("selected");
    r.test_mean = detail::num_of(j.at("test_mean"));
    r.test_std = detail::num_of(j.at("test_std"));
    r.val_mean = detail::num_of(j.at("val_mean"));
    r.val_std = detail::num_of(j.at("val_std"));
    r.expected_edges_mean = detail::num_of(j.at("expected_edges_mean"));
    r.seconds = j.at("seconds").get<double>();
    for (const auto& x : j.at("runs")) {
      RunRecord run;
      run.key = x.at("key").get<std::string>();
      run.seed = x.at("seed").get<std::uint64_t>();
      run.val_a_acc = detail::num_of(x.at("val_a_acc"));
      run.val_b_acc = detail::num_of(x.at("val_b_acc"));
      run.val_acc = detail::num_of(x.at("val_acc"));
      run.test_acc = detail::num_of(x.at("test_acc"));
      run.expected_edges = detail::num_of(x.at("expected_edges"));
      run.epochs = x.at("epochs").get<std::size_t>();
      run.outer_updates = x.at("outer_updates").get<std::size_t>();
      run.inner_steps = x.at("inner_steps").get<std::size_t>();
      run.seconds = x.at("seconds").get<double>();
      run.stop_reason = x.at("stop_reason").get<std::string>();
      run.theta_file = x.at("theta_file").get<std::string>();
      for (const auto& p : x.at("trace")) run.trace.push_back(trace_point_from_json(p));
      for (const auto& g : x.at("groups")) run.groups.push_back(group_means_from_json(g));
      for (const auto& h : x.at("histograms")) run.histograms.push_back(detail::histogram_from_json(h));
      if (!run.theta_file.empty()) run.theta = read_theta_triples((fs::path(dir) / run.theta_file).string());
      r.runs.push_back(std::move(run));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return r;
}

}  // namespace lds
