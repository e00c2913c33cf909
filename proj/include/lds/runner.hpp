#pragma once

// Training drivers: the full graph-learning loop and the fixed-graph GCN
// baseline, with traces, per-group edge statistics and checkpoints.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "lds/bilevel.hpp"
#include "lds/binio.hpp"
#include "lds/dense_matrix.hpp"
#include "lds/dynamics.hpp"
#include "lds/error.hpp"
#include "lds/gcn.hpp"
#include "lds/graphgen.hpp"
#include "lds/rng.hpp"
#include "lds/sparse_matrix.hpp"

namespace lds {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// When the early-stopping split is scored: after every outer update, or
/// once at the end of every inner epoch.
enum class EvalCadence { update, epoch };

inline EvalCadence parse_cadence(const std::string& s) {
  if (s == "update") return EvalCadence::update;
  if (s == "epoch") return EvalCadence::epoch;
  throw ConfigError("unknown eval_cadence '" + s + "' (expected update or epoch)");
}
inline const char* cadence_name(EvalCadence c) { return c == EvalCadence::update ? "update" : "epoch"; }

struct LdsConfig {
  std::size_t hidden = 16;
  LossConfig loss;
  OptimizerConfig opt;
  HypergradConfig hyper;
  InnerStopping inner;
  std::size_t outer_patience = 20;
  EvalCadence eval_cadence = EvalCadence::update;
  std::size_t max_outer_loops = 50;  // inner epochs
  bool learn_graph = true;           // false keeps theta at its initial value
  bool symmetric = true;
  bool trace_test = false;           // reads test labels at every evaluation
  std::vector<std::size_t> example_nodes;
  std::string checkpoint_dir;  // empty: no checkpoints
  std::string resume_from;     // checkpoint directory to continue from
  std::function<void(const EdgeDistribution&)> on_outer_update;  // called after every theta step

  void validate() const {
    if (hidden == 0) throw ConfigError("hidden must be positive");
    loss.validate();
    opt.validate();
    hyper.validate();
    if (outer_patience == 0) throw ConfigError("outer_patience must be positive");
    if (max_outer_loops == 0) throw ConfigError("max_outer_loops must be positive");
    if (inner.patience == 0 || inner.max_steps == 0)
      throw ConfigError("inner patience and max_steps must be positive");
  }
};

struct LdsTracePoint {
  std::size_t epoch = 0;
  std::size_t step = 0;         // inner step within the epoch
  std::size_t global_step = 0;  // inner steps since the start of the run
  std::size_t outer_updates = 0;
  double inner_loss = kNaN;
  double outer_loss = kNaN;
  double acc_a = kNaN;
  double acc_b = kNaN;
  double acc_test = kNaN;
  double expected_edges = kNaN;
  double eta = kNaN;
};

inline constexpr std::array<const char*, 4> kGroupNames = {"adjacent", "same_class",
                                                           "different_class", "unknown"};

/// Mean theta from one example node to each node group, one row per evaluation.
struct GroupMeans {
  std::size_t node = 0;
  std::vector<std::size_t> global_step;
  std::vector<std::array<double, 4>> means;
};

/// log10 bin edges; bins are [0,1e-5), [1e-5,1e-4), ..., [1e-1,1].
inline constexpr std::array<double, 5> kHistogramEdges = {1e-5, 1e-4, 1e-3, 1e-2, 1e-1};

struct EdgeHistogram {
  std::size_t node = 0;
  std::string group;
  std::array<double, 6> counts{};
  std::size_t group_size = 0;
};

inline std::size_t histogram_bin(double p) {
  for (std::size_t b = 0; b < kHistogramEdges.size(); ++b)
    if (p < kHistogramEdges[b]) return b;
  return kHistogramEdges.size();
}

struct LdsResult {
  GcnParams params;
  EdgeDistribution dist;
  std::vector<LdsTracePoint> trace;
  std::vector<std::size_t> epoch_starts;  // global step at each weight reinitialization
  std::vector<GroupMeans> groups;
  std::vector<EdgeHistogram> histograms;
  double val_a_acc = kNaN;
  double val_b_acc = kNaN;
  double val_acc = kNaN;
  double test_acc = kNaN;
  double expected_edges = kNaN;
  std::size_t epochs = 0;
  std::size_t outer_updates = 0;
  std::size_t inner_steps = 0;
  std::string stop_reason;
};

/// Resumable state at an epoch boundary.
struct LdsRunState {
  std::size_t epoch = 0;
  EdgeDistribution dist;
  double eta = 0.0;
  Rng::State rng;
  bool have_best = false;
  GcnParams best_params;
  DenseMatrix best_theta;
  double best_acc_b = -1.0;
  double best_loss_b = std::numeric_limits<double>::infinity();
  std::size_t evals_since_best = 0;
  std::size_t global_step = 0;
  std::size_t outer_updates = 0;
  std::vector<LdsTracePoint> trace;
  std::vector<std::size_t> epoch_starts;
  std::vector<GroupMeans> groups;
  bool finished = false;
  std::string stop_reason;
};

// ---- json helpers --------------------------------------------------------------

namespace detail {

inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }
inline double num_of(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace detail

inline nlohmann::json to_json(const LdsTracePoint& p) {
  return {{"epoch", p.epoch},
          {"step", p.step},
          {"global_step", p.global_step},
          {"outer_updates", p.outer_updates},
          {"inner_loss", detail::num(p.inner_loss)},
          {"outer_loss", detail::num(p.outer_loss)},
          {"acc_a", detail::num(p.acc_a)},
          {"acc_b", detail::num(p.acc_b)},
          {"acc_test", detail::num(p.acc_test)},
          {"expected_edges", detail::num(p.expected_edges)},
          {"eta", detail::num(p.eta)}};
}

inline LdsTracePoint trace_point_from_json(const nlohmann::json& j) {
  LdsTracePoint p;
  p.epoch = j.at("epoch").get<std::size_t>();
  p.step = j.at("step").get<std::size_t>();
  p.global_step = j.at("global_step").get<std::size_t>();
  p.outer_updates = j.at("outer_updates").get<std::size_t>();
  p.inner_loss = detail::num_of(j.at("inner_loss"));
  p.outer_loss = detail::num_of(j.at("outer_loss"));
  p.acc_a = detail::num_of(j.at("acc_a"));
  p.acc_b = detail::num_of(j.at("acc_b"));
  p.acc_test = detail::num_of(j.at("acc_test"));
  p.expected_edges = detail::num_of(j.at("expected_edges"));
  p.eta = detail::num_of(j.at("eta"));
  return p;
}

inline nlohmann::json to_json(const GroupMeans& g) {
  nlohmann::json means = nlohmann::json::array();
  for (const auto& m : g.means) means.push_back({detail::num(m[0]), detail::num(m[1]), detail::num(m[2]), detail::num(m[3])});
  return {{"node", g.node}, {"global_step", g.global_step}, {"means", means}};
}

inline GroupMeans group_means_from_json(const nlohmann::json& j) {
  GroupMeans g;
  g.node = j.at("node").get<std::size_t>();
  g.global_step = j.at("global_step").get<std::vector<std::size_t>>();
  for (const auto& row : j.at("means"))
    g.means.push_back({detail::num_of(row[0]), detail::num_of(row[1]), detail::num_of(row[2]),
                       detail::num_of(row[3])});
  return g;
}

// ---- node groups ---------------------------------------------------------------

namespace detail {

/// Group of u relative to example node v: adjacent in the reference graph
/// first, then by label agreement among nodes with a known label.
inline std::size_t node_group(std::size_t v, std::size_t u, int label_v, const LabeledSplit& split,
                              const SparseMatrix& reference) {
  if (reference.at(v, u) != 0.0) return 0;
  if (!split.has_known_label(u)) return 3;
  return split.label(u) == label_v ? 1 : 2;
}

inline std::array<double, 4> group_means(std::size_t v, const EdgeDistribution& dist,
                                         const LabeledSplit& split, const SparseMatrix& reference) {
  std::array<double, 4> sum{}, count{};
  const int lv = split.label(v);
  for (std::size_t u = 0; u < dist.n(); ++u) {
    if (u == v) continue;
    const std::size_t g = node_group(v, u, lv, split, reference);
    sum[g] += dist.theta()(v, u);
    count[g] += 1.0;
  }
  std::array<double, 4> out{};
  for (int g = 0; g < 4; ++g) out[g] = count[g] > 0 ? sum[g] / count[g] : kNaN;
  return out;
}

/// Default example nodes: the first training node and the first node of each
/// validation half. Only nodes with a known, non-test label qualify.
inline std::vector<std::size_t> pick_example_nodes(const LdsConfig& cfg, const LabeledSplit& split) {
  std::vector<std::size_t> out;
  if (!cfg.example_nodes.empty()) {
    for (std::size_t v : cfg.example_nodes) {
      if (v >= split.n_nodes() || !split.has_known_label(v))
        throw ConfigError("example node " + std::to_string(v) +
                          " must be a training or validation node");
      out.push_back(v);
    }
    return out;
  }
  if (!split.train().empty()) out.push_back(split.train().front());
  if (!split.val_a().empty()) out.push_back(split.val_a().front());
  if (!split.val_b().empty()) out.push_back(split.val_b().front());
  return out;
}

}  // namespace detail

/// Per example node: counts of theta(v, u) per log10 bin, for u of the same
/// class and for u of a different or unknown class. Counts sum to the group size.
inline std::vector<EdgeHistogram> edge_histograms(const EdgeDistribution& dist,
                                                  const LabeledSplit& split,
                                                  const std::vector<std::size_t>& nodes) {
  std::vector<EdgeHistogram> out;
  for (std::size_t v : nodes) {
    EdgeHistogram same{v, "same_class", {}, 0};
    EdgeHistogram other{v, "other", {}, 0};
    const int lv = split.label(v);
    for (std::size_t u = 0; u < dist.n(); ++u) {
      if (u == v) continue;
      EdgeHistogram& h = split.has_known_label(u) && split.label(u) == lv ? same : other;
      h.counts[histogram_bin(dist.theta()(v, u))] += 1.0;
      ++h.group_size;
    }
    out.push_back(same);
    out.push_back(other);
  }
  return out;
}

// ---- checkpoints ---------------------------------------------------------------

inline void write_checkpoint(const std::string& dir, const LdsRunState& s) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json j;
  j["epoch"] = s.epoch;
  j["n"] = s.dist.n();
  j["symmetric"] = s.dist.symmetric();
  j["diag_zero"] = s.dist.diag_zero();
  j["eta"] = s.eta;
  j["rng_seed"] = s.rng.seed;
  j["rng_counter"] = s.rng.counter;
  j["have_best"] = s.have_best;
  j["best_acc_b"] = s.best_acc_b;
  j["best_loss_b"] = detail::num(s.best_loss_b);
  j["evals_since_best"] = s.evals_since_best;
  j["global_step"] = s.global_step;
  j["outer_updates"] = s.outer_updates;
  j["finished"] = s.finished;
  j["stop_reason"] = s.stop_reason;
  j["epoch_starts"] = s.epoch_starts;
  nlohmann::json tr = nlohmann::json::array();
  for (const auto& p : s.trace) tr.push_back(to_json(p));
  j["trace"] = tr;
  nlohmann::json gr = nlohmann::json::array();
  for (const auto& g : s.groups) gr.push_back(to_json(g));
  j["groups"] = gr;
  write_matrix_blob(dir + "/theta.f64", s.dist.theta());
  if (s.have_best) {
    j["w1_shape"] = {s.best_params.w1.rows(), s.best_params.w1.cols()};
    j["w2_shape"] = {s.best_params.w2.rows(), s.best_params.w2.cols()};
    write_matrix_blob(dir + "/best_theta.f64", s.best_theta);
    write_matrix_blob(dir + "/best_w1.f64", s.best_params.w1);
    write_matrix_blob(dir + "/best_w2.f64", s.best_params.w2);
  }
  const std::string tmp = dir + "/checkpoint.json.tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw FormatError("cannot write checkpoint in '" + dir + "'");
    os << j.dump(1) << '\n';
  }
  fs::rename(tmp, dir + "/checkpoint.json");
}

inline LdsRunState read_checkpoint(const std::string& dir) {
  std::ifstream is(dir + "/checkpoint.json");
  if (!is) throw FormatError("no checkpoint.json in '" + dir + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir + "/checkpoint.json: " + e.what());
  }
  LdsRunState s;
  s.epoch = j.at("epoch").get<std::size_t>();
  const auto n = j.at("n").get<std::size_t>();
  s.dist = EdgeDistribution(read_matrix_blob(dir + "/theta.f64", n, n), j.at("symmetric").get<bool>(),
                            j.at("diag_zero").get<bool>());
  s.eta = j.at("eta").get<double>();
  s.rng = {j.at("rng_seed").get<std::uint64_t>(), j.at("rng_counter").get<std::uint64_t>()};
  s.have_best = j.at("have_best").get<bool>();
  s.best_acc_b = j.at("best_acc_b").get<double>();
  s.best_loss_b = detail::num_of(j.at("best_loss_b"));
  if (std::isnan(s.best_loss_b)) s.best_loss_b = std::numeric_limits<double>::infinity();
  s.evals_since_best = j.at("evals_since_best").get<std::size_t>();
  s.global_step = j.at("global_step").get<std::size_t>();
  s.outer_updates = j.at("outer_updates").get<std::size_t>();
  s.finished = j.at("finished").get<bool>();
  s.stop_reason = j.at("stop_reason").get<std::string>();
  s.epoch_starts = j.at("epoch_starts").get<std::vector<std::size_t>>();
  for (const auto& p : j.at("trace")) s.trace.push_back(trace_point_from_json(p));
  for (const auto& g : j.at("groups")) s.groups.push_back(group_means_from_json(g));
  if (s.have_best) {
    const auto s1 = j.at("w1_shape").get<std::vector<std::size_t>>();
    const auto s2 = j.at("w2_shape").get<std::vector<std::size_t>>();
    s.best_theta = read_matrix_blob(dir + "/best_theta.f64", n, n);
    s.best_params.w1 = read_matrix_blob(dir + "/best_w1.f64", s1.at(0), s1.at(1));
    s.best_params.w2 = read_matrix_blob(dir + "/best_w2.f64", s2.at(0), s2.at(1));
  }
  return s;
}

// ---- graph-learning loop -------------------------------------------------------

namespace detail {

inline double mean_prediction_loss(const DenseMatrix& probs, const LabeledSplit& split,
                                   MaskKind kind) {
  double s = 0.0;
  for (std::size_t v : split.nodes(kind))
    s -= std::log(std::max(probs(v, static_cast<std::size_t>(split.label(v))), 1e-300));
  return s;
}

inline GcnParams init_for_epoch(const Problem& pr, std::size_t hidden, const Rng& rng,
                                std::size_t epoch) {
  Rng init = rng.fork(0x1000 + epoch);
  return init_gcn(pr.x->cols(), hidden, pr.split.n_classes(), init);
}

}  // namespace detail

/// Alternates inner epochs on graphs drawn from theta with truncated
/// hypergradient steps on theta, starting from the deterministic
/// distribution of `initial_graph`. Returns the snapshot with the best
/// early-stopping accuracy, evaluated once on the test split.
inline LdsResult run_lds(const Problem& pr, const SparseMatrix& initial_graph, const LdsConfig& cfg,
                         std::uint64_t seed, const SparseMatrix* reference_graph = nullptr) {
  cfg.validate();
  if (initial_graph.rows() != pr.n_nodes() || initial_graph.cols() != pr.n_nodes())
    throw ShapeError("run_lds: initial graph does not match the number of nodes");
  if (pr.split.val_b().empty()) throw ShapeError("run_lds: empty early-stopping split (B)");
  const SparseMatrix& reference = reference_graph ? *reference_graph : initial_graph;
  const std::vector<std::size_t> examples = detail::pick_example_nodes(cfg, pr.split);
  const std::size_t tau = cfg.hyper.tau;

  LdsRunState s;
  if (!cfg.resume_from.empty()) {
    s = read_checkpoint(cfg.resume_from);
    if (s.dist.n() != pr.n_nodes()) throw ConfigError("checkpoint does not match the dataset");
    // A run cut short by its epoch budget continues under a larger one.
    if (s.finished && s.stop_reason == "max_outer_loops" && s.epoch < cfg.max_outer_loops) {
      s.finished = false;
      s.stop_reason.clear();
    }
  } else {
    s.dist = EdgeDistribution::deterministic(initial_graph, cfg.symmetric, true);
    s.eta = cfg.hyper.eta;
    s.rng = Rng(mix64(seed ^ 0x5eed)).state();
    for (std::size_t v : examples) s.groups.push_back(GroupMeans{v, {}, {}});
  }
  Rng rng(s.rng);

  auto evaluate = [&](const InnerState& st, std::size_t step, double inner_loss, double outer_loss) {
    const DenseMatrix probs = predict_empirical(st.params, *pr.x, s.dist, cfg.hyper.s_samples, rng);
    LdsTracePoint p;
    p.epoch = s.epoch;
    p.step = step;
    p.global_step = s.global_step;
    p.outer_updates = s.outer_updates;
    p.inner_loss = inner_loss;
    p.outer_loss = outer_loss;
    p.acc_a = accuracy(probs, pr.split, MaskKind::val_a);
    p.acc_b = accuracy(probs, pr.split, MaskKind::val_b);
    if (cfg.trace_test) p.acc_test = accuracy(probs, pr.split, MaskKind::test);
    p.expected_edges = s.dist.expected_edges();
    p.eta = s.eta;
    s.trace.push_back(p);
    for (auto& g : s.groups) {
      g.global_step.push_back(s.global_step);
      g.means.push_back(detail::group_means(g.node, s.dist, pr.split, reference));
    }
    const double loss_b = detail::mean_prediction_loss(probs, pr.split, MaskKind::val_b);
    if (p.acc_b > s.best_acc_b || (p.acc_b == s.best_acc_b && loss_b < s.best_loss_b)) {
      s.best_acc_b = p.acc_b;
      s.best_loss_b = loss_b;
      s.best_params = st.params;
      s.best_theta = s.dist.theta();
      s.have_best = true;
      s.evals_since_best = 0;
    } else {
      ++s.evals_since_best;
    }
  };

  while (!s.finished) {
    s.epoch_starts.push_back(s.global_step);
    InnerState st = InnerState::fresh(detail::init_for_epoch(pr, cfg.hidden, rng, s.epoch));
    InnerStopState stop;
    std::vector<StepRecord> window;
    std::size_t t = 0;
    double last_loss = kNaN;
    double last_outer = kNaN;
    bool stopped = false;
    while (!stopped) {
      auto r = inner_step(pr, st, s.dist, rng);
      st = std::move(r.state);
      last_loss = r.loss;
      ++t;
      ++s.global_step;
      stopped = stop.update(r.loss, cfg.inner);
      if (tau > 0) window.push_back(std::move(r.record));
      // A partial window left when the epoch stops is discarded, as t restarts.
      if (tau == 0 || t % tau == 0) {
        if (cfg.learn_graph) {
          const HypergradResult h = truncated_hypergradient(pr, window, st, s.dist, cfg.hyper, rng);
          last_outer = h.outer_loss;
          s.dist = outer_update(s.dist, h.grad_theta, s.eta);
          if (cfg.on_outer_update) cfg.on_outer_update(s.dist);
          s.eta *= cfg.hyper.eta_decay;
          ++s.outer_updates;
        }
        window.clear();
        if (cfg.eval_cadence == EvalCadence::update) evaluate(st, t, last_loss, last_outer);
      }
    }
    if (cfg.eval_cadence == EvalCadence::epoch) evaluate(st, t, last_loss, last_outer);
    ++s.epoch;
    if (s.evals_since_best >= cfg.outer_patience) {
      s.finished = true;
      s.stop_reason = "early_stopping";
    } else if (s.epoch >= cfg.max_outer_loops) {
      s.finished = true;
      s.stop_reason = "max_outer_loops";
    }
    s.rng = rng.state();
    if (!cfg.checkpoint_dir.empty()) write_checkpoint(cfg.checkpoint_dir, s);
  }
  if (!s.have_best) throw Error("run_lds: no evaluation was performed");

  LdsResult out;
  out.params = s.best_params;
  out.dist = EdgeDistribution(s.best_theta, s.dist.symmetric(), s.dist.diag_zero());
  const DenseMatrix probs = predict_empirical(out.params, *pr.x, out.dist, cfg.hyper.s_samples, rng);
  out.val_a_acc = accuracy(probs, pr.split, MaskKind::val_a);
  out.val_b_acc = accuracy(probs, pr.split, MaskKind::val_b);
  out.val_acc = accuracy(probs, pr.split, MaskKind::validation);
  out.test_acc = accuracy(probs, pr.split, MaskKind::test);
  out.expected_edges = out.dist.expected_edges();
  out.trace = std::move(s.trace);
  out.epoch_starts = std::move(s.epoch_starts);
  out.groups = std::move(s.groups);
  out.histograms = edge_histograms(out.dist, pr.split, examples);
  out.epochs = s.epoch;
  out.outer_updates = s.outer_updates;
  out.inner_steps = s.global_step;
  out.stop_reason = s.stop_reason;
  return out;
}

// ---- fixed-graph GCN -----------------------------------------------------------

struct GcnTrainConfig {
  std::size_t hidden = 16;
  LossConfig loss;
  OptimizerConfig opt;
  std::size_t patience = 20;
  std::size_t max_steps = 500;
  std::size_t random_edges = 0;  // extra uniformly random edges per step (GCN-RND)
  bool trace_test = false;

  void validate() const {
    if (hidden == 0) throw ConfigError("hidden must be positive");
    loss.validate();
    opt.validate();
    if (patience == 0 || max_steps == 0) throw ConfigError("patience and max_steps must be positive");
  }
};

struct GcnTracePoint {
  std::size_t step = 0;
  double train_loss = kNaN;
  double val_loss = kNaN;
  double val_acc = kNaN;
  double test_acc = kNaN;
};

struct GcnResult {
  GcnParams params;
  std::size_t best_step = 0;
  std::size_t steps = 0;
  double val_acc = kNaN;
  double val_a_acc = kNaN;
  double val_b_acc = kNaN;
  double val_loss = kNaN;
  double test_acc = kNaN;
  double edges = 0.0;  // undirected edges of the training graph
  std::vector<GcnTracePoint> trace;
};

/// `base` with `count` extra distinct undirected edges drawn uniformly among
/// the pairs absent from it. Added edges have weight 1.
inline SparseMatrix add_random_edges(const SparseMatrix& base, std::size_t count, Rng& rng) {
  const std::size_t n = base.rows();
  std::vector<Triplet> t;
  t.reserve(base.nnz() + 2 * count);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = base.row_offsets()[i]; k < base.row_offsets()[i + 1]; ++k)
      t.push_back({i, base.col_indices()[k], base.values()[k]});
  const std::size_t pairs = n * (n - 1) / 2;
  std::size_t present = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = base.row_offsets()[i]; k < base.row_offsets()[i + 1]; ++k)
      if (base.col_indices()[k] > i) ++present;
  count = std::min(count, pairs - present);
  std::unordered_set<std::uint64_t> taken;
  taken.reserve(2 * count);
  std::size_t added = 0;
  while (added < count) {
    std::size_t i = static_cast<std::size_t>(rng.uniform_int(n));
    std::size_t j = static_cast<std::size_t>(rng.uniform_int(n));
    if (i == j) continue;
    if (i > j) std::swap(i, j);
    if (base.at(i, j) != 0.0) continue;
    if (!taken.insert(static_cast<std::uint64_t>(i) * n + j).second) continue;
    t.push_back({i, j, 1.0});
    t.push_back({j, i, 1.0});
    ++added;
  }
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

inline double undirected_edges(const SparseMatrix& a) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = a.row_offsets()[i]; k < a.row_offsets()[i + 1]; ++k)
      if (a.col_indices()[k] > i) e += 1.0;
  return e;
}

/// Trains a GCN on a fixed (possibly weighted) graph with early stopping on
/// the full validation set: higher accuracy wins, lower loss breaks ties.
inline GcnResult run_gcn(const Problem& pr, std::shared_ptr<const SparseMatrix> graph,
                         const GcnTrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!graph || graph->rows() != pr.n_nodes() || graph->cols() != pr.n_nodes())
    throw ShapeError("run_gcn: graph does not match the number of nodes");
  Rng rng(mix64(seed ^ 0x6c6e));
  Rng init = rng.fork(0x1000);
  InnerState st = InnerState::fresh(init_gcn(pr.x->cols(), cfg.hidden, pr.split.n_classes(), init));
  const SparseMatrix a_hat = normalize_adjacency(*graph);
  const std::size_t extra = cfg.random_edges;
  const std::vector<std::size_t> validation = pr.split.validation();
  std::vector<int> all_labels(pr.n_nodes(), 0);
  for (std::size_t v : validation) all_labels[v] = pr.split.label(v);

  GcnResult out;
  out.edges = undirected_edges(*graph);
  double best_acc = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since = 0;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    std::shared_ptr<const SparseMatrix> adj = graph;
    if (extra > 0) adj = std::make_shared<const SparseMatrix>(add_random_edges(*graph, extra, rng));
    const std::uint64_t mask_seed = rng.next_u64();
    auto r = inner_step_on(pr, st, adj, 0, mask_seed);
    st = std::move(r.state);

    const DenseMatrix logits = gcn_logits(st.params, *pr.x, a_hat);
    const double val_loss = cross_entropy_value(logits, all_labels, validation);
    const DenseMatrix probs = row_softmax(logits);
    const double val_acc = accuracy(probs, pr.split, MaskKind::validation);
    GcnTracePoint p{step, r.loss, val_loss, val_acc, kNaN};
    if (cfg.trace_test) p.test_acc = accuracy(probs, pr.split, MaskKind::test);
    out.trace.push_back(p);
    out.steps = step;
    if (val_acc > best_acc || (val_acc == best_acc && val_loss < best_loss)) {
      best_acc = val_acc;
      best_loss = val_loss;
      out.params = st.params;
      out.best_step = step;
      since = 0;
    } else if (++since >= cfg.patience) {
      break;
    }
  }
  const DenseMatrix probs = forward(out.params, *pr.x, a_hat);
  out.val_acc = accuracy(probs, pr.split, MaskKind::validation);
  out.val_a_acc = accuracy(probs, pr.split, MaskKind::val_a);
  out.val_b_acc = accuracy(probs, pr.split, MaskKind::val_b);
  out.val_loss = best_loss;
  out.test_acc = accuracy(probs, pr.split, MaskKind::test);
  return out;
}

}  // namespace lds
