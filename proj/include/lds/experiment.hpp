#pragma once

// Experiment layer: configuration, grid search over hyperparameters and
// seeds, model selection on validation accuracy, and the edge-deletion and
// tau sweeps.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lds/dataio.hpp"
#include "lds/graphgen.hpp"
#include "lds/runner.hpp"

namespace lds {

enum class Method { gcn, gcn_rnd, lds, knn_lds, sparse_gcn, dense_gcn, rbf_gcn, knn_gcn };

inline constexpr std::array<const char*, 8> kMethodNames = {
    "gcn", "gcn_rnd", "lds", "knn_lds", "sparse_gcn", "dense_gcn", "rbf_gcn", "knn_gcn"};

inline Method parse_method(const std::string& s) {
  for (std::size_t i = 0; i < kMethodNames.size(); ++i)
    if (s == kMethodNames[i]) return static_cast<Method>(i);
  throw ConfigError("unknown method '" + s + "'");
}
inline const char* method_name(Method m) { return kMethodNames[static_cast<std::size_t>(m)]; }

inline bool learns_graph(Method m) { return m == Method::lds || m == Method::knn_lds; }
inline bool uses_knn(Method m) { return m == Method::knn_lds || m == Method::knn_gcn; }
inline bool needs_edges(Method m) { return m == Method::gcn || m == Method::gcn_rnd || m == Method::lds; }

struct ExperimentConfig {
  std::string dataset;
  Method method = Method::knn_lds;
  double retain_fraction = 1.0;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

  std::vector<std::size_t> k_grid;  // empty: 2..20 for knn_gcn, {10, 20} for knn_lds
  std::vector<std::string> metric_grid = {"euclidean", "cosine"};
  std::vector<double> gamma_grid = {0.005, 0.01, 0.02};
  std::vector<double> eta_grid = {1.0};
  std::vector<double> er_probability_grid = {0.01};
  std::optional<double> rbf_sigma;

  std::size_t tau = 5;
  std::vector<std::size_t> tau_grid = {0, 5, 20};
  std::vector<double> fractions = {0.25, 0.5, 0.75, 1.0};
  double eta_decay = 0.99;
  double rho = 5e-4;
  double beta = 0.5;
  std::size_t s_samples = 16;
  std::size_t hidden = 16;
  bool resample_backward = true;

  std::size_t outer_patience = 20;
  EvalCadence eval_cadence = EvalCadence::update;
  std::size_t max_outer_loops = 50;
  double inner_epsilon = 1e-3;
  std::size_t inner_patience = 20;
  std::size_t inner_max_steps = 400;
  std::size_t gcn_patience = 20;
  std::size_t gcn_max_steps = 500;

  bool trace_test = false;
  std::string export_theta = "first";  // first | all | none
  std::size_t jobs = 1;
  std::string output_dir = "runs";

  std::vector<std::size_t> effective_k_grid() const {
    if (!k_grid.empty()) return k_grid;
    if (method == Method::knn_lds) return {10, 20};
    std::vector<std::size_t> k;
    for (std::size_t i = 2; i <= 20; ++i) k.push_back(i);
    return k;
  }

  void validate() const {
    if (dataset.empty()) throw ConfigError("dataset path is required");
    if (seeds.empty()) throw ConfigError("seeds must be nonempty");
    if (!(retain_fraction > 0.0 && retain_fraction <= 1.0))
      throw ConfigError("retain_fraction must lie in (0, 1]");
    if (uses_knn(method)) {
      if (effective_k_grid().empty() || metric_grid.empty()) throw ConfigError("k and metric grids must be nonempty");
      for (const auto& m : metric_grid) parse_metric(m);
      for (std::size_t k : effective_k_grid())
        if (k == 0) throw ConfigError("k must be positive");
    }
    if (gamma_grid.empty()) throw ConfigError("gamma_grid must be nonempty");
    for (double g : gamma_grid)
      if (!(g > 0.0)) throw ConfigError("gamma values must be positive");
    if (learns_graph(method) && eta_grid.empty()) throw ConfigError("eta_grid must be nonempty");
    for (double e : eta_grid)
      if (!(e > 0.0)) throw ConfigError("eta values must be positive");
    if (method == Method::sparse_gcn) {
      if (er_probability_grid.empty()) throw ConfigError("er_probability_grid must be nonempty");
      for (double p : er_probability_grid)
        if (!(p > 0.0 && p < 1.0)) throw ConfigError("er_probability values must lie in (0, 1)");
    }
    for (double f : fractions)
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fractions must lie in (0, 1]");
    if (export_theta != "first" && export_theta != "all" && export_theta != "none")
      throw ConfigError("export_theta must be first, all or none");
    if (jobs == 0) throw ConfigError("jobs must be at least 1");
    LossConfig{rho, beta}.validate();
    HypergradConfig h;
    h.eta_decay = eta_decay;
    h.s_samples = s_samples;
    h.validate();
    if (hidden == 0 || outer_patience == 0 || max_outer_loops == 0 || inner_patience == 0 ||
        inner_max_steps == 0 || gcn_patience == 0 || gcn_max_steps == 0)
      throw ConfigError("sizes, patience windows and step caps must be positive");
  }
};

/// Every field of the config, defaults included.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["dataset"] = c.dataset;
  j["method"] = method_name(c.method);
  j["retain_fraction"] = c.retain_fraction;
  j["seeds"] = c.seeds;
  j["k_grid"] = c.effective_k_grid();
  j["metric_grid"] = c.metric_grid;
  j["gamma_grid"] = c.gamma_grid;
  j["eta_grid"] = c.eta_grid;
  j["er_probability_grid"] = c.er_probability_grid;
  j["rbf_sigma"] = c.rbf_sigma ? nlohmann::json(*c.rbf_sigma) : nlohmann::json();
  j["tau"] = c.tau;
  j["tau_grid"] = c.tau_grid;
  j["fractions"] = c.fractions;
  j["eta_decay"] = c.eta_decay;
  j["rho"] = c.rho;
  j["beta"] = c.beta;
  j["s_samples"] = c.s_samples;
  j["hidden"] = c.hidden;
  j["resample_backward"] = c.resample_backward;
  j["outer_patience"] = c.outer_patience;
  j["eval_cadence"] = cadence_name(c.eval_cadence);
  j["max_outer_loops"] = c.max_outer_loops;
  j["inner_epsilon"] = c.inner_epsilon;
  j["inner_patience"] = c.inner_patience;
  j["inner_max_steps"] = c.inner_max_steps;
  j["gcn_patience"] = c.gcn_patience;
  j["gcn_max_steps"] = c.gcn_max_steps;
  j["trace_test"] = c.trace_test;
  j["export_theta"] = c.export_theta;
  j["jobs"] = c.jobs;
  j["output_dir"] = c.output_dir;
  return j;
}

/// Parses a config; unknown keys are errors so typos do not silently fall
/// back to defaults.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::vector<std::string> known = {
      "dataset", "method", "retain_fraction", "seeds", "k_grid", "metric_grid", "gamma_grid",
      "eta_grid", "er_probability_grid", "rbf_sigma", "tau", "tau_grid", "fractions", "eta_decay",
      "rho", "beta", "s_samples", "hidden", "resample_backward", "outer_patience", "eval_cadence",
      "max_outer_loops", "inner_epsilon", "inner_patience", "inner_max_steps", "gcn_patience",
      "gcn_max_steps", "trace_test", "export_theta", "jobs", "output_dir", "eta", "gamma"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config key '" + key + "'");
  ExperimentConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key) && !j[key].is_null()) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("dataset", c.dataset);
    if (j.contains("method")) c.method = parse_method(j["method"].get<std::string>());
    get("retain_fraction", c.retain_fraction);
    get("seeds", c.seeds);
    get("k_grid", c.k_grid);
    get("metric_grid", c.metric_grid);
    get("gamma_grid", c.gamma_grid);
    get("eta_grid", c.eta_grid);
    if (j.contains("gamma")) c.gamma_grid = {j["gamma"].get<double>()};
    if (j.contains("eta")) c.eta_grid = {j["eta"].get<double>()};
    get("er_probability_grid", c.er_probability_grid);
    if (j.contains("rbf_sigma") && !j["rbf_sigma"].is_null()) c.rbf_sigma = j["rbf_sigma"].get<double>();
    get("tau", c.tau);
    get("tau_grid", c.tau_grid);
    get("fractions", c.fractions);
    get("eta_decay", c.eta_decay);
    get("rho", c.rho);
    get("beta", c.beta);
    get("s_samples", c.s_samples);
    get("hidden", c.hidden);
    get("resample_backward", c.resample_backward);
    get("outer_patience", c.outer_patience);
    if (j.contains("eval_cadence")) c.eval_cadence = parse_cadence(j["eval_cadence"].get<std::string>());
    get("max_outer_loops", c.max_outer_loops);
    get("inner_epsilon", c.inner_epsilon);
    get("inner_patience", c.inner_patience);
    get("inner_max_steps", c.inner_max_steps);
    get("gcn_patience", c.gcn_patience);
    get("gcn_max_steps", c.gcn_max_steps);
    get("trace_test", c.trace_test);
    get("export_theta", c.export_theta);
    get("jobs", c.jobs);
    get("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

// ---- grid ----------------------------------------------------------------------

struct GridPoint {
  std::size_t k = 0;
  std::string metric;
  double gamma = 0.01;
  double eta = 1.0;
  double er_probability = 0.0;

  std::string key() const {
    std::ostringstream os;
    os << std::setprecision(6);
    if (k) os << "k" << k << "-" << metric << "-";
    if (er_probability > 0.0) os << "p" << er_probability << "-";
    os << "g" << gamma;
    if (eta > 0.0) os << "-e" << eta;
    return os.str();
  }
};

inline nlohmann::json to_json(const GridPoint& p) {
  nlohmann::json j;
  if (p.k) {
    j["k"] = p.k;
    j["metric"] = p.metric;
  }
  if (p.er_probability > 0.0) j["er_probability"] = p.er_probability;
  j["gamma"] = p.gamma;
  if (p.eta > 0.0) j["eta"] = p.eta;
  return j;
}

/// Grid points in a fixed order: k, metric, er probability, gamma, eta.
inline std::vector<GridPoint> make_grid(const ExperimentConfig& c) {
  std::vector<std::size_t> ks = uses_knn(c.method) ? c.effective_k_grid() : std::vector<std::size_t>{0};
  std::vector<std::string> metrics = uses_knn(c.method) ? c.metric_grid : std::vector<std::string>{""};
  std::vector<double> ps = c.method == Method::sparse_gcn ? c.er_probability_grid : std::vector<double>{0.0};
  std::vector<double> etas = learns_graph(c.method) ? c.eta_grid : std::vector<double>{0.0};
  std::vector<GridPoint> out;
  for (std::size_t k : ks)
    for (const auto& m : metrics)
      for (double p : ps)
        for (double g : c.gamma_grid)
          for (double e : etas) out.push_back({k, m, g, e, p});
  return out;
}

struct PointResult {
  GridPoint point;
  std::vector<RunRecord> runs;  // one per seed, in config order
  double val_mean = kNaN, val_std = kNaN;
  double val_a_mean = kNaN, val_a_std = kNaN;
  double val_b_mean = kNaN, val_b_std = kNaN;
  double test_mean = kNaN, test_std = kNaN;
  double edges_mean = kNaN;
};

struct AggregateResult {
  std::string method;
  std::string dataset;
  double retain_fraction = 1.0;
  std::vector<PointResult> grid;
  std::size_t selected = 0;  // index into grid
  double seconds = 0.0;

  const PointResult& best() const { return grid.at(selected); }
};

inline void summarize(PointResult& p) {
  std::vector<double> val, a, b, test, edges;
  for (const auto& r : p.runs) {
    val.push_back(r.val_acc);
    a.push_back(r.val_a_acc);
    b.push_back(r.val_b_acc);
    test.push_back(r.test_acc);
    edges.push_back(r.expected_edges);
  }
  std::tie(p.val_mean, p.val_std) = mean_std(val);
  std::tie(p.val_a_mean, p.val_a_std) = mean_std(a);
  std::tie(p.val_b_mean, p.val_b_std) = mean_std(b);
  std::tie(p.test_mean, p.test_std) = mean_std(test);
  p.edges_mean = mean_std(edges).first;
}

/// Index of the grid point with the highest mean validation accuracy; the
/// earliest point wins ties. Test accuracies are not consulted.
inline std::size_t select_point(const std::vector<PointResult>& grid) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (grid[i].val_mean > grid[best].val_mean) best = i;
  return best;
}

// ---- single runs ---------------------------------------------------------------

/// Graphs shared across grid points and seeds, built on first use.
class GraphCache {
 public:
  explicit GraphCache(const Dataset& d) : d_(d) {}

  std::shared_ptr<const SparseMatrix> knn(Metric metric, std::size_t k, std::size_t kmax) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& table = tables_[metric_name(metric)];
    if (table.empty()) table = knn_table(*d_.x, kmax, metric);
    auto& g = knn_[std::string(metric_name(metric)) + "/" + std::to_string(k)];
    if (!g) g = std::make_shared<const SparseMatrix>(knn_graph_from_table(table, k));
    return g;
  }

  std::shared_ptr<const SparseMatrix> rbf(std::optional<double> sigma) {
    std::lock_guard<std::mutex> lock(mu_);
    if (!rbf_) rbf_ = std::make_shared<const SparseMatrix>(rbf_graph(*d_.x, sigma));
    return rbf_;
  }

  std::shared_ptr<const SparseMatrix> dense() {
    std::lock_guard<std::mutex> lock(mu_);
    if (!dense_) dense_ = std::make_shared<const SparseMatrix>(dense_graph(d_.n_nodes()));
    return dense_;
  }

 private:
  const Dataset& d_;
  std::mutex mu_;
  std::map<std::string, std::vector<std::vector<std::size_t>>> tables_;
  std::map<std::string, std::shared_ptr<const SparseMatrix>> knn_;
  std::shared_ptr<const SparseMatrix> rbf_, dense_;
};

inline std::shared_ptr<const SparseMatrix> graph_for(const Dataset& d, const ExperimentConfig& c,
                                                     const GridPoint& p, std::uint64_t seed,
                                                     GraphCache& cache) {
  switch (c.method) {
    case Method::gcn:
    case Method::gcn_rnd:
    case Method::lds: {
      const auto kept = subsample_edges(*d.edges, c.retain_fraction, seed);
      return std::make_shared<const SparseMatrix>(edges_to_adjacency(d.n_nodes(), kept));
    }
    case Method::knn_lds:
    case Method::knn_gcn: {
      const auto ks = c.effective_k_grid();
      return cache.knn(parse_metric(p.metric), p.k, *std::max_element(ks.begin(), ks.end()));
    }
    case Method::sparse_gcn: {
      Rng rng(mix64(seed ^ 0xe7d0));
      return std::make_shared<const SparseMatrix>(erdos_renyi_graph(d.n_nodes(), p.er_probability, rng));
    }
    case Method::dense_gcn: return cache.dense();
    case Method::rbf_gcn: return cache.rbf(c.rbf_sigma);
  }
  throw ConfigError("unknown method");
}

inline RunRecord run_single(const Dataset& d, const ExperimentConfig& c, const GridPoint& p,
                            std::uint64_t seed, GraphCache& cache) {
  const auto t0 = std::chrono::steady_clock::now();
  const LabeledSplit split = make_split(d, seed);
  OptimizerConfig opt;
  opt.gamma = p.gamma;
  const LossConfig loss{c.rho, c.beta};
  const Problem pr(d.x, split, loss, opt);
  const auto graph = graph_for(d, c, p, seed, cache);
  const std::uint64_t run_seed = mix64(seed * 0x9e3779b97f4a7c15ULL + 17);

  RunRecord r;
  r.key = p.key();
  r.seed = seed;
  if (learns_graph(c.method)) {
    LdsConfig lc;
    lc.hidden = c.hidden;
    lc.loss = loss;
    lc.opt = opt;
    lc.hyper.tau = c.tau;
    lc.hyper.eta = p.eta;
    lc.hyper.eta_decay = c.eta_decay;
    lc.hyper.s_samples = c.s_samples;
    lc.hyper.resample_backward = c.resample_backward;
    lc.inner = {c.inner_epsilon, c.inner_patience, c.inner_max_steps};
    lc.outer_patience = c.outer_patience;
    lc.eval_cadence = c.eval_cadence;
    lc.max_outer_loops = c.max_outer_loops;
    lc.trace_test = c.trace_test;
    LdsResult res = run_lds(pr, *graph, lc, run_seed);
    r.val_a_acc = res.val_a_acc;
    r.val_b_acc = res.val_b_acc;
    r.val_acc = res.val_acc;
    r.test_acc = res.test_acc;
    r.expected_edges = res.expected_edges;
    r.epochs = res.epochs;
    r.outer_updates = res.outer_updates;
    r.inner_steps = res.inner_steps;
    r.stop_reason = res.stop_reason;
    r.trace = std::move(res.trace);
    r.groups = std::move(res.groups);
    r.histograms = std::move(res.histograms);
    r.theta = std::move(res.dist);
  } else {
    GcnTrainConfig gc;
    gc.hidden = c.hidden;
    gc.loss = loss;
    gc.opt = opt;
    gc.patience = c.gcn_patience;
    gc.max_steps = c.gcn_max_steps;
    gc.trace_test = c.trace_test;
    const double base_edges = undirected_edges(*graph);
    if (c.method == Method::gcn_rnd) gc.random_edges = static_cast<std::size_t>(base_edges);
    GcnResult res = run_gcn(pr, graph, gc, run_seed);
    r.val_a_acc = res.val_a_acc;
    r.val_b_acc = res.val_b_acc;
    r.val_acc = res.val_acc;
    r.test_acc = res.test_acc;
    r.expected_edges = base_edges + static_cast<double>(gc.random_edges);
    r.inner_steps = res.steps;
    r.stop_reason = res.steps < gc.max_steps ? "early_stopping" : "max_steps";
    for (const auto& t : res.trace) {
      LdsTracePoint q;
      q.step = q.global_step = t.step;
      q.inner_loss = t.train_loss;
      q.outer_loss = t.val_loss;
      q.acc_a = t.val_acc;  // full validation set for fixed graphs
      q.acc_test = t.test_acc;
      q.expected_edges = r.expected_edges;
      r.trace.push_back(q);
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---- experiments ---------------------------------------------------------------

namespace detail {

inline void check_combination(const Dataset& d, const ExperimentConfig& c) {
  if (needs_edges(c.method) && (!d.edges || d.edges->empty()))
    throw ConfigError(std::string("method ") + method_name(c.method) + " needs a dataset with edges; '" +
                      d.name + "' has none");
}

/// Runs `n` independent tasks on up to `jobs` threads; results land in their
/// own slots so the outcome does not depend on scheduling. The first
/// exception is rethrown after all workers stop.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(jobs, n); ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

using ProgressFn = std::function<void(const GridPoint&, const RunRecord&)>;

inline AggregateResult run_experiment(const Dataset& d, const ExperimentConfig& c,
                                      const ProgressFn& progress = nullptr) {
  c.validate();
  detail::check_combination(d, c);
  const auto t0 = std::chrono::steady_clock::now();
  AggregateResult out;
  out.method = method_name(c.method);
  out.dataset = d.name;
  out.retain_fraction = c.retain_fraction;
  const auto grid = make_grid(c);
  out.grid.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out.grid[i].point = grid[i];
    out.grid[i].runs.resize(c.seeds.size());
  }
  GraphCache cache(d);
  std::mutex progress_mu;
  detail::parallel_for(grid.size() * c.seeds.size(), c.jobs, [&](std::size_t task) {
    const std::size_t gi = task / c.seeds.size(), si = task % c.seeds.size();
    RunRecord r = run_single(d, c, grid[gi], c.seeds[si], cache);
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mu);
      progress(grid[gi], r);
    }
    out.grid[gi].runs[si] = std::move(r);
  });
  for (auto& p : out.grid) summarize(p);
  out.selected = select_point(out.grid);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Report of the selected grid point.
inline RunReport make_report(const AggregateResult& a, const ExperimentConfig& c) {
  RunReport r;
  r.config = to_json(c);
  r.method = a.method;
  r.dataset = a.dataset;
  r.selected = to_json(a.best().point);
  r.runs = a.best().runs;
  for (std::size_t i = 0; i < r.runs.size(); ++i)
    if (c.export_theta == "none" || (c.export_theta == "first" && i > 0)) r.runs[i].theta.reset();
  summarize(r);
  r.seconds = a.seconds;
  return r;
}

struct SweepRow {
  std::string method;
  double fraction = 1.0;
  std::size_t tau = 0;
  AggregateResult result;
};

/// {gcn, gcn_rnd, lds} at every retain fraction.
inline std::vector<SweepRow> run_edge_deletion(const Dataset& d, const ExperimentConfig& c,
                                               const ProgressFn& progress = nullptr) {
  if (!d.edges || d.edges->empty())
    throw ConfigError("edge-deletion needs a dataset with an edge list; '" + d.name + "' has none");
  std::vector<SweepRow> rows;
  for (double f : c.fractions)
    for (Method m : {Method::gcn, Method::gcn_rnd, Method::lds}) {
      ExperimentConfig cf = c;
      cf.method = m;
      cf.retain_fraction = f;
      rows.push_back({method_name(m), f, c.tau, run_experiment(d, cf, progress)});
    }
  return rows;
}

/// The configured graph-learning method at every tau in the grid.
inline std::vector<SweepRow> run_tau_ablation(const Dataset& d, const ExperimentConfig& c,
                                              const ProgressFn& progress = nullptr) {
  if (!learns_graph(c.method)) throw ConfigError("ablate-tau needs method lds or knn_lds");
  if (c.tau_grid.empty()) throw ConfigError("tau_grid must be nonempty");
  std::vector<SweepRow> rows;
  for (std::size_t tau : c.tau_grid) {
    ExperimentConfig ct = c;
    ct.tau = tau;
    rows.push_back({method_name(c.method), c.retain_fraction, tau, run_experiment(d, ct, progress)});
  }
  return rows;
}

// ---- output --------------------------------------------------------------------

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// `<output_dir>/<command>-<config hash>-<UTC timestamp>`, created.
inline std::string make_run_dir(const ExperimentConfig& c, const std::string& command) {
  std::ostringstream name;
  name << command << '-' << std::hex << std::setw(16) << std::setfill('0') << fnv1a(to_json(c).dump());
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  name << '-' << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  std::filesystem::path dir = std::filesystem::path(c.output_dir) / name.str();
  for (int i = 1; std::filesystem::exists(dir); ++i)
    dir = std::filesystem::path(c.output_dir) / (name.str() + "-" + std::to_string(i));
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline void write_grid_csv(const std::string& path, const AggregateResult& a) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write '" + path + "'");
  os << "key,selected,val_mean,val_std,val_a_mean,val_a_std,val_b_mean,val_b_std,test_mean,test_std,"
        "edges_mean\n";
  for (std::size_t i = 0; i < a.grid.size(); ++i) {
    const auto& p = a.grid[i];
    os << p.point.key() << ',' << (i == a.selected ? 1 : 0) << ',' << detail::fmt(p.val_mean) << ','
       << detail::fmt(p.val_std) << ',' << detail::fmt(p.val_a_mean) << ',' << detail::fmt(p.val_a_std)
       << ',' << detail::fmt(p.val_b_mean) << ',' << detail::fmt(p.val_b_std) << ','
       << detail::fmt(p.test_mean) << ',' << detail::fmt(p.test_std) << ',' << detail::fmt(p.edges_mean)
       << '\n';
  }
}

inline nlohmann::json summary_json(const AggregateResult& a) {
  const auto& b = a.best();
  return {{"method", a.method},
          {"dataset", a.dataset},
          {"retain_fraction", a.retain_fraction},
          {"selected", to_json(b.point)},
          {"test_mean", detail::num(b.test_mean)},
          {"test_std", detail::num(b.test_std)},
          {"val_mean", detail::num(b.val_mean)},
          {"val_std", detail::num(b.val_std)},
          {"val_a_mean", detail::num(b.val_a_mean)},
          {"val_b_mean", detail::num(b.val_b_mean)},
          {"expected_edges_mean", detail::num(b.edges_mean)},
          {"grid_points", a.grid.size()},
          {"seconds", a.seconds}};
}

/// accuracy-vs-fraction or accuracy-vs-tau table, one row per sweep entry.
inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write '" + path + "'");
  os << "method,fraction,tau,selected,val_mean,val_std,val_a_mean,val_a_std,val_b_mean,val_b_std,"
        "test_mean,test_std,edges_mean\n";
  for (const auto& r : rows) {
    const auto& b = r.result.best();
    os << r.method << ',' << detail::fmt(r.fraction) << ',' << r.tau << ',' << b.point.key() << ','
       << detail::fmt(b.val_mean) << ',' << detail::fmt(b.val_std) << ',' << detail::fmt(b.val_a_mean)
       << ',' << detail::fmt(b.val_a_std) << ',' << detail::fmt(b.val_b_mean) << ','
       << detail::fmt(b.val_b_std) << ',' << detail::fmt(b.test_mean) << ',' << detail::fmt(b.test_std)
       << ',' << detail::fmt(b.edges_mean) << '\n';
  }
}

}  // namespace lds
