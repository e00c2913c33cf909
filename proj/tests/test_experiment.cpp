#include <gtest/gtest.h>

#include <filesystem>

#include <unistd.h>

#include "lds/experiment.hpp"
#include "oracles.hpp"

using namespace lds;
namespace fs = std::filesystem;

namespace {

// 24 nodes in two classes, protocol split 4/8/12, a chain of edges.
Dataset toy_dataset() {
  Rng rng(3);
  Dataset d;
  d.name = "toy";
  auto x = std::make_shared<DenseMatrix>(24, 3);
  for (std::size_t v = 0; v < 24; ++v) {
    d.labels.push_back(v % 2 == 0 ? 0 : 1);
    for (std::size_t f = 0; f < 3; ++f) (*x)(v, f) = rng.uniform(-1, 1) + (v % 2 == 0 ? 1.5 : 0.0) * (f == 0);
  }
  d.x = x;
  d.n_classes = 2;
  std::vector<Edge> e;
  for (std::size_t v = 0; v + 2 < 24; ++v) e.push_back({v, v + 2});
  d.edges = e;
  d.protocol = SplitProtocol{4, 8, 12};
  return d;
}

ExperimentConfig fast(Method m) {
  ExperimentConfig c;
  c.dataset = "toy";
  c.method = m;
  c.seeds = {0, 1};
  c.k_grid = {3};
  c.metric_grid = {"euclidean"};
  c.gamma_grid = {0.02};
  c.hidden = 8;
  c.s_samples = 4;
  c.outer_patience = 4;
  c.max_outer_loops = 3;
  c.inner_patience = 5;
  c.inner_max_steps = 25;
  c.gcn_patience = 10;
  c.gcn_max_steps = 60;
  return c;
}

PointResult point_with_val(double v) {
  PointResult p;
  p.val_mean = v;
  return p;
}

}  // namespace

TEST(Config, JsonRoundTripEchoesEveryField) {
  ExperimentConfig c = fast(Method::knn_lds);
  c.rbf_sigma = 0.7;
  c.eval_cadence = EvalCadence::epoch;
  c.export_theta = "all";
  const nlohmann::json j = to_json(c);
  EXPECT_EQ(to_json(experiment_config_from_json(j)), j);
  for (const char* key : {"tau", "eta_decay", "s_samples", "inner_epsilon", "rho", "beta", "export_theta"})
    EXPECT_TRUE(j.contains(key)) << key;
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(experiment_config_from_json({{"dataset", "x"}, {"gama", 0.1}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"dataset", "x"}, {"method", "mlp"}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"dataset", "x"}, {"beta", 1.0}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"dataset", "x"}, {"seeds", "zero"}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json({{"method", "gcn"}}), ConfigError);
  EXPECT_THROW(experiment_config_from_json(nlohmann::json::array()), ConfigError);
  EXPECT_THROW(load_experiment_config("/nonexistent/config.json"), ConfigError);
  const ExperimentConfig c = experiment_config_from_json({{"dataset", "x"}, {"gamma", 0.05}, {"eta", 2.0}});
  EXPECT_EQ(c.gamma_grid, std::vector<double>{0.05});
  EXPECT_EQ(c.eta_grid, std::vector<double>{2.0});
}

TEST(Grid, DefaultGridsHaveTheDocumentedSizes) {
  ExperimentConfig c;
  c.dataset = "x";
  c.method = Method::knn_gcn;
  EXPECT_EQ(make_grid(c).size(), 19u * 2u * 3u);
  c.method = Method::knn_lds;
  EXPECT_EQ(make_grid(c).size(), 2u * 2u * 3u * 1u);
  c.method = Method::gcn;
  EXPECT_EQ(make_grid(c).size(), 3u);
  c.method = Method::sparse_gcn;
  EXPECT_EQ(make_grid(c).size(), 3u);
  const auto g = make_grid(fast(Method::knn_lds));
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].key(), "k3-euclidean-g0.02-e1");
}

TEST(Grid, SelectionUsesValidationAndEarliestWinsTies) {
  std::vector<PointResult> grid = {point_with_val(0.8), point_with_val(0.9), point_with_val(0.9)};
  grid[2].test_mean = 1.0;  // never consulted
  EXPECT_EQ(select_point(grid), 1u);
  grid[0].val_mean = 0.95;
  EXPECT_EQ(select_point(grid), 0u);
}

TEST(Experiment, ReproducibleAcrossThreadCounts) {
  const Dataset d = toy_dataset();
  ExperimentConfig c = fast(Method::knn_lds);
  const AggregateResult one = run_experiment(d, c);
  c.jobs = 2;
  const AggregateResult two = run_experiment(d, c);
  ASSERT_EQ(one.grid.size(), two.grid.size());
  for (std::size_t s = 0; s < 2; ++s) {
    RunRecord a = one.grid[0].runs[s], b = two.grid[0].runs[s];
    a.seconds = b.seconds = 0.0;
    EXPECT_EQ(a, b);
  }
  EXPECT_EQ(one.grid[0].runs[0].seed, 0u);
  EXPECT_EQ(one.grid[0].runs[1].seed, 1u);
}

TEST(Experiment, EveryMethodRunsOnTheToyDataset) {
  const Dataset d = toy_dataset();
  for (Method m : {Method::gcn, Method::gcn_rnd, Method::lds, Method::knn_gcn, Method::knn_lds,
                   Method::sparse_gcn, Method::dense_gcn, Method::rbf_gcn}) {
    ExperimentConfig c = fast(m);
    c.seeds = {0};
    c.er_probability_grid = {0.1};
    const AggregateResult a = run_experiment(d, c);
    const RunRecord& r = a.best().runs[0];
    EXPECT_GE(r.test_acc, 0.0) << method_name(m);
    EXPECT_LE(r.test_acc, 1.0) << method_name(m);
    EXPECT_EQ(r.theta.has_value(), learns_graph(m)) << method_name(m);
  }
}

TEST(Experiment, RandomEdgeBaselineCountsTheExtraEdges) {
  const Dataset d = toy_dataset();
  ExperimentConfig c = fast(Method::gcn_rnd);
  c.seeds = {0};
  EXPECT_EQ(run_experiment(d, c).best().runs[0].expected_edges, 2.0 * 22.0);
  c.method = Method::gcn;
  c.retain_fraction = 0.5;
  EXPECT_EQ(run_experiment(d, c).best().runs[0].expected_edges, 11.0);
}

TEST(Experiment, EdgeMethodsNeedEdges) {
  Dataset d = toy_dataset();
  d.edges.reset();
  EXPECT_THROW(run_experiment(d, fast(Method::lds)), ConfigError);
  EXPECT_THROW(run_edge_deletion(d, fast(Method::lds)), ConfigError);
  EXPECT_NO_THROW(run_experiment(d, fast(Method::knn_gcn)));
  EXPECT_THROW(run_tau_ablation(d, fast(Method::knn_gcn)), ConfigError);
}

TEST(Experiment, TauAblationHasOneRowPerTau) {
  const Dataset d = toy_dataset();
  ExperimentConfig c = fast(Method::knn_lds);
  c.seeds = {0};
  c.tau_grid = {0, 3};
  const auto rows = run_tau_ablation(d, c);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].tau, 0u);
  EXPECT_EQ(rows[1].tau, 3u);
  const RunRecord& alt = rows[0].result.best().runs[0];
  EXPECT_EQ(alt.outer_updates, alt.inner_steps);
}

TEST(Output, ReportKeepsThetaPerExportPolicyAndRunDirsAreDistinct) {
  const Dataset d = toy_dataset();
  ExperimentConfig c = fast(Method::knn_lds);
  const AggregateResult a = run_experiment(d, c);
  EXPECT_TRUE(make_report(a, c).runs[0].theta.has_value());
  EXPECT_FALSE(make_report(a, c).runs[1].theta.has_value());
  c.export_theta = "none";
  EXPECT_FALSE(make_report(a, c).runs[0].theta.has_value());
  c.export_theta = "all";
  EXPECT_TRUE(make_report(a, c).runs[1].theta.has_value());

  c.output_dir = (fs::temp_directory_path() / ("lds_exp_" + std::to_string(::getpid()))).string();
  const std::string d1 = make_run_dir(c, "run");
  const std::string d2 = make_run_dir(c, "run");
  EXPECT_NE(d1, d2);
  EXPECT_TRUE(fs::is_directory(d1));
  EXPECT_NE(fs::path(d1).filename().string().find("run-"), std::string::npos);
  RunReport r = make_report(a, c);
  export_report(r, d1);
  write_grid_csv(d1 + "/grid.csv", a);
  EXPECT_EQ(load_report(d1).runs.size(), 2u);
  fs::remove_all(c.output_dir);
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}
