// Command-line front end: run, ablate-tau, edge-deletion, check.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lds/lds.hpp"

namespace {

using nlohmann::json;

int exit_code(const std::string& kind) {
  if (kind == "config_error") return 2;
  if (kind == "format_error") return 3;
  return 1;
}

int fail(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
  return exit_code(kind);
}

void write_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw lds::FormatError("cannot write '" + path + "'");
  os << j.dump(1) << '\n';
}

struct Common {
  std::string config;
  std::size_t jobs = 0;
  std::string out;
  bool quiet = false;
};

lds::ExperimentConfig load(const Common& o) {
  lds::ExperimentConfig c = lds::load_experiment_config(o.config);
  if (o.jobs) c.jobs = o.jobs;
  if (!o.out.empty()) c.output_dir = o.out;
  c.validate();
  return c;
}

lds::ProgressFn progress(const Common& o) {
  if (o.quiet) return nullptr;
  return [](const lds::GridPoint& p, const lds::RunRecord& r) {
    std::fprintf(stderr, "  %-28s seed %-3llu val %.4f  %.1fs\n", p.key().c_str(),
                 static_cast<unsigned long long>(r.seed), r.val_acc, r.seconds);
  };
}

void save_experiment(const std::string& dir, const lds::AggregateResult& a, const lds::ExperimentConfig& c) {
  lds::RunReport report = lds::make_report(a, c);
  lds::export_report(report, dir);
  lds::write_grid_csv(dir + "/grid.csv", a);
  write_json(dir + "/summary.json", lds::summary_json(a));
}

int cmd_run(const Common& o) {
  const lds::ExperimentConfig c = load(o);
  const lds::Dataset d = lds::load_dataset(c.dataset);
  const std::string dir = lds::make_run_dir(c, "run");
  write_json(dir + "/config.json", lds::to_json(c));
  const lds::AggregateResult a = lds::run_experiment(d, c, progress(o));
  save_experiment(dir, a, c);
  json s = lds::summary_json(a);
  s["run_dir"] = dir;
  std::cout << s.dump(1) << '\n';
  return 0;
}

int cmd_sweep(const Common& o, bool tau) {
  const lds::ExperimentConfig c = load(o);
  const lds::Dataset d = lds::load_dataset(c.dataset);
  const std::string dir = lds::make_run_dir(c, tau ? "ablate-tau" : "edge-deletion");
  write_json(dir + "/config.json", lds::to_json(c));
  const auto rows = tau ? lds::run_tau_ablation(d, c, progress(o)) : lds::run_edge_deletion(d, c, progress(o));
  json table = json::array();
  for (const auto& r : rows) {
    std::ostringstream sub;
    sub << dir << '/' << r.method << "-f" << r.fraction << "-tau" << r.tau;
    lds::ExperimentConfig cr = c;
    cr.method = lds::parse_method(r.method);
    cr.retain_fraction = r.fraction;
    cr.tau = r.tau;
    save_experiment(sub.str(), r.result, cr);
    json row = lds::summary_json(r.result);
    row["tau"] = r.tau;
    table.push_back(row);
  }
  lds::write_sweep_csv(dir + (tau ? "/accuracy_vs_tau.csv" : "/accuracy_vs_fraction.csv"), rows);
  write_json(dir + "/summary.json", table);
  std::cout << json{{"run_dir", dir}, {"rows", table}}.dump(1) << '\n';
  return 0;
}

int cmd_check(bool quiet) {
  const auto results = lds::checks::run_all();
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed;
    if (!quiet || !r.passed) std::cout << lds::checks::format(r) << '\n';
  }
  std::cout << (ok ? "all checks passed" : "some checks FAILED") << '\n';
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint learning of discrete graph structure and GCN weights"};
  app.require_subcommand(1);
  Common o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--jobs,-j", o.jobs, "concurrent runs (overrides the config)");
    sub->add_option("--out,-o", o.out, "output directory (overrides the config)");
    sub->add_flag("--quiet,-q", o.quiet, "no per-run progress on stderr");
  };
  CLI::App* run = app.add_subcommand("run", "grid search and seeds for one method");
  add_common(run);
  CLI::App* tau = app.add_subcommand("ablate-tau", "accuracy for every tau in tau_grid");
  add_common(tau);
  CLI::App* del = app.add_subcommand("edge-deletion", "gcn, gcn_rnd and lds at every retain fraction");
  add_common(del);
  CLI::App* check = app.add_subcommand("check", "property and oracle self-checks");
  check->add_flag("--quiet,-q", o.quiet, "print failures only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage_error", e.what());
  }
  try {
    if (*run) return cmd_run(o);
    if (*tau) return cmd_sweep(o, true);
    if (*del) return cmd_sweep(o, false);
    if (*check) return cmd_check(o.quiet);
  } catch (const lds::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("error", e.what());
  }
  return 1;
}
