#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "naslab/core/error.hpp"
#include "naslab/core/hash.hpp"
#include "naslab/diagnostics/diagnostics.hpp"
#include "naslab/harness/experiment.hpp"
#include "naslab/harness/report.hpp"

using namespace naslab;

namespace {

enum Exit { ok = 0, usage = 1, invariant = 2, failure = 3 };

void log_line(const std::string& m) { std::cerr << "[naslab] " << m << "\n"; }

struct Args {
  std::string spec;
  std::string out;
  std::vector<std::string> plot_kinds;
};

ExperimentSpec load(const Args& a, std::string& out_dir) {
  ExperimentSpec spec = load_experiment(a.spec);
  out_dir = a.out.empty() ? spec.output_dir : a.out;
  if (out_dir.empty()) throw ConfigError("no output directory: pass --out or set output_dir in the spec");
  return spec;
}

ResultStore open_store(const ExperimentSpec& spec, const std::string& out_dir) {
  ResultStore store = ResultStore::open(out_dir);
  if (store.stages.empty() && store.run_id.empty()) throw ConfigError("no result store at " + out_dir);
  if (store.run_id != run_id(spec))
    throw ConfigError("store " + out_dir + " was written by run " + store.run_id + ", the spec has run id " + run_id(spec));
  return store;
}

/// Artifact hashes and attack aggregates of every recorded stage.
int check_stages(const ResultStore& store) {
  int bad = 0;
  for (const StageRecord& r : store.stages) {
    try {
      for (const auto& [file, hash] : r.outputs)
        if (sha256_file(store.path(r, file)) != hash) {
          log_line(r.name + ": " + file + " does not match its recorded hash");
          ++bad;
        }
      if (r.kind == "attack")
        for (const std::string& k : aggregate_mismatches(store.report(r))) {
          log_line(r.name + ": aggregate " + k + " disagrees with its records");
          ++bad;
        }
    } catch (const Error& e) {
      log_line(r.name + ": " + e.what());
      ++bad;
    }
  }
  return bad;
}

int run_stages(const Args& a, std::set<std::string> kinds, bool emit_all) {
  std::string out_dir;
  const ExperimentSpec spec = load(a, out_dir);
  RunOptions opts;
  if (const char* root = std::getenv("NASLAB_DATA_ROOT")) opts.data_root = root;
  opts.kinds = std::move(kinds);
  opts.log = log_line;
  RunSummary sum;
  ResultStore store = run_experiment(spec, out_dir, opts, &sum);
  log_line("run " + store.run_id + ": " + std::to_string(sum.executed) + " executed, " + std::to_string(sum.cached) +
           " cached, " + std::to_string(sum.skipped) + " skipped");
  if (emit_all) {
    for (const std::string& p : emit_report(store)) log_line("wrote " + p);
    for (PlotKind k : {PlotKind::contour, PlotKind::scatter, PlotKind::histogram, PlotKind::budget_curve})
      for (const std::string& p : emit_plots(store, k)) log_line("wrote " + p);
  }
  return check_stages(store) == 0 ? ok : invariant;
}

int report(const Args& a) {
  std::string out_dir;
  const ResultStore store = open_store(load(a, out_dir), out_dir);
  if (store.stages.empty()) throw ConfigError("the store has no stages to report");
  for (const std::string& p : emit_report(store)) std::cout << p << "\n";
  return check_stages(store) == 0 ? ok : invariant;
}

int plot(const Args& a) {
  std::string out_dir;
  const ResultStore store = open_store(load(a, out_dir), out_dir);
  std::vector<PlotKind> kinds;
  if (a.plot_kinds.empty())
    kinds = {PlotKind::contour, PlotKind::scatter, PlotKind::histogram, PlotKind::budget_curve};
  for (const std::string& k : a.plot_kinds) kinds.push_back(parse_plot_kind(k));
  for (PlotKind k : kinds) {
    const std::vector<std::string> paths = emit_plots(store, k);
    if (paths.empty()) log_line("no data for " + to_string(k) + " plots; nothing written");
    for (const std::string& p : paths) std::cout << p << "\n";
  }
  return check_stages(store) == 0 ? ok : invariant;
}

int verify(const Args& a) {
  std::string out_dir;
  const ResultStore store = open_store(load(a, out_dir), out_dir);
  const VerifyResult v = verify_store(store);
  for (const std::string& p : v.problems) std::cout << "MISMATCH " << p << "\n";
  std::cout << (v.ok ? "OK" : "FAILED") << ": " << v.checked << " checks, " << v.problems.size() << " problems\n";
  return v.ok ? ok : invariant;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"naslab: architecture search, attacks and diagnostics experiments"};
  app.require_subcommand(1);
  Args args;
  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--spec", args.spec, "experiment spec (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", args.out, "result store directory (defaults to the spec's output_dir)");
    return sub;
  };
  add("search", "run the spec's search stages");
  add("train", "run the spec's train stages");
  add("attack", "run the spec's attack stages");
  add("diagnose", "run the spec's diagnose stages");
  add("run", "run every stage, then emit tables and plots");
  add("report", "write CSV tables under <out>/tables");
  add("plot", "write SVG plots and data sidecars under <out>/plots")
      ->add_option("--kind", args.plot_kinds, "contour, scatter, histogram or budget_curve (default: all)");
  add("verify", "recompute aggregates, tables and plot data from raw records and diff them");
  CLI11_PARSE(app, argc, argv);

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "report") return report(args);
    if (cmd == "plot") return plot(args);
    if (cmd == "verify") return verify(args);
    if (cmd == "run") return run_stages(args, {}, true);
    return run_stages(args, {cmd}, false);
  } catch (const IntegrityError& e) {
    log_line(std::string("integrity: ") + e.what());
    return invariant;
  } catch (const ConfigError& e) {
    log_line(std::string("config: ") + e.what());
    return usage;
  } catch (const ParseError& e) {
    log_line(std::string("parse: ") + e.what());
    return usage;
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return failure;
  }
}
