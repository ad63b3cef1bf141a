#pragma once

#include <map>
#include <string>
#include <vector>

#include "naslab/harness/experiment.hpp"

namespace naslab {

/// Rendered tables, file name -> CSV text. Every value is recomputed from stored raw records.
std::map<std::string, std::string> render_tables(const ResultStore& store);

/// Writes render_tables() under `<root>/tables/` and returns the written paths.
std::vector<std::string> emit_report(const ResultStore& store);

enum class PlotKind { contour, scatter, histogram, budget_curve };

std::string to_string(PlotKind k);
PlotKind parse_plot_kind(const std::string& text);

struct PlotFile {
  std::string svg;
  /// Exact plotted arrays plus the run id.
  nlohmann::json sidecar;
};

/// Plot documents keyed by file stem; empty when the data the plot needs is absent.
std::map<std::string, PlotFile> render_plots(const ResultStore& store, PlotKind kind);

/// Writes `<root>/plots/<stem>.svg` and `<stem>.json`; returns the SVG paths.
std::vector<std::string> emit_plots(const ResultStore& store, PlotKind kind);

struct VerifyResult {
  bool ok = true;
  int checked = 0;
  std::vector<std::string> problems;
};

/// Re-hashes artifacts, recomputes every attack aggregate from raw records, re-renders tables and plot
/// sidecars, and compares them with the files on disk byte for byte.
VerifyResult verify_store(const ResultStore& store);

}  // namespace naslab
