#include "naslab/harness/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "naslab/core/error.hpp"
#include "naslab/core/hash.hpp"
#include "naslab/diagnostics/diagnostics.hpp"

namespace naslab {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const nlohmann::json& agg, const char* key) {
  if (!agg.is_object() || !agg.contains(key) || !agg.at(key).is_number()) return "NA";
  return fmt(agg.at(key).get<double>());
}

/// Quotes a CSV field when it holds a separator or quote.
std::string cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string join(const std::vector<std::string>& row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + cell(row[i]);
  return out + "\n";
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw InputError("cannot write " + p.string());
}

nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

struct AttackRow {
  const StageRecord* stage;
  AttackReport report;
  nlohmann::json fresh;
};

std::vector<AttackRow> attack_rows(const ResultStore& store) {
  std::vector<AttackRow> rows;
  for (const StageRecord& r : store.stages) {
    if (r.kind != "attack") continue;
    AttackRow row{&r, store.report(r), {}};
    row.fresh = recompute_aggregates(row.report);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string model_of(const StageRecord& r) { return r.config.value("model", std::string()); }

std::string vulnerability_table(const ResultStore& store, const std::vector<AttackRow>& attacks) {
  std::string out = join({"model", "arch", "clean_accuracy", "asr_most_likely", "asr_least_likely", "asr_untargeted",
                          "backdoor_asr", "backdoor_cad", "membership_auc"});
  for (const StageRecord& m : store.stages) {
    if (m.kind != "train") continue;
    std::map<std::string, std::string> v;
    for (const char* k : {"asr_most_likely", "asr_least_likely", "asr_untargeted", "backdoor_asr", "backdoor_cad",
                          "membership_auc"})
      v[k] = "NA";
    // Later stages of the same kind override earlier ones.
    for (const AttackRow& a : attacks) {
      if (model_of(*a.stage) != m.name) continue;
      const std::string& kind = a.report.attack;
      if (kind == "evasion") {
        v["asr_" + a.report.config.value("target_mode", std::string("untargeted"))] = fmt(a.fresh, "asr");
      } else if (kind == "backdoor") {
        v["backdoor_asr"] = fmt(a.fresh, "asr");
        v["backdoor_cad"] = fmt(a.fresh, "cad");
      } else if (kind == "membership") {
        v["membership_auc"] = fmt(a.fresh, "auc");
      }
    }
    out += join({m.name, m.summary.value("model_id", std::string()), fmt(m.summary, "test_accuracy"),
                 v["asr_most_likely"], v["asr_least_likely"], v["asr_untargeted"], v["backdoor_asr"],
                 v["backdoor_cad"], v["membership_auc"]});
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> render_tables(const ResultStore& store) {
  std::map<std::string, std::string> tables;
  if (store.stages.empty()) return tables;
  const std::vector<AttackRow> attacks = attack_rows(store);

  if (std::any_of(store.stages.begin(), store.stages.end(), [](const StageRecord& r) { return r.kind == "train"; }))
    tables["vulnerability.csv"] = vulnerability_table(store, attacks);

  if (!attacks.empty()) {
    std::string t = join({"stage", "attack", "model", "records", "aggregate", "value"});
    for (const AttackRow& a : attacks)
      for (auto it = a.fresh.begin(); it != a.fresh.end(); ++it)
        t += join({a.stage->name, a.report.attack, model_of(*a.stage), std::to_string(a.report.records.size()),
                   it.key(), fmt(a.fresh, it.key().c_str())});
    tables["attacks.csv"] = t;
  }

  std::string poison = join({"stage", "model", "p_pos", "clean_accuracy_before", "clean_accuracy_after", "cad"});
  std::string steal = join({"stage", "model", "strategy", "query_budget", "ace", "agreement"});
  bool any_poison = false, any_steal = false;
  for (const AttackRow& a : attacks) {
    if (a.report.attack == "poisoning") {
      any_poison = true;
      poison += join({a.stage->name, model_of(*a.stage), fmt(a.report.config.value("p_pos", NAN)),
                      fmt(a.fresh, "clean_accuracy_before"), fmt(a.fresh, "clean_accuracy_after"), fmt(a.fresh, "cad")});
    } else if (a.report.attack == "knockoff") {
      any_steal = true;
      steal += join({a.stage->name, model_of(*a.stage), a.report.config.value("strategy", std::string()),
                     std::to_string(a.report.config.value("query_budget", 0L)), fmt(a.fresh, "ace"),
                     fmt(success_rate(a.report.records))});
    }
  }
  if (any_poison) tables["poisoning.csv"] = poison;
  if (any_steal) tables["knockoff.csv"] = steal;

  std::string search = join({"stage", "method", "genotype", "depth", "width_nodes", "skip_count"});
  std::string variance = join({"stage", "model_id", "phase", "mode", "samples", "dimension", "variance"});
  bool any_search = false, any_variance = false;
  for (const StageRecord& r : store.stages) {
    if (r.kind == "search") {
      any_search = true;
      const nlohmann::json res = store.result(r);
      search += join({r.name, res.value("method", std::string()), res.value("genotype", std::string()),
                      std::to_string(res.value("depth", 0)), std::to_string(res.value("width_nodes", 0)),
                      std::to_string(res.value("skip_count", 0))});
    } else if (r.kind == "diagnose" && r.config.value("diagnostic", std::string()) == "variance") {
      any_variance = true;
      const nlohmann::json rep = store.result(r).at("report");
      variance += join({r.name, rep.value("model_id", std::string()), rep.value("phase", std::string()),
                        rep.value("mode", std::string()), std::to_string(rep.value("samples", 0)),
                        std::to_string(rep.value("dimension", 0L)), fmt(rep, "variance")});
    }
  }
  if (any_search) tables["search.csv"] = search;
  if (any_variance) tables["variance.csv"] = variance;
  return tables;
}

std::vector<std::string> emit_report(const ResultStore& store) {
  std::vector<std::string> paths;
  for (const auto& [name, text] : render_tables(store)) {
    const fs::path p = fs::path(store.root) / "tables" / name;
    write_file(p, text);
    paths.push_back(p.string());
  }
  return paths;
}

std::string to_string(PlotKind k) {
  switch (k) {
    case PlotKind::contour: return "contour";
    case PlotKind::scatter: return "scatter";
    case PlotKind::histogram: return "histogram";
    case PlotKind::budget_curve: return "budget_curve";
  }
  return "contour";
}

PlotKind parse_plot_kind(const std::string& text) {
  for (PlotKind k : {PlotKind::contour, PlotKind::scatter, PlotKind::histogram, PlotKind::budget_curve})
    if (to_string(k) == text) return k;
  throw ConfigError("unknown plot kind '" + text + "' (contour, scatter, histogram, budget_curve)");
}

namespace {

constexpr double kW = 520, kH = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Minimal SVG builder with a fixed canvas and a data rectangle mapped from [x0,x1]x[y0,y1].
class Svg {
 public:
  Svg(const std::string& title, const std::string& run_id, double x0, double x1, double y0, double y1)
      : x0_(x0), x1_(x1 > x0 ? x1 : x0 + 1), y0_(y0), y1_(y1 > y0 ? y1 : y0 + 1) {
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kW) << "\" height=\"" << num(kH)
        << "\" viewBox=\"0 0 " << num(kW) << " " << num(kH) << "\">\n";
    os_ << "<metadata>run_id=" << esc(run_id) << "</metadata>\n";
    os_ << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    text(kW / 2, 22, title, "middle", 14);
    text(kW - 6, kH - 6, "run " + run_id, "end", 9);
  }
  double px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0_) / (y1_ - y0_) * (kH - kTop - kBottom); }

  void axes(const std::string& xlabel, const std::string& ylabel) {
    os_ << "<g stroke=\"black\" fill=\"none\">";
    os_ << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(kW - kLeft - kRight)
        << "\" height=\"" << num(kH - kTop - kBottom) << "\"/></g>\n";
    for (int i = 0; i <= 4; ++i) {
      const double fx = x0_ + (x1_ - x0_) * i / 4.0, fy = y0_ + (y1_ - y0_) * i / 4.0;
      text(px(fx), kH - kBottom + 16, num(fx), "middle", 10);
      text(kLeft - 6, py(fy) + 4, num(fy), "end", 10);
    }
    text((kLeft + kW - kRight) / 2, kH - 18, xlabel, "middle", 12);
    os_ << "<text x=\"16\" y=\"" << num((kTop + kH - kBottom) / 2) << "\" font-size=\"12\" text-anchor=\"middle\""
        << " transform=\"rotate(-90 16 " << num((kTop + kH - kBottom) / 2) << ")\">" << esc(ylabel) << "</text>\n";
  }
  void text(double x, double y, const std::string& s, const char* anchor, int size) {
    os_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << size << "\" text-anchor=\"" << anchor
        << "\" font-family=\"sans-serif\">" << esc(s) << "</text>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    os_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
        << "\" fill=\"" << fill << "\"/>\n";
  }
  void marker(double x, double y, int shape, const std::string& color) {
    if (shape % 3 == 0) {
      os_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"7\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"2\"/>\n";
    } else if (shape % 3 == 1) {
      os_ << "<rect x=\"" << num(x - 3.5) << "\" y=\"" << num(y - 3.5) << "\" width=\"7\" height=\"7\" fill=\"" << color
          << "\"/>\n";
    } else {
      os_ << "<path d=\"M" << num(x - 5) << " " << num(y - 5) << " L" << num(x + 5) << " " << num(y + 5) << " M"
          << num(x - 5) << " " << num(y + 5) << " L" << num(x + 5) << " " << num(y - 5) << "\" stroke=\"" << color
          << "\" stroke-width=\"2\"/>\n";
    }
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
    os_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) os_ << (i ? " " : "") << num(px(pts[i].first)) << "," << num(py(pts[i].second));
    os_ << "\"/>\n";
  }
  void legend(int row, int shape, const std::string& color, const std::string& label) {
    const double x = kW - kRight + 14, y = kTop + 12 + 18.0 * row;
    marker(x, y, shape, color);
    text(x + 12, y + 4, label, "start", 10);
  }
  std::string str() const { return os_.str() + "</svg>\n"; }

 private:
  double x0_, x1_, y0_, y1_;
  std::ostringstream os_;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string palette(std::size_t i) { return kPalette[i % (sizeof kPalette / sizeof *kPalette)]; }

/// Blue (low) to red (high).
std::string heat(double t) {
  t = std::clamp(t, 0.0, 1.0);
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(255 * t), static_cast<int>(80 + 100 * (1 - std::abs(2 * t - 1))),
                static_cast<int>(255 * (1 - t)));
  return buf;
}

std::map<std::string, PlotFile> contour_plots(const ResultStore& store) {
  std::map<std::string, PlotFile> out;
  for (const StageRecord& r : store.stages) {
    if (r.kind != "diagnose" || r.config.value("diagnostic", std::string()) != "contour") continue;
    const ContourGrid g = store.result(r).at("grid").get<ContourGrid>();
    double lo = INFINITY, hi = -INFINITY;
    for (double v : g.values)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    const double da = g.alphas.size() > 1 ? g.alphas[1] - g.alphas[0] : 1.0;
    const double db = g.betas.size() > 1 ? g.betas[1] - g.betas[0] : 1.0;
    Svg svg("Loss contour: " + r.name + " (" + to_string(g.space) + ")", store.run_id, g.alphas.front() - da / 2,
            g.alphas.back() + da / 2, g.betas.front() - db / 2, g.betas.back() + db / 2);
    for (std::size_t i = 0; i < g.alphas.size(); ++i)
      for (std::size_t j = 0; j < g.betas.size(); ++j) {
        const double v = g.at(i, j);
        const double x = svg.px(g.alphas[i] - da / 2), y = svg.py(g.betas[j] + db / 2);
        const double w = svg.px(g.alphas[i] + da / 2) - x, h = svg.py(g.betas[j] - db / 2) - y;
        svg.rect(x, y, w, h, std::isfinite(v) ? heat(hi > lo ? (v - lo) / (hi - lo) : 0.5) : "#808080");
      }
    svg.axes("alpha", "beta");
    svg.marker(svg.px(0), svg.py(0), 2, "black");
    svg.text(svg.px(0) + 8, svg.py(0) - 8, "baseline " + num(g.baseline), "start", 11);
    svg.legend(0, 1, heat(0), "low " + num(lo));
    svg.legend(1, 1, heat(1), "high " + num(hi));
    nlohmann::json vals = nlohmann::json::array();
    for (double v : g.values) vals.push_back(number(v));
    out["contour_" + r.name] = {svg.str(),
                                {{"run_id", store.run_id}, {"kind", "contour"}, {"stage", r.name},
                                 {"space", to_string(g.space)}, {"alphas", g.alphas}, {"betas", g.betas},
                                 {"values", vals}, {"baseline", number(g.baseline)}}};
  }
  return out;
}

std::map<std::string, PlotFile> scatter_plots(const ResultStore& store) {
  struct Point {
    std::string label;
    double x, y;
  };
  std::vector<Point> pts;
  for (const StageRecord& m : store.stages) {
    if (m.kind != "train") continue;
    const StageRecord* hit = nullptr;
    for (const StageRecord& a : store.stages)
      if (a.kind == "attack" && model_of(a) == m.name && a.config.value("attack", std::string()) == "evasion") {
        const bool untargeted = a.summary.value("target_mode", std::string("untargeted")) == "untargeted";
        if (!hit || untargeted) hit = &a;
      }
    if (!hit || !m.summary.contains("test_accuracy")) continue;
    const AttackReport rep = store.report(*hit);
    pts.push_back({m.name, m.summary.at("test_accuracy").get<double>(), recompute_aggregates(rep).value("asr", NAN)});
  }
  std::map<std::string, PlotFile> out;
  if (pts.empty()) return out;
  Svg svg("Clean accuracy vs attack success", store.run_id, 0, 1, 0, 1);
  svg.axes("clean accuracy", "ASR");
  nlohmann::json side = nlohmann::json::array();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    svg.marker(svg.px(pts[i].x), svg.py(pts[i].y), static_cast<int>(i), palette(i));
    svg.legend(static_cast<int>(i), static_cast<int>(i), palette(i), pts[i].label);
    side.push_back({{"label", pts[i].label}, {"x", number(pts[i].x)}, {"y", number(pts[i].y)}});
  }
  out["scatter"] = {svg.str(), {{"run_id", store.run_id}, {"kind", "scatter"}, {"points", side}}};
  return out;
}

std::map<std::string, PlotFile> histogram_plots(const ResultStore& store) {
  std::map<std::string, PlotFile> out;
  for (const StageRecord& r : store.stages) {
    if (r.kind != "diagnose" || r.config.value("diagnostic", std::string()) != "overlap") continue;
    const nlohmann::json h = store.result(r).at("histogram");
    std::vector<std::string> labels{"0"};
    std::vector<int> heights{h.at("none").get<int>()};
    const std::vector<int> counts = h.at("counts").get<std::vector<int>>();
    for (std::size_t k = 0; k < counts.size(); ++k) {
      labels.push_back(std::to_string(k + 1));
      heights.push_back(counts[k]);
    }
    const int top = std::max(1, *std::max_element(heights.begin(), heights.end()));
    Svg svg("Vulnerability overlap: " + r.name, store.run_id, -0.5, static_cast<double>(heights.size()) - 0.5, 0, top);
    for (std::size_t i = 0; i < heights.size(); ++i) {
      const double x = svg.px(static_cast<double>(i) - 0.35), w = svg.px(static_cast<double>(i) + 0.35) - x;
      const double y = svg.py(heights[i]);
      svg.rect(x, y, w, svg.py(0) - y, palette(0));
      svg.text(x + w / 2, y - 4, std::to_string(heights[i]), "middle", 10);
    }
    svg.axes("models attacked successfully", "inputs");
    out["histogram_" + r.name] = {svg.str(),
                                  {{"run_id", store.run_id}, {"kind", "histogram"}, {"stage", r.name},
                                   {"labels", labels}, {"counts", counts}, {"none", h.at("none")}}};
  }
  return out;
}

std::map<std::string, PlotFile> budget_plots(const ResultStore& store) {
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const StageRecord& a : store.stages) {
    if (a.kind != "attack" || a.config.value("attack", std::string()) != "knockoff") continue;
    const AttackReport rep = store.report(a);
    const std::string name = model_of(a) + " / " + rep.config.value("strategy", std::string());
    series[name].emplace_back(rep.config.value("query_budget", 0.0), recompute_aggregates(rep).value("ace", NAN));
  }
  std::map<std::string, PlotFile> out;
  if (series.empty()) return out;
  double xmax = 1, ymax = 0;
  for (auto& [name, pts] : series) {
    std::stable_sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.first < b.first; });
    for (auto [x, y] : pts) xmax = std::max(xmax, x), ymax = std::max(ymax, std::isfinite(y) ? y : 0.0);
  }
  Svg svg("Extraction ACE vs query budget", store.run_id, 0, xmax, 0, ymax > 0 ? ymax * 1.1 : 1);
  svg.axes("queries", "ACE");
  nlohmann::json side = nlohmann::json::array();
  int i = 0;
  for (const auto& [name, pts] : series) {
    svg.polyline(pts, palette(static_cast<std::size_t>(i)));
    for (auto [x, y] : pts) svg.marker(svg.px(x), svg.py(y), i, palette(static_cast<std::size_t>(i)));
    svg.legend(i, i, palette(static_cast<std::size_t>(i)), name);
    nlohmann::json xs = nlohmann::json::array(), ys = nlohmann::json::array();
    for (auto [x, y] : pts) xs.push_back(x), ys.push_back(number(y));
    side.push_back({{"label", name}, {"budget", xs}, {"ace", ys}});
    ++i;
  }
  out["budget_curve"] = {svg.str(), {{"run_id", store.run_id}, {"kind", "budget_curve"}, {"series", side}}};
  return out;
}

}  // namespace

std::map<std::string, PlotFile> render_plots(const ResultStore& store, PlotKind kind) {
  switch (kind) {
    case PlotKind::contour: return contour_plots(store);
    case PlotKind::scatter: return scatter_plots(store);
    case PlotKind::histogram: return histogram_plots(store);
    case PlotKind::budget_curve: return budget_plots(store);
  }
  return {};
}

std::vector<std::string> emit_plots(const ResultStore& store, PlotKind kind) {
  std::vector<std::string> paths;
  for (const auto& [stem, plot] : render_plots(store, kind)) {
    const fs::path dir = fs::path(store.root) / "plots";
    write_file(dir / (stem + ".svg"), plot.svg);
    write_file(dir / (stem + ".json"), plot.sidecar.dump(1) + "\n");
    paths.push_back((dir / (stem + ".svg")).string());
  }
  return paths;
}

VerifyResult verify_store(const ResultStore& store) {
  VerifyResult v;
  auto problem = [&](const std::string& p) {
    v.ok = false;
    v.problems.push_back(p);
  };
  for (const StageRecord& r : store.stages) {
    for (const auto& [file, hash] : r.outputs) {
      ++v.checked;
      const std::string p = store.path(r, file);
      if (!fs::exists(p)) {
        problem(r.name + ": missing artifact " + file);
      } else if (sha256_file(p) != hash) {
        problem(r.name + ": artifact " + file + " does not match its recorded hash");
      }
    }
  }
  if (!v.ok) return v;

  for (const StageRecord& r : store.stages) {
    if (r.kind == "attack") {
      ++v.checked;
      const AttackReport rep = store.report(r);
      for (const std::string& key : aggregate_mismatches(rep))
        problem(r.name + ": aggregate '" + key + "' differs from its recomputation");
      if (r.summary.contains("aggregates") && r.summary.at("aggregates") != rep.aggregates)
        problem(r.name + ": manifest summary disagrees with the stored report");
    } else if (r.kind == "diagnose" && r.config.value("diagnostic", std::string()) == "overlap") {
      ++v.checked;
      std::vector<AttackReport> reps;
      for (const auto& name : r.config.at("reports")) {
        const StageRecord* a = store.find(name.get<std::string>());
        if (!a) {
          problem(r.name + ": referenced stage " + name.get<std::string>() + " is absent");
          continue;
        }
        reps.push_back(store.report(*a));
      }
      if (reps.size() == r.config.at("reports").size() &&
          nlohmann::json(vulnerability_overlap(reps)) != store.result(r).at("histogram"))
        problem(r.name + ": overlap histogram differs from its recomputation");
    }
  }

  const fs::path tables = fs::path(store.root) / "tables";
  const auto rendered = render_tables(store);
  if (fs::exists(tables)) {
    for (const auto& [name, text] : rendered) {
      ++v.checked;
      if (!fs::exists(tables / name))
        problem("table " + name + " was not emitted");
      else if (read_file(tables / name) != text)
        problem("table " + name + " differs from the records");
    }
    for (const auto& e : fs::directory_iterator(tables))
      if (!rendered.count(e.path().filename().string()))
        problem("table " + e.path().filename().string() + " has no backing records");
  }

  const fs::path plots = fs::path(store.root) / "plots";
  if (fs::exists(plots)) {
    std::set<std::string> known;
    for (PlotKind k : {PlotKind::contour, PlotKind::scatter, PlotKind::histogram, PlotKind::budget_curve})
      for (const auto& [stem, plot] : render_plots(store, k)) {
        known.insert(stem + ".svg");
        known.insert(stem + ".json");
        if (!fs::exists(plots / (stem + ".json"))) continue;
        ++v.checked;
        if (read_file(plots / (stem + ".json")) != plot.sidecar.dump(1) + "\n")
          problem("plot sidecar " + stem + ".json differs from the records");
        if (!fs::exists(plots / (stem + ".svg")) || read_file(plots / (stem + ".svg")) != plot.svg)
          problem("plot " + stem + ".svg differs from the records");
      }
    for (const auto& e : fs::directory_iterator(plots))
      if (!known.count(e.path().filename().string()))
        problem("plot file " + e.path().filename().string() + " has no backing records");
  }
  return v;
}

}  // namespace naslab
