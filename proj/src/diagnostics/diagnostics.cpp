#include "naslab/diagnostics/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "naslab/core/error.hpp"

namespace naslab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_double(const std::string& s) {
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + s + "'", 0);
  }
  if (used != s.size()) throw ParseError("trailing characters in number '" + s + "'", used);
  return v;
}

nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  return fmt(v);
}

double from_json_number(const nlohmann::json& j) { return j.is_string() ? parse_double(j.get<std::string>()) : j.get<double>(); }

// Cross-entropy of every row, summed: rows stay independent in eval mode.
Var summed_ce(const Var& logits, std::span<const int> labels) {
  return scale(cross_entropy(logits, labels), static_cast<double>(labels.size()));
}

}  // namespace

std::string to_string(ContourSpace s) { return s == ContourSpace::parameter ? "parameter" : "input"; }

ContourSpace parse_contour_space(const std::string& text) {
  if (text == "parameter") return ContourSpace::parameter;
  if (text == "input") return ContourSpace::input;
  throw ConfigError("unknown contour space '" + text + "'");
}

void ContourSpec::validate() const {
  if (resolution < 2) throw ConfigError("contour resolution must be >= 2");
  if (!(alpha_max > alpha_min) || !(beta_max > beta_min)) throw ConfigError("contour ranges must be increasing");
  if (max_samples < 1) throw ConfigError("max_samples must be >= 1");
}

void to_json(nlohmann::json& j, const ContourSpec& s) {
  j = {{"space", to_string(s.space)}, {"resolution", s.resolution}, {"alpha_range", {s.alpha_min, s.alpha_max}},
       {"beta_range", {s.beta_min, s.beta_max}}, {"seed_d1", s.seed_d1}, {"seed_d2", s.seed_d2},
       {"max_samples", s.max_samples}};
}

void from_json(const nlohmann::json& j, ContourSpec& s) {
  if (j.contains("space")) s.space = parse_contour_space(j.at("space").get<std::string>());
  s.resolution = j.value("resolution", s.resolution);
  if (j.contains("alpha_range")) {
    s.alpha_min = j.at("alpha_range").at(0).get<double>();
    s.alpha_max = j.at("alpha_range").at(1).get<double>();
  }
  if (j.contains("beta_range")) {
    s.beta_min = j.at("beta_range").at(0).get<double>();
    s.beta_max = j.at("beta_range").at(1).get<double>();
  }
  s.seed_d1 = j.value("seed_d1", s.seed_d1);
  s.seed_d2 = j.value("seed_d2", s.seed_d2);
  s.max_samples = j.value("max_samples", s.max_samples);
}

void to_json(nlohmann::json& j, const ContourGrid& g) {
  nlohmann::json vals = nlohmann::json::array();
  for (double v : g.values) vals.push_back(json_number(v));
  j = {{"space", to_string(g.space)}, {"alphas", g.alphas},   {"betas", g.betas},
       {"seed_d1", g.seed_d1},        {"seed_d2", g.seed_d2}, {"values", vals},
       {"baseline", json_number(g.baseline)}, {"direction_cosine", g.direction_cosine}, {"model_id", g.model_id}};
}

void from_json(const nlohmann::json& j, ContourGrid& g) {
  g.space = parse_contour_space(j.at("space").get<std::string>());
  g.alphas = j.at("alphas").get<std::vector<double>>();
  g.betas = j.at("betas").get<std::vector<double>>();
  g.seed_d1 = j.value("seed_d1", g.seed_d1);
  g.seed_d2 = j.value("seed_d2", g.seed_d2);
  g.values.clear();
  for (const auto& v : j.at("values")) g.values.push_back(from_json_number(v));
  g.baseline = from_json_number(j.at("baseline"));
  g.direction_cosine = j.value("direction_cosine", 0.0);
  g.model_id = j.value("model_id", std::string());
  if (g.values.size() != g.alphas.size() * g.betas.size()) throw ParseError("contour value count does not match the axes", 0);
}

std::string contour_to_csv(const ContourGrid& g) {
  std::ostringstream os;
  os << "alpha\\beta";
  for (double b : g.betas) os << ',' << fmt(b);
  os << '\n';
  for (std::size_t i = 0; i < g.alphas.size(); ++i) {
    os << fmt(g.alphas[i]);
    for (std::size_t j = 0; j < g.betas.size(); ++j) os << ',' << fmt(g.at(i, j));
    os << '\n';
  }
  return os.str();
}

ContourGrid contour_from_csv(const std::string& text) {
  ContourGrid g;
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  if (!std::getline(in, line)) throw ParseError("empty contour CSV", 0);
  std::vector<std::string> head = split(line);
  if (head.empty() || head[0] != "alpha\\beta") throw ParseError("contour CSV header must start with alpha\\beta", 0);
  for (std::size_t k = 1; k < head.size(); ++k) g.betas.push_back(parse_double(head[k]));
  offset += line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells = split(line);
    if (cells.size() != g.betas.size() + 1) throw ParseError("contour CSV row has the wrong width", offset);
    g.alphas.push_back(parse_double(cells[0]));
    for (std::size_t k = 1; k < cells.size(); ++k) g.values.push_back(parse_double(cells[k]));
    offset += line.size() + 1;
  }
  return g;
}

std::vector<double> grid_axis(double lo, double hi, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  return out;
}

ContourGrid loss_contour(const FlatLoss& loss, std::span<const double> center, std::span<const double> d1,
                         std::span<const double> d2, const ContourSpec& spec) {
  spec.validate();
  if (d1.size() != center.size() || d2.size() != center.size()) throw InputError("direction length mismatch");
  ContourGrid g;
  g.space = spec.space;
  g.alphas = grid_axis(spec.alpha_min, spec.alpha_max, spec.resolution);
  g.betas = grid_axis(spec.beta_min, spec.beta_max, spec.resolution);
  g.seed_d1 = spec.seed_d1;
  g.seed_d2 = spec.seed_d2;
  const double n1 = l2_norm(d1), n2 = l2_norm(d2);
  g.direction_cosine = n1 > 0.0 && n2 > 0.0 ? dot(d1, d2) / (n1 * n2) : 0.0;
  auto finite_or_inf = [](double v) { return std::isfinite(v) ? v : kInf; };
  g.baseline = finite_or_inf(loss(center));
  g.values.resize(g.alphas.size() * g.betas.size());
  std::vector<double> point(center.size());
  for (std::size_t i = 0; i < g.alphas.size(); ++i) {
    for (std::size_t j = 0; j < g.betas.size(); ++j) {
      const double a = g.alphas[i], b = g.betas[j];
      double v;
      if (a == 0.0 && b == 0.0) {
        v = g.baseline;
      } else {
        for (std::size_t k = 0; k < point.size(); ++k) point[k] = center[k] + a * d1[k] + b * d2[k];
        v = finite_or_inf(loss(point));
      }
      g.values[i * g.betas.size() + j] = v;
    }
  }
  return g;
}

std::pair<std::vector<double>, std::vector<double>> orthonormal_directions(std::size_t dim, std::uint64_t seed1,
                                                                           std::uint64_t seed2) {
  if (dim < 2) throw InputError("two orthogonal directions need at least two dimensions");
  Rng r1(seed1), r2(seed2);
  std::vector<double> d1(dim), d2(dim);
  for (double& v : d1) v = r1.normal();
  for (double& v : d2) v = r2.normal();
  const double n1 = l2_norm(d1);
  for (double& v : d1) v /= n1;
  axpy(-dot(d1, d2), d1, d2);
  // A second pass removes the rounding left by the first.
  axpy(-dot(d1, d2), d1, d2);
  const double n2 = l2_norm(d2);
  for (double& v : d2) v /= n2;
  return {std::move(d1), std::move(d2)};
}

std::pair<std::vector<double>, std::vector<double>> filter_normalized_directions(const ParamStore& store,
                                                                                 std::uint64_t seed1,
                                                                                 std::uint64_t seed2) {
  Rng r1(seed1), r2(seed2);
  const std::size_t total = store.num_scalars();
  std::vector<double> d1(total, 0.0), d2(total, 0.0);
  std::size_t off = 0;
  for (const Param& p : store.params()) {
    const std::size_t size = p.value.size();
    const bool weight = p.role == ParamRole::conv_weight || p.role == ParamRole::linear_weight;
    if (weight && p.value.rank() >= 2) {
      const std::size_t rows = static_cast<std::size_t>(p.value.dim(0)), len = size / rows;
      for (std::size_t r = 0; r < rows; ++r) {
        std::span<const double> w(p.value.data() + r * len, len);
        std::span<double> a(d1.data() + off + r * len, len), b(d2.data() + off + r * len, len);
        for (double& v : a) v = r1.normal();
        for (double& v : b) v = r2.normal();
        const double wn = l2_norm(w);
        const double an = l2_norm(a);
        for (double& v : a) v *= wn / an;
        if (len > 1 && wn > 0.0) {
          const double aa = dot(a, a);
          axpy(-dot(a, b) / aa, a, b);
          axpy(-dot(a, b) / aa, a, b);
          const double bn = l2_norm(b);
          for (double& v : b) v *= wn / bn;
        } else {
          std::fill(b.begin(), b.end(), 0.0);
        }
      }
    }
    off += size;
  }
  return {std::move(d1), std::move(d2)};
}

ContourGrid parameter_contour(const Model& model, const Dataset& data, const ContourSpec& spec) {
  data.validate();
  const Dataset sample = data.slice(0, std::min(spec.max_samples, data.size()));
  std::unique_ptr<Model> work = model.clone();
  FlatLoss loss = [&](std::span<const double> theta) {
    work->store().set_flat(theta);
    Tape tape;
    ForwardContext ctx = bind(tape, static_cast<const Model&>(*work), Mode::eval);
    return cross_entropy(work->forward(ctx, tape.constant(sample.images)).logits, sample.labels).value()[0];
  };
  const std::vector<double> center = model.store().flat();
  auto [d1, d2] = filter_normalized_directions(model.store(), spec.seed_d1, spec.seed_d2);
  ContourSpec s = spec;
  s.space = ContourSpace::parameter;
  ContourGrid g = loss_contour(loss, center, d1, d2, s);
  g.model_id = model.describe();
  return g;
}

ContourGrid input_contour(const Model& model, const Tensor& x, int label, const ContourSpec& spec) {
  if (x.rank() != 4 || x.dim(0) != 1) throw InputError("input_contour expects one [1, C, H, W] input");
  const int labels[1] = {label};
  FlatLoss loss = [&](std::span<const double> p) {
    Tape tape;
    ForwardContext ctx = bind(tape, model, Mode::eval);
    Tensor xin(x.shape(), std::vector<double>(p.begin(), p.end()));
    return cross_entropy(model.forward(ctx, tape.constant(std::move(xin))).logits, labels).value()[0];
  };
  auto [d1, d2] = orthonormal_directions(x.size(), spec.seed_d1, spec.seed_d2);
  ContourSpec s = spec;
  s.space = ContourSpace::input;
  ContourGrid g = loss_contour(loss, x.values(), d1, d2, s);
  g.model_id = model.describe();
  return g;
}

void to_json(nlohmann::json& j, const VarianceReport& r) {
  j = {{"model_id", r.model_id}, {"phase", r.phase}, {"variance", r.variance}, {"samples", r.samples},
       {"dimension", r.dimension}, {"granularity", "per_input"},
       {"mode", r.mode == Mode::train ? "train" : "eval"}};
}

void from_json(const nlohmann::json& j, VarianceReport& r) {
  r.model_id = j.value("model_id", std::string());
  r.phase = j.value("phase", std::string());
  r.variance = j.at("variance").get<double>();
  r.samples = j.value("samples", 0);
  r.dimension = j.value("dimension", std::size_t{0});
  r.mode = j.value("mode", std::string("train")) == "eval" ? Mode::eval : Mode::train;
}

double gradient_variance(const std::vector<std::vector<double>>& grads) {
  if (grads.empty()) throw InputError("gradient variance needs at least one sample");
  const std::size_t dim = grads.front().size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& g : grads) {
    if (g.size() != dim) throw InputError("gradient vectors differ in length");
    axpy(1.0, g, mean);
  }
  for (double& v : mean) v /= static_cast<double>(grads.size());
  double total = 0.0;
  for (const auto& g : grads) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += (g[k] - mean[k]) * (g[k] - mean[k]);
    total += s;
  }
  return total / static_cast<double>(grads.size());
}

VarianceReport gradient_variance(const Model& model, const Dataset& sample, const std::string& phase, Mode mode) {
  sample.validate();
  if (sample.size() == 0) throw InputError("gradient variance needs a non-empty sample");
  std::unique_ptr<Model> work = model.clone();
  std::vector<std::vector<double>> grads;
  grads.reserve(static_cast<std::size_t>(sample.size()));
  for (int i = 0; i < sample.size(); ++i) {
    Dataset one = sample.slice(i, 1);
    LossGrad lg = loss_and_grads(*work, one.images, one.labels, mode, false);
    std::vector<double> flat;
    for (const Tensor& g : lg.grads) flat.insert(flat.end(), g.values().begin(), g.values().end());
    grads.push_back(std::move(flat));
  }
  VarianceReport r;
  r.model_id = model.describe();
  r.phase = phase;
  r.variance = gradient_variance(grads);
  r.samples = sample.size();
  r.dimension = grads.front().size();
  r.mode = mode;
  return r;
}

double lipschitz_estimate(const FlatGrad& grad, const std::vector<std::vector<double>>& points, double radius,
                          int pairs_per_point, std::uint64_t seed) {
  if (!(radius > 0.0) || pairs_per_point < 1) throw ConfigError("lipschitz probe needs radius > 0 and pairs >= 1");
  Rng rng(seed);
  double best = 0.0;
  for (const auto& p : points) {
    const std::vector<double> g0 = grad(p);
    for (int k = 0; k < pairs_per_point; ++k) {
      std::vector<double> u(p.size());
      for (double& v : u) v = rng.normal();
      const double un = l2_norm(u);
      std::vector<double> q = p;
      for (std::size_t i = 0; i < q.size(); ++i) q[i] += radius * u[i] / un;
      const std::vector<double> g1 = grad(q);
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < g0.size(); ++i) num += (g1[i] - g0[i]) * (g1[i] - g0[i]);
      for (std::size_t i = 0; i < q.size(); ++i) den += (q[i] - p[i]) * (q[i] - p[i]);
      if (den > 0.0) best = std::max(best, std::sqrt(num / den));
    }
  }
  return best;
}

void weight_normalize_rows(Tensor& a) {
  if (a.rank() < 2) throw InputError("weight normalization needs a matrix");
  const std::size_t rows = static_cast<std::size_t>(a.dim(0)), len = a.size() / rows;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = a.data() + r * len;
    double mean = 0.0;
    for (std::size_t k = 0; k < len; ++k) mean += row[k];
    mean /= static_cast<double>(len);
    double ss = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      row[k] -= mean;
      ss += row[k] * row[k];
    }
    const double n = std::sqrt(ss);
    if (n > 0.0)
      for (std::size_t k = 0; k < len; ++k) row[k] /= n;
  }
}

RowNormReport row_norm_report(const Tensor& a) {
  if (a.rank() < 2) throw InputError("row norms need a matrix");
  const std::size_t rows = static_cast<std::size_t>(a.dim(0)), len = a.size() / rows;
  RowNormReport r;
  r.n = static_cast<int>(len);
  r.sqrt_n = std::sqrt(static_cast<double>(len));
  r.inv_sqrt_n = 1.0 / r.sqrt_n;
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < len; ++k) s += std::abs(a[i * len + k]);
    r.max_row_l1 = std::max(r.max_row_l1, s);
  }
  r.exceeds_inv_sqrt_n = r.max_row_l1 > r.inv_sqrt_n;
  return r;
}

void to_json(nlohmann::json& j, const LipschitzReport& r) {
  j = {{"input_lipschitz", r.input_lipschitz},
       {"param_lipschitz", r.param_lipschitz},
       {"param_space", r.param_space},
       {"input_dim", r.input_dim},
       {"ratio", r.ratio},
       {"claimed_ratio", r.claimed_ratio},
       {"ratio_exceeds_claim", r.ratio_exceeds_claim},
       {"first_layer",
        {{"max_row_l1", r.first_layer.max_row_l1},
         {"n", r.first_layer.n},
         {"sqrt_n", r.first_layer.sqrt_n},
         {"inv_sqrt_n", r.first_layer.inv_sqrt_n},
         {"exceeds_inv_sqrt_n", r.first_layer.exceeds_inv_sqrt_n}}}};
}

LipschitzReport input_lipschitz_probe(const Model& model, const Tensor& x, std::span<const int> labels,
                                      const LipschitzProbeConfig& config) {
  if (x.rank() != 4 || x.dim(0) != static_cast<int>(labels.size())) throw InputError("one label per input expected");
  std::unique_ptr<Model> work = model.clone();
  std::vector<Param>& params = work->store().params();
  if (params.empty()) throw ConfigError("model has no parameters");
  weight_normalize_rows(params.front().value);

  LipschitzReport rep;
  rep.first_layer = row_norm_report(params.front().value);
  const std::size_t dim = x.size() / static_cast<std::size_t>(x.dim(0));
  rep.input_dim = static_cast<int>(dim);
  Shape one = x.shape();
  one[0] = 1;

  std::vector<std::vector<double>> inputs;
  for (int i = 0; i < x.dim(0); ++i)
    inputs.emplace_back(x.data() + static_cast<std::size_t>(i) * dim, x.data() + static_cast<std::size_t>(i + 1) * dim);
  double input_l = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const int lab[1] = {labels[i]};
    FlatGrad g = [&](std::span<const double> p) {
      Tensor xin(one, std::vector<double>(p.begin(), p.end()));
      Tensor gr = input_gradient(*work, xin, [&](const Var& logits) { return summed_ce(logits, lab); });
      return std::vector<double>(gr.values().begin(), gr.values().end());
    };
    input_l = std::max(input_l, lipschitz_estimate(g, {inputs[i]}, config.radius, config.pairs_per_point,
                                                   config.seed + static_cast<std::uint64_t>(i)));
  }
  rep.input_lipschitz = input_l;

  // Parameter side: the first layer's bias when present, else every parameter.
  int bias_index = -1;
  if (params.size() > 1 && params[1].role == ParamRole::bias && params[1].value.dim(0) == params[0].value.dim(0))
    bias_index = 1;
  rep.param_space = bias_index >= 0 ? "first_layer_bias" : "all";
  const std::vector<double> theta = work->store().flat();
  std::size_t b_off = 0, b_len = theta.size();
  if (bias_index >= 0) {
    b_off = params[0].value.size();
    b_len = params[1].value.size();
  }
  FlatGrad pg = [&](std::span<const double> p) {
    std::vector<double> full = theta;
    std::copy(p.begin(), p.end(), full.begin() + static_cast<std::ptrdiff_t>(b_off));
    work->store().set_flat(full);
    LossGrad lg = loss_and_grads(*work, x, labels, Mode::eval, false);
    std::vector<double> flat;
    for (const Tensor& t : lg.grads) flat.insert(flat.end(), t.values().begin(), t.values().end());
    return std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(b_off),
                               flat.begin() + static_cast<std::ptrdiff_t>(b_off + b_len));
  };
  const std::vector<double> start(theta.begin() + static_cast<std::ptrdiff_t>(b_off),
                                  theta.begin() + static_cast<std::ptrdiff_t>(b_off + b_len));
  rep.param_lipschitz = lipschitz_estimate(pg, {start}, config.radius, config.pairs_per_point, config.seed ^ 0x5bd1e995ULL);
  work->store().set_flat(theta);

  rep.claimed_ratio = 1.0 / std::sqrt(static_cast<double>(dim));
  rep.ratio = rep.param_lipschitz > 0.0 ? rep.input_lipschitz / rep.param_lipschitz : 0.0;
  rep.ratio_exceeds_claim = rep.ratio > rep.claimed_ratio;
  return rep;
}

void ConvergenceProbeConfig::validate() const {
  if (!(lipschitz > 0.0)) throw ConfigError("Lipschitz constant must be > 0");
  if (!(min_curvature > 0.0 && min_curvature <= lipschitz)) throw ConfigError("min_curvature must lie in (0, L]");
  if (dimension < 1) throw ConfigError("dimension must be >= 1");
  if (!(sigma2 >= 0.0)) throw ConfigError("sigma2 must be >= 0");
  if (step_sizes.empty()) throw ConfigError("at least one step is required");
  for (double a : step_sizes)
    if (!(2.0 * a - lipschitz * a * a > 0.0)) throw ConfigError("every step needs 2 a - L a^2 > 0");
  if (trials < 2) throw ConfigError("trials must be >= 2");
}

void to_json(nlohmann::json& j, const ConvergenceProbeResult& r) {
  j = {{"empirical_gap", r.empirical_gap}, {"standard_error", r.standard_error}, {"bound", r.bound},
       {"within_bound", r.within_bound}};
}

double convergence_bound(double lipschitz, double sigma2, std::span<const double> steps, double initial_distance) {
  double num = initial_distance * initial_distance, den = 0.0;
  for (double a : steps) {
    num += sigma2 * a * a;
    den += 2.0 * a - lipschitz * a * a;
  }
  return num / den;
}

ConvergenceProbeResult convergence_gap_probe(const ConvergenceProbeConfig& config) {
  config.validate();
  const int d = config.dimension;
  std::vector<double> h(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k)
    h[static_cast<std::size_t>(k)] =
        d == 1 ? config.lipschitz
               : config.min_curvature + (config.lipschitz - config.min_curvature) * k / (d - 1);
  std::vector<double> weights;
  for (double a : config.step_sizes) weights.push_back(2.0 * a - config.lipschitz * a * a);

  Rng rng(config.seed);
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  const double noise_sd = std::sqrt(config.sigma2 / d);
  double sum = 0.0, sum2 = 0.0;
  std::vector<double> theta(static_cast<std::size_t>(d));
  for (int trial = 0; trial < config.trials; ++trial) {
    // theta* = 0; theta0 is a uniformly random direction at the requested distance.
    double n = 0.0;
    for (double& v : theta) {
      v = rng.normal();
      n += v * v;
    }
    n = std::sqrt(n);
    for (double& v : theta) v *= config.initial_distance / n;
    const int t_bar = pick(rng.engine());
    for (int t = 0; t <= t_bar; ++t) {
      const double a = config.step_sizes[static_cast<std::size_t>(t)];
      for (int k = 0; k < d; ++k) {
        const double g = h[static_cast<std::size_t>(k)] * theta[static_cast<std::size_t>(k)] +
                         (noise_sd > 0.0 ? rng.normal(0.0, noise_sd) : 0.0);
        theta[static_cast<std::size_t>(k)] -= a * g;
      }
    }
    double gap = 0.0;
    for (int k = 0; k < d; ++k)
      gap += 0.5 * h[static_cast<std::size_t>(k)] * theta[static_cast<std::size_t>(k)] * theta[static_cast<std::size_t>(k)];
    sum += gap;
    sum2 += gap * gap;
  }
  ConvergenceProbeResult r;
  const double m = static_cast<double>(config.trials);
  r.empirical_gap = sum / m;
  r.standard_error = std::sqrt(std::max(0.0, sum2 / m - r.empirical_gap * r.empirical_gap) / (m - 1.0));
  r.bound = convergence_bound(config.lipschitz, config.sigma2, config.step_sizes, config.initial_distance);
  r.within_bound = r.empirical_gap - config.z * r.standard_error <= r.bound;
  return r;
}

void to_json(nlohmann::json& j, const OverlapHistogram& h) { j = {{"counts", h.counts}, {"none", h.none}}; }

OverlapHistogram vulnerability_overlap(const std::vector<AttackReport>& reports) {
  if (reports.empty()) throw InputError("overlap needs at least one report");
  std::map<int, int> hits;
  std::set<int> ids;
  for (std::size_t m = 0; m < reports.size(); ++m) {
    std::set<int> mine;
    for (const AttackRecord& r : reports[m].records) {
      if (!mine.insert(r.input_id).second) throw InputError("duplicate input id in report " + std::to_string(m));
      if (r.success) ++hits[r.input_id];
    }
    if (m == 0)
      ids = mine;
    else if (mine != ids)
      throw InputError("reports do not cover the same inputs");
  }
  OverlapHistogram h;
  h.counts.assign(reports.size(), 0);
  for (int id : ids) {
    auto it = hits.find(id);
    const int k = it == hits.end() ? 0 : it->second;
    if (k == 0)
      ++h.none;
    else
      ++h.counts[static_cast<std::size_t>(k - 1)];
  }
  return h;
}

namespace {

double rate(const std::vector<AttackRecord>& recs, const std::string& group) {
  double total = 0.0, hit = 0.0;
  for (const AttackRecord& r : recs) {
    if (!group.empty() && r.group != group) continue;
    total += 1.0;
    if (r.success) hit += 1.0;
  }
  return total > 0.0 ? hit / total : 0.0;
}

// Mann-Whitney U from midranks of the pooled sample.
double rank_auc(std::vector<double> mem, std::vector<double> non) {
  std::vector<std::pair<double, bool>> pooled;
  for (double v : mem) pooled.emplace_back(v, true);
  for (double v : non) pooled.emplace_back(v, false);
  std::sort(pooled.begin(), pooled.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double member_ranks = 0.0;
  std::size_t i = 0;
  while (i < pooled.size()) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (pooled[k].second) member_ranks += mid;
    i = j;
  }
  const double nm = static_cast<double>(mem.size()), nn = static_cast<double>(non.size());
  return (member_ranks - nm * (nm + 1.0) / 2.0) / (nm * nn);
}

}  // namespace

nlohmann::json recompute_aggregates(const AttackReport& report) {
  nlohmann::json agg = nlohmann::json::object();
  const auto& recs = report.records;
  agg["count"] = recs.size();
  const std::string& a = report.attack;
  if (a == "evasion" || a == "nes") {
    agg["asr"] = rate(recs, "");
  } else if (a == "backdoor" || a == "poisoning") {
    double n = 0.0, before = 0.0, after = 0.0;
    for (const AttackRecord& r : recs) {
      if (r.group != "clean") continue;
      n += 1.0;
      before += r.aux;
      if (r.success) after += 1.0;
    }
    if (a == "backdoor") agg["asr"] = rate(recs, "trigger");
    if (n > 0.0) {
      agg["clean_accuracy_before"] = before / n;
      agg["clean_accuracy_after"] = after / n;
      agg["cad"] = before / n - after / n;
    }
  } else if (a == "membership") {
    std::vector<double> mem, non;
    int dropped = 0;
    for (const AttackRecord& r : recs) {
      if (!std::isfinite(r.aux)) {
        ++dropped;
      } else if (r.group == "member") {
        mem.push_back(r.aux);
      } else {
        non.push_back(r.aux);
      }
    }
    agg["excluded_infinite"] = dropped;
    if (!mem.empty() && !non.empty()) agg["auc"] = rank_auc(mem, non);
  } else if (a == "knockoff") {
    double s = 0.0;
    for (const AttackRecord& r : recs) s += r.aux;
    agg["ace"] = recs.empty() ? 0.0 : s / static_cast<double>(recs.size());
  } else {
    throw ConfigError("cannot recompute aggregates for attack '" + a + "'");
  }
  return agg;
}

std::vector<std::string> aggregate_mismatches(const AttackReport& report) {
  const nlohmann::json fresh = recompute_aggregates(report);
  std::vector<std::string> bad;
  for (auto it = fresh.begin(); it != fresh.end(); ++it) {
    if (!report.aggregates.contains(it.key())) {
      bad.push_back(it.key());
      continue;
    }
    const nlohmann::json& stored = report.aggregates.at(it.key());
    if (it->is_number() && stored.is_number()) {
      if (it->get<double>() != stored.get<double>()) bad.push_back(it.key());
    } else if (*it != stored) {
      bad.push_back(it.key());
    }
  }
  for (auto it = report.aggregates.begin(); it != report.aggregates.end(); ++it)
    if (!fresh.contains(it.key())) bad.push_back(it.key());
  return bad;
}

}  // namespace naslab
