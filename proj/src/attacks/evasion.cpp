#include "naslab/attacks/evasion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "naslab/core/error.hpp"

namespace naslab {

void EvasionConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  if (!(alpha >= 0.0 && alpha <= epsilon))
    throw ConfigError("step alpha must lie in [0, epsilon]");
  if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (restarts < 1) throw ConfigError("restarts must be >= 1");
}

EvasionConfig EvasionConfig::most_likely() {
  EvasionConfig c;
  c.max_iters = 3;
  c.target_mode = TargetMode::most_likely;
  return c;
}

EvasionConfig EvasionConfig::least_likely() {
  EvasionConfig c;
  c.max_iters = 7;
  c.target_mode = TargetMode::least_likely;
  return c;
}

std::string to_string(TargetMode mode) {
  switch (mode) {
    case TargetMode::untargeted: return "untargeted";
    case TargetMode::most_likely: return "most_likely";
    case TargetMode::least_likely: return "least_likely";
  }
  return "untargeted";
}

TargetMode parse_target_mode(const std::string& text) {
  if (text == "untargeted") return TargetMode::untargeted;
  if (text == "most_likely" || text == "M") return TargetMode::most_likely;
  if (text == "least_likely" || text == "L") return TargetMode::least_likely;
  throw ConfigError("unknown target mode '" + text + "'");
}

void to_json(nlohmann::json& j, const EvasionConfig& c) {
  j = {{"epsilon", c.epsilon},     {"alpha", c.alpha},
       {"max_iters", c.max_iters}, {"restarts", c.restarts},
       {"target_mode", to_string(c.target_mode)}, {"stop_on_success", c.stop_on_success},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EvasionConfig& c) {
  if (j.contains("target_mode")) {
    c.target_mode = parse_target_mode(j.at("target_mode").get<std::string>());
    if (!j.contains("max_iters")) c.max_iters = c.target_mode == TargetMode::most_likely ? 3 : 7;
  }
  c.epsilon = j.value("epsilon", c.epsilon);
  c.alpha = j.value("alpha", c.alpha);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.restarts = j.value("restarts", c.restarts);
  c.stop_on_success = j.value("stop_on_success", c.stop_on_success);
  c.seed = j.value("seed", c.seed);
}

std::vector<int> select_targets(const Tensor& logits, std::span<const int> labels, TargetMode mode) {
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(labels.begin(), labels.end());
  if (mode == TargetMode::untargeted) return out;
  for (int i = 0; i < n; ++i) {
    std::vector<int> rank(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) rank[static_cast<std::size_t>(c)] = c;
    const double* row = logits.data() + static_cast<std::size_t>(i) * k;
    std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) { return row[a] > row[b]; });
    out[static_cast<std::size_t>(i)] = mode == TargetMode::most_likely ? rank[1] : rank.back();
  }
  return out;
}

namespace {

struct Probe {
  Tensor logits;
  Tensor grad;
};

Probe goal_gradient(const Model& model, const Tensor& x, std::span<const int> goals) {
  Tape tape;
  ForwardContext ctx = bind(tape, model, Mode::eval);
  Var in = tape.variable(x);
  ForwardResult r = model.forward(ctx, in);
  tape.backward(cross_entropy(r.logits, goals));
  return {r.logits.value(), tape.grad(in)};
}

double row_cross_entropy(const double* row, int k, int goal) {
  double mx = row[0];
  for (int c = 1; c < k; ++c) mx = std::max(mx, row[c]);
  double s = 0.0;
  for (int c = 0; c < k; ++c) s += std::exp(row[c] - mx);
  return mx + std::log(s) - row[goal];
}

int row_argmax(const double* row, int k) {
  int best = 0;
  for (int c = 1; c < k; ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

bool goal_met(TargetMode mode, int predicted, int goal) {
  return mode == TargetMode::untargeted ? predicted != goal : predicted == goal;
}

void project(double* xa, const double* x0, std::size_t n, double eps) {
  for (std::size_t i = 0; i < n; ++i) xa[i] = std::clamp(std::clamp(xa[i], x0[i] - eps, x0[i] + eps), 0.0, 1.0);
}

}  // namespace

EvasionResult pgd_attack(const Model& model, const Tensor& x, std::span<const int> labels, const EvasionConfig& config) {
  config.validate();
  if (x.rank() != 4 || x.dim(0) != static_cast<int>(labels.size()))
    throw InputError("pgd_attack expects an NCHW batch with one label per input");
  for (double v : x.values())
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("pgd_attack inputs must lie in [0, 1]");
  const int n = x.dim(0);
  const std::size_t dim = x.size() / static_cast<std::size_t>(std::max(n, 1));
  const int k = model.num_classes();
  const double sign = config.target_mode == TargetMode::untargeted ? 1.0 : -1.0;

  EvasionResult res;
  res.goals = select_targets(predict_logits(model, x), labels, config.target_mode);
  res.adversarial = x;
  res.success.assign(static_cast<std::size_t>(n), false);
  res.predicted.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> best_obj(static_cast<std::size_t>(n), -std::numeric_limits<double>::infinity());

  Rng rng(config.seed);
  constexpr int kChunk = 128;
  for (int restart = 0; restart < config.restarts; ++restart) {
    std::vector<int> active;
    for (int i = 0; i < n; ++i)
      if (!res.success[static_cast<std::size_t>(i)]) active.push_back(i);
    if (active.empty()) break;
    for (std::size_t c0 = 0; c0 < active.size(); c0 += kChunk) {
      std::vector<int> rows(active.begin() + static_cast<std::ptrdiff_t>(c0),
                            active.begin() + static_cast<std::ptrdiff_t>(std::min(active.size(), c0 + kChunk)));
      const int m = static_cast<int>(rows.size());
      Tensor x0 = gather_rows(x, rows);
      Tensor xa = x0;
      for (double& v : xa.values()) v += rng.uniform(-config.epsilon, config.epsilon);
      project(xa.data(), x0.data(), xa.size(), config.epsilon);
      std::vector<int> goals(static_cast<std::size_t>(m));
      for (int r = 0; r < m; ++r) goals[static_cast<std::size_t>(r)] = res.goals[static_cast<std::size_t>(rows[r])];
      std::vector<bool> frozen(static_cast<std::size_t>(m), false);
      for (int t = 0; t <= config.max_iters; ++t) {
        Probe p = goal_gradient(model, xa, goals);
        for (int r = 0; r < m; ++r) {
          if (frozen[static_cast<std::size_t>(r)]) continue;
          const std::size_t row = static_cast<std::size_t>(rows[r]);
          const double* lg = p.logits.data() + static_cast<std::size_t>(r) * k;
          const int pred = row_argmax(lg, k);
          const bool ok = goal_met(config.target_mode, pred, goals[static_cast<std::size_t>(r)]);
          const bool last = t == config.max_iters;
          if ((ok && config.stop_on_success) || last) {
            const double obj = sign * row_cross_entropy(lg, k, goals[static_cast<std::size_t>(r)]);
            // A success always wins; among failures keep the strongest objective.
            if (ok || (!res.success[row] && obj > best_obj[row])) {
              std::copy(xa.data() + static_cast<std::size_t>(r) * dim, xa.data() + static_cast<std::size_t>(r + 1) * dim,
                        res.adversarial.data() + row * dim);
              res.success[row] = ok;
              res.predicted[row] = pred;
              best_obj[row] = obj;
            }
            if (ok && config.stop_on_success) frozen[static_cast<std::size_t>(r)] = true;
          }
        }
        if (t == config.max_iters) break;
        for (int r = 0; r < m; ++r) {
          if (frozen[static_cast<std::size_t>(r)]) continue;
          double* xr = xa.data() + static_cast<std::size_t>(r) * dim;
          const double* gr = p.grad.data() + static_cast<std::size_t>(r) * dim;
          for (std::size_t i = 0; i < dim; ++i) {
            const double s = gr[i] > 0.0 ? 1.0 : (gr[i] < 0.0 ? -1.0 : 0.0);
            xr[i] += sign * config.alpha * s;
          }
          project(xr, x0.data() + static_cast<std::size_t>(r) * dim, dim, config.epsilon);
        }
      }
    }
  }
  return res;
}

Tensor nes_gradient(const BatchScalarFn& f, const Tensor& x, int n_query, double sigma, Rng& rng) {
  if (n_query < 2 || n_query % 2 != 0) throw ConfigError("n_query must be even and >= 2");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
  const int half = n_query / 2;
  const std::size_t dim = x.size();
  Shape batch_shape{2 * half};
  batch_shape.insert(batch_shape.end(), x.shape().begin(), x.shape().end());
  Tensor batch(batch_shape);
  std::vector<double> dirs(static_cast<std::size_t>(half) * dim);
  for (double& u : dirs) u = rng.normal();
  for (int j = 0; j < half; ++j) {
    double* plus = batch.data() + static_cast<std::size_t>(2 * j) * dim;
    double* minus = plus + dim;
    const double* u = dirs.data() + static_cast<std::size_t>(j) * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      plus[i] = x[i] + sigma * u[i];
      minus[i] = x[i] - sigma * u[i];
    }
  }
  std::vector<double> vals = f(batch);
  if (static_cast<int>(vals.size()) != 2 * half) throw InputError("query function returned the wrong count");
  Tensor g(x.shape());
  for (int j = 0; j < half; ++j) {
    const double diff = vals[static_cast<std::size_t>(2 * j)] - vals[static_cast<std::size_t>(2 * j + 1)];
    axpy(diff, std::span<const double>(dirs.data() + static_cast<std::size_t>(j) * dim, dim), g.values());
  }
  for (double& v : g.values()) v /= sigma * n_query;
  return g;
}

NesResult nes_attack(const ProbabilityOracle& oracle, const Tensor& x, int label, const EvasionConfig& config,
                     const NesConfig& nes) {
  config.validate();
  if (x.rank() != 4 || x.dim(0) != 1) throw InputError("nes_attack expects a single [1, C, H, W] input");
  NesResult res;
  res.adversarial = x;
  auto spend = [&](long q) {
    res.queries += q;
    return nes.max_queries <= 0 || res.queries <= nes.max_queries;
  };
  Tensor clean = oracle(x);
  spend(1);
  const int k = clean.dim(1);
  const int label_arr[1] = {label};
  res.goal = select_targets(clean, label_arr, config.target_mode)[0];
  const double sign = config.target_mode == TargetMode::untargeted ? 1.0 : -1.0;
  auto check = [&](const Tensor& probs) {
    return goal_met(config.target_mode, row_argmax(probs.data(), k), res.goal);
  };
  if (check(clean)) {
    res.success = true;
    return res;
  }
  const Tensor sample = x.reshaped(Shape(x.shape().begin() + 1, x.shape().end()));
  const std::size_t dim = sample.size();
  Rng rng(config.seed);
  BatchScalarFn loss = [&](const Tensor& batch) {
    Tensor probs = oracle(batch);
    std::vector<double> out(static_cast<std::size_t>(probs.dim(0)));
    for (int r = 0; r < probs.dim(0); ++r)
      out[static_cast<std::size_t>(r)] = -std::log(std::max(probs[static_cast<std::size_t>(r) * k + res.goal], 1e-300));
    return out;
  };
  for (int restart = 0; restart < config.restarts && !res.success; ++restart) {
    Tensor xa = sample;
    for (double& v : xa.values()) v += rng.uniform(-config.epsilon, config.epsilon);
    project(xa.data(), sample.data(), dim, config.epsilon);
    for (int t = 0; t < config.max_iters; ++t) {
      if (!spend(nes.n_query)) {
        res.queries -= nes.n_query;
        res.budget_exhausted = true;
        return res;
      }
      Tensor g = nes_gradient(loss, xa, nes.n_query, nes.sigma, rng);
      for (std::size_t i = 0; i < dim; ++i) {
        const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
        xa[i] += sign * config.alpha * s;
      }
      project(xa.data(), sample.data(), dim, config.epsilon);
      Tensor cand = xa.reshaped(x.shape());
      if (!spend(1)) {
        res.queries -= 1;
        res.budget_exhausted = true;
        return res;
      }
      res.adversarial = cand;
      if (check(oracle(cand))) {
        res.success = true;
        break;
      }
    }
  }
  return res;
}

AttackReport evasion_report(const Model& model, const Tensor& x, std::span<const int> labels,
                            std::span<const int> input_ids, const EvasionConfig& config, EvasionResult* result) {
  EvasionResult r = pgd_attack(model, x, labels, config);
  AttackReport rep;
  rep.attack = "evasion";
  rep.model_id = model.describe();
  rep.config = config;
  const std::size_t dim = x.size() / static_cast<std::size_t>(std::max(1, x.dim(0)));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double d = 0.0;
    for (std::size_t q = 0; q < dim; ++q) d = std::max(d, std::abs(r.adversarial[i * dim + q] - x[i * dim + q]));
    rep.records.push_back({input_ids.empty() ? static_cast<int>(i) : input_ids[i], static_cast<bool>(r.success[i]), d,
                           to_string(config.target_mode)});
  }
  rep.aggregates = compute_aggregates(rep.attack, rep.records);
  if (result) *result = std::move(r);
  return rep;
}

}  // namespace naslab
