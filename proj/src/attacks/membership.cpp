#include "naslab/attacks/membership.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "naslab/core/error.hpp"

namespace naslab {

void MembershipConfig::validate() const {
  if (norm != "l2") throw ConfigError("only the l2 norm is supported");
  if (max_iters < 1 || max_evals < 1 || init_evals < 1 || init_size < 1)
    throw ConfigError("membership budgets must be positive");
}

void to_json(nlohmann::json& j, const MembershipConfig& c) {
  j = {{"norm", c.norm},         {"max_iters", c.max_iters}, {"max_evals", c.max_evals},
       {"init_evals", c.init_evals}, {"init_size", c.init_size}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, MembershipConfig& c) {
  c.norm = j.value("norm", c.norm);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.max_evals = j.value("max_evals", c.max_evals);
  c.init_evals = j.value("init_evals", c.init_evals);
  c.init_size = j.value("init_size", c.init_size);
  c.seed = j.value("seed", c.seed);
}

LabelOracle label_oracle(const Model& model) {
  return [&model](const Tensor& batch) { return predict_labels(model, batch); };
}

namespace {

class Walker {
 public:
  Walker(const LabelOracle& oracle, const Tensor& x, int label, long budget)
      : oracle_(oracle), x_(x), label_(label), budget_(budget), dim_(x.size()) {}

  long used() const { return used_; }
  long left() const { return budget_ - used_; }

  /// Adversarial flags for rows of `batch`; empty when the budget cannot cover it.
  std::vector<char> adversarial(const Tensor& batch) {
    const long n = batch.dim(0);
    if (n > left()) return {};
    used_ += n;
    std::vector<int> pred = oracle_(batch);
    std::vector<char> out(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] != label_;
    return out;
  }

  int one(const Tensor& z) {
    std::vector<char> r = adversarial(z);
    return r.empty() ? -1 : r[0];
  }

  double distance(const Tensor& z) const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) s += (z[i] - x_[i]) * (z[i] - x_[i]);
    return std::sqrt(s);
  }

  Tensor blend(const Tensor& adv, double t) const {
    Tensor z = x_;
    for (std::size_t i = 0; i < dim_; ++i) z[i] = (1.0 - t) * x_[i] + t * adv[i];
    return z;
  }

  /// Shrinks toward x along the segment until the blend step is below `tol`; returns an adversarial point.
  bool bisect(const Tensor& adv, double tol, Tensor& out) {
    double lo = 0.0, hi = 1.0;
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      const int r = one(blend(adv, mid));
      if (r < 0) break;
      (r ? hi : lo) = mid;
    }
    out = blend(adv, hi);
    return true;
  }

  const Tensor& x() const { return x_; }
  std::size_t dim() const { return dim_; }

 private:
  const LabelOracle& oracle_;
  Tensor x_;
  int label_;
  long budget_;
  long used_ = 0;
  std::size_t dim_;
};

}  // namespace

HsjResult hopskipjump(const LabelOracle& oracle, const Tensor& x, int label, const MembershipConfig& config) {
  config.validate();
  if (x.rank() != 4 || x.dim(0) != 1) throw InputError("hopskipjump expects a single [1, C, H, W] input");
  HsjResult res;
  Walker w(oracle, x, label, config.max_evals);
  const int clean = w.one(x);
  res.queries = w.used();
  if (clean == 1) {
    res.distance = 0.0;
    res.boundary = x;
    res.trace = {0.0};
    return res;
  }

  const std::size_t d = w.dim();
  const double sqrt_d = std::sqrt(static_cast<double>(d));
  // Bisection tolerance in blend units; capped so tiny inputs still get a fine boundary.
  const double theta = std::min(1.0 / (static_cast<double>(d) * sqrt_d), 1e-3);
  Rng rng(config.seed);

  Tensor probe;
  bool have_probe = false;
  for (int i = 0; i < config.init_size && !have_probe; ++i) {
    Tensor z(x.shape());
    for (double& v : z.values()) v = rng.uniform();
    const int r = w.one(z);
    if (r < 0) break;
    if (r == 1) {
      probe = std::move(z);
      have_probe = true;
    }
  }
  if (!have_probe) {
    res.found = false;
    res.distance = std::numeric_limits<double>::infinity();
    res.queries = w.used();
    return res;
  }

  Tensor best;
  w.bisect(probe, theta, best);
  double best_dist = w.distance(best);
  res.trace.push_back(best_dist);

  for (int t = 1; t <= config.max_iters && w.left() > 0; ++t) {
    const double delta = t == 1 ? 0.1 : sqrt_d * theta * best_dist;
    const int n_eval = static_cast<int>(std::min<long>(
        static_cast<long>(config.init_evals * std::sqrt(static_cast<double>(t))), w.left()));
    if (n_eval < 2) break;

    // Monte-Carlo estimate of the boundary normal at `best`.
    Shape bs = x.shape();
    bs[0] = n_eval;
    Tensor batch(bs);
    std::vector<double> dirs(static_cast<std::size_t>(n_eval) * d);
    for (int j = 0; j < n_eval; ++j) {
      double* u = dirs.data() + static_cast<std::size_t>(j) * d;
      double nrm = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        u[i] = rng.normal();
        nrm += u[i] * u[i];
      }
      nrm = std::sqrt(nrm);
      double* z = batch.data() + static_cast<std::size_t>(j) * d;
      for (std::size_t i = 0; i < d; ++i) {
        z[i] = std::clamp(best[i] + delta * u[i] / nrm, 0.0, 1.0);
        u[i] = (z[i] - best[i]) / delta;
      }
    }
    std::vector<char> adv = w.adversarial(batch);
    if (adv.empty()) break;
    double mean_phi = 0.0;
    for (char a : adv) mean_phi += a ? 1.0 : -1.0;
    mean_phi /= n_eval;
    std::vector<double> g(d, 0.0);
    const bool uniform = std::abs(mean_phi) == 1.0;
    for (int j = 0; j < n_eval; ++j) {
      const double phi = (adv[static_cast<std::size_t>(j)] ? 1.0 : -1.0);
      const double c = uniform ? phi : phi - mean_phi;
      axpy(c, std::span<const double>(dirs.data() + static_cast<std::size_t>(j) * d, d), g);
    }
    const double gn = l2_norm(g);
    if (!(gn > 0.0)) continue;
    for (double& v : g) v /= gn;

    // Geometric step search along the estimate, then back to the boundary.
    double eps = best_dist / std::sqrt(static_cast<double>(t));
    Tensor cand;
    bool stepped = false;
    while (eps > 1e-12 && w.left() > 0) {
      cand = best;
      for (std::size_t i = 0; i < d; ++i) cand[i] = std::clamp(best[i] + eps * g[i], 0.0, 1.0);
      const int r = w.one(cand);
      if (r < 0) break;
      if (r == 1) {
        stepped = true;
        break;
      }
      eps *= 0.5;
    }
    if (!stepped) {
      res.trace.push_back(best_dist);
      continue;
    }
    Tensor next;
    w.bisect(cand, theta, next);
    const double nd = w.distance(next);
    if (nd < best_dist) {
      best = std::move(next);
      best_dist = nd;
    }
    res.trace.push_back(best_dist);
  }
  res.distance = best_dist;
  res.boundary = std::move(best);
  res.queries = w.used();
  return res;
}

double hopskipjump_distance(const LabelOracle& oracle, const Tensor& x, int label, const MembershipConfig& config) {
  return hopskipjump(oracle, x, label, config).distance;
}

MembershipResult membership_infer(const Model& model, const Dataset& members, const Dataset& nonmembers,
                                  const MembershipConfig& config) {
  config.validate();
  members.validate();
  nonmembers.validate();
  if (members.size() != nonmembers.size()) throw InputError("member and nonmember sets must have equal size");
  MembershipResult res;
  res.report.attack = "membership";
  res.report.model_id = model.describe();
  res.report.config = config;
  const LabelOracle oracle = label_oracle(model);
  Rng root(config.seed);
  auto run = [&](const Dataset& set, const std::string& group, std::uint64_t stream, std::vector<double>& out) {
    for (int i = 0; i < set.size(); ++i) {
      MembershipConfig c = config;
      c.seed = root.fork(stream + static_cast<std::uint64_t>(i)).seed();
      const int row[1] = {i};
      const double dist = hopskipjump_distance(oracle, gather_rows(set.images, row), set.labels[static_cast<std::size_t>(i)], c);
      out.push_back(dist);
      res.report.records.push_back({i, std::isfinite(dist), dist, group});
    }
  };
  run(members, "member", 0, res.member_distances);
  run(nonmembers, "nonmember", 1u << 20, res.nonmember_distances);
  res.report.aggregates = compute_aggregates(res.report.attack, res.report.records);
  res.auc = res.report.aggregates.value("auc", std::numeric_limits<double>::quiet_NaN());
  return res;
}

}  // namespace naslab
