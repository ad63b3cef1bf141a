#include "naslab/attacks/steal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "naslab/core/error.hpp"

namespace naslab {

void StealConfig::validate() const {
  if (query_budget < 0) throw ConfigError("query_budget must be >= 0");
  if (adaptive_rounds < 1) throw ConfigError("adaptive_rounds must be >= 1");
  if (!(w_certainty >= 0.0 && w_diversity >= 0.0 && w_loss >= 0.0)) throw ConfigError("reward weights must be >= 0");
  train.validate();
}

std::string to_string(QueryStrategy s) { return s == QueryStrategy::random ? "random" : "adaptive"; }

QueryStrategy parse_query_strategy(const std::string& text) {
  if (text == "random") return QueryStrategy::random;
  if (text == "adaptive") return QueryStrategy::adaptive;
  throw ConfigError("unknown query strategy '" + text + "'");
}

void to_json(nlohmann::json& j, const StealConfig& c) {
  j = {{"query_budget", c.query_budget},
       {"strategy", to_string(c.strategy)},
       {"surrogate", c.surrogate},
       {"train", c.train},
       {"adaptive_rounds", c.adaptive_rounds},
       {"reward", "all"},
       {"reward_weights", {{"certainty", c.w_certainty}, {"diversity", c.w_diversity}, {"loss", c.w_loss}}},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, StealConfig& c) {
  c.query_budget = j.value("query_budget", c.query_budget);
  if (j.contains("strategy")) c.strategy = parse_query_strategy(j.at("strategy").get<std::string>());
  if (j.contains("surrogate")) c.surrogate = j.at("surrogate").get<ArchSpec>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  c.adaptive_rounds = j.value("adaptive_rounds", c.adaptive_rounds);
  if (j.contains("reward_weights")) {
    const auto& w = j.at("reward_weights");
    c.w_certainty = w.value("certainty", c.w_certainty);
    c.w_diversity = w.value("diversity", c.w_diversity);
    c.w_loss = w.value("loss", c.w_loss);
  }
  c.seed = j.value("seed", c.seed);
}

std::vector<double> row_cross_entropy(const Tensor& victim_probs, const Tensor& replicate_probs) {
  if (victim_probs.shape() != replicate_probs.shape() || victim_probs.rank() != 2)
    throw InputError("probability matrices must share shape [N, classes]");
  const int n = victim_probs.dim(0), k = victim_probs.dim(1);
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int c = 0; c < k; ++c) {
      const std::size_t e = static_cast<std::size_t>(i) * k + c;
      const double p = victim_probs[e];
      if (p > 0.0) s -= p * std::log(std::max(replicate_probs[e], std::numeric_limits<double>::min()));
    }
    out[static_cast<std::size_t>(i)] = s;
  }
  return out;
}

namespace {

// Uniform draw of `count` pool rows: distinct while the pool lasts, then with replacement.
void draw_uniform(Rng& rng, int pool_size, long count, std::vector<char>& used, std::vector<int>& out) {
  std::vector<int> fresh;
  for (int i = 0; i < pool_size; ++i)
    if (!used[static_cast<std::size_t>(i)]) fresh.push_back(i);
  const long take = std::min<long>(count, static_cast<long>(fresh.size()));
  std::vector<int> pick = rng.sample_without_replacement(static_cast<int>(fresh.size()), static_cast<int>(take));
  for (int p : pick) {
    out.push_back(fresh[static_cast<std::size_t>(p)]);
    used[static_cast<std::size_t>(fresh[static_cast<std::size_t>(p)])] = 1;
  }
  for (long q = take; q < count; ++q) out.push_back(rng.index(pool_size));
}

int row_argmax(const double* row, int k) {
  return static_cast<int>(std::max_element(row, row + k) - row);
}

double margin(const double* row, int k) {
  double a = -1.0, b = -1.0;
  for (int c = 0; c < k; ++c) {
    if (row[c] > a) {
      b = a;
      a = row[c];
    } else if (row[c] > b) {
      b = row[c];
    }
  }
  return k > 1 ? a - b : a;
}

void minmax_normalize(std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, b = *hi;
  for (double& x : v) x = b > a ? (x - a) / (b - a) : 0.5;
}

}  // namespace

AttackReport knockoff_report(const Tensor& victim_probs, const Model& replicate, const Tensor& test_images,
                             const StealConfig& config) {
  AttackReport rep;
  rep.attack = "knockoff";
  rep.model_id = replicate.describe();
  rep.config = config;
  const std::vector<double> ce = row_cross_entropy(victim_probs, predict_proba(replicate, test_images));
  const int k = victim_probs.dim(1);
  const std::vector<int> rp = predict_labels(replicate, test_images);
  for (std::size_t i = 0; i < ce.size(); ++i) {
    const int vl = row_argmax(victim_probs.data() + i * static_cast<std::size_t>(k), k);
    rep.records.push_back({static_cast<int>(i), rp[i] == vl, ce[i], "test"});
  }
  rep.aggregates = compute_aggregates(rep.attack, rep.records);
  return rep;
}

StealResult knockoff_steal(const ProbabilityOracle& victim, const Tensor& pool, const Tensor& test_images,
                           const StealConfig& config) {
  config.validate();
  if (pool.rank() != 4 || test_images.rank() != 4) throw InputError("pool and test images must be NCHW");
  const int np = pool.dim(0);
  if (np == 0 && config.query_budget > 0) throw InputError("empty attacker pool");

  StealResult res;
  res.replicate = build_model(config.surrogate);
  const int k = res.replicate->num_classes();
  Rng rng = Rng(config.seed).fork(21);
  std::vector<char> used(static_cast<std::size_t>(np), 0);
  Tensor answers;

  auto query = [&](std::span<const int> rows) {
    Tensor p = victim(gather_rows(pool, rows));
    if (p.rank() != 2 || p.dim(1) != k) throw InputError("victim answers do not match the surrogate classes");
    return p;
  };
  auto retrain = [&]() {
    res.replicate = build_model(config.surrogate);
    if (!res.queried.empty()) fit_soft(*res.replicate, gather_rows(pool, res.queried), answers, config.train);
  };

  if (config.strategy == QueryStrategy::random || config.query_budget == 0) {
    draw_uniform(rng, np, config.query_budget, used, res.queried);
    if (!res.queried.empty()) answers = query(res.queried);
    retrain();
  } else {
    const int rounds = static_cast<int>(std::min<long>(config.adaptive_rounds, config.query_budget));
    std::vector<int> labels;  // victim top-1 per query
    for (int round = 0; round < rounds; ++round) {
      const long want = config.query_budget * (round + 1) / rounds - static_cast<long>(res.queried.size());
      std::vector<int> batch;
      if (round == 0) {
        draw_uniform(rng, np, want, used, batch);
      } else {
        // Rewards per victim class from what has been observed so far.
        Tensor rep_probs = predict_proba(*res.replicate, gather_rows(pool, res.queried));
        const std::vector<double> loss = row_cross_entropy(answers, rep_probs);
        std::vector<double> cert(static_cast<std::size_t>(k), 0.0), lsum(static_cast<std::size_t>(k), 0.0);
        std::vector<double> count(static_cast<std::size_t>(k), 0.0);
        for (std::size_t q = 0; q < labels.size(); ++q) {
          const std::size_t c = static_cast<std::size_t>(labels[q]);
          cert[c] += margin(answers.data() + q * static_cast<std::size_t>(k), k);
          lsum[c] += loss[q];
          count[c] += 1.0;
        }
        std::vector<char> seen(static_cast<std::size_t>(k), 0);
        for (std::size_t c = 0; c < cert.size(); ++c) {
          if (count[c] > 0.0) {
            cert[c] /= count[c];
            lsum[c] /= count[c];
            seen[c] = 1;
          }
        }
        minmax_normalize(cert);
        minmax_normalize(lsum);
        for (std::size_t c = 0; c < cert.size(); ++c)
          if (!seen[c]) cert[c] = lsum[c] = 1.0;  // optimistic for classes never answered

        // Unqueried pool rows grouped by the replicate's predicted class.
        std::vector<int> fresh;
        for (int i = 0; i < np; ++i)
          if (!used[static_cast<std::size_t>(i)]) fresh.push_back(i);
        std::vector<std::vector<int>> bucket(static_cast<std::size_t>(k));
        if (!fresh.empty()) {
          const std::vector<int> proxy = predict_labels(*res.replicate, gather_rows(pool, fresh));
          for (std::size_t i = 0; i < fresh.size(); ++i) bucket[static_cast<std::size_t>(proxy[i])].push_back(fresh[i]);
        }
        const double wsum = config.w_certainty + config.w_diversity + config.w_loss;
        double total = static_cast<double>(labels.size());
        for (long q = 0; q < want; ++q) {
          int best = -1;
          double best_r = -std::numeric_limits<double>::infinity();
          for (int c = 0; c < k; ++c) {
            if (bucket[static_cast<std::size_t>(c)].empty()) continue;
            const double div = total > 0.0 ? 1.0 - count[static_cast<std::size_t>(c)] / total : 1.0;
            const double r = wsum > 0.0 ? (config.w_certainty * cert[static_cast<std::size_t>(c)] +
                                           config.w_diversity * div + config.w_loss * lsum[static_cast<std::size_t>(c)]) /
                                              wsum
                                        : 0.0;
            if (r > best_r) {
              best_r = r;
              best = c;
            }
          }
          if (best < 0) {
            batch.push_back(rng.index(np));
            continue;
          }
          auto& b = bucket[static_cast<std::size_t>(best)];
          const std::size_t pos = static_cast<std::size_t>(rng.index(static_cast<int>(b.size())));
          batch.push_back(b[pos]);
          used[static_cast<std::size_t>(b[pos])] = 1;
          b[pos] = b.back();
          b.pop_back();
          count[static_cast<std::size_t>(best)] += 1.0;  // provisional until the victim answers
          total += 1.0;
        }
      }
      if (batch.empty()) continue;
      Tensor p = query(batch);
      for (int r = 0; r < p.dim(0); ++r) labels.push_back(row_argmax(p.data() + static_cast<std::size_t>(r) * k, k));
      res.queried.insert(res.queried.end(), batch.begin(), batch.end());
      if (answers.size() == 0) {
        answers = p;
      } else {
        Tensor merged({answers.dim(0) + p.dim(0), k});
        std::copy(answers.values().begin(), answers.values().end(), merged.values().begin());
        std::copy(p.values().begin(), p.values().end(), merged.values().begin() + static_cast<std::ptrdiff_t>(answers.size()));
        answers = std::move(merged);
      }
      retrain();
    }
  }
  res.report = knockoff_report(victim(test_images), *res.replicate, test_images, config);
  res.report.config["queries_used"] = static_cast<long>(res.queried.size());
  res.ace = res.report.aggregates.at("ace").get<double>();
  return res;
}

}  // namespace naslab
