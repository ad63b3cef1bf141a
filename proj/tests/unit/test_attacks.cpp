#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "naslab/attacks/backdoor.hpp"
#include "naslab/attacks/evasion.hpp"
#include "naslab/attacks/membership.hpp"
#include "naslab/attacks/steal.hpp"
#include "naslab/search_space/network.hpp"
#include "naslab/trainer/data.hpp"

using namespace naslab;

namespace {

Tensor& param(Model& m, int idx) { return m.store().params()[static_cast<std::size_t>(idx)].value; }

// Two-class linear scorer: logit_0 = 0, logit_1 = w.x + b.
LinearModel linear_scorer(const Shape& input, const std::vector<double>& w, double b) {
  LinearModel m(2, input, 1);
  Tensor& W = param(m, m.classifier().weight);
  W.fill(0.0);
  std::copy(w.begin(), w.end(), W.data() + w.size());
  Tensor& B = param(m, m.classifier().bias);
  B.fill(0.0);
  B[1] = b;
  return m;
}

DataSplit tiny_data(int train, int test, std::uint64_t seed = 3) {
  DatasetSpec s;
  s.num_classes = 4;
  s.input = {3, 8, 8};
  s.train_size = train;
  s.test_size = test;
  s.seed = seed;
  return make_synthetic(s);
}

ArchSpec tiny_chain(std::uint64_t seed = 5) {
  ArchSpec a;
  a.kind = "chain";
  a.widths = {6, 8};
  a.pool_every = 1;
  a.network.num_classes = 4;
  a.network.input = {3, 8, 8};
  a.init_seed = seed;
  return a;
}

TrainedModel trained_chain(const DataSplit& data, int epochs = 8) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.initial_lr = 0.05;
  return train_model(tiny_chain(), data, cfg);
}

bool same(const Tensor& a, const Tensor& b) { return std::ranges::equal(a.values(), b.values()); }

double cosine(std::span<const double> a, std::span<const double> b) { return dot(a, b) / (l2_norm(a) * l2_norm(b)); }

}  // namespace

TEST_CASE("pgd at zero radius returns the input") {
  DataSplit data = tiny_data(200, 40);
  TrainedModel tm = trained_chain(data, 2);
  EvasionConfig cfg;
  cfg.epsilon = 0.0;
  cfg.alpha = 0.0;
  cfg.restarts = 2;
  EvasionResult r = pgd_attack(*tm.model, data.test.images, data.test.labels, cfg);
  CHECK(same(r.adversarial, data.test.images));
  const std::vector<int> pred = predict_labels(*tm.model, data.test.images);
  for (int i = 0; i < data.test.size(); ++i)
    CHECK(r.success[static_cast<std::size_t>(i)] == (pred[static_cast<std::size_t>(i)] != data.test.labels[static_cast<std::size_t>(i)]));
}

TEST_CASE("pgd on a linear scorer matches the closed form") {
  const Shape in{1, 2, 2};
  const std::vector<double> w{0.8, -1.5, 0.3, 2.0};
  LinearModel m = linear_scorer(in, w, -3.0);
  Tensor x({1, 1, 2, 2}, std::vector<double>{0.5, 0.02, 0.6, 0.99});
  // Two full steps with alpha = epsilon saturate the ball whatever the random start.
  EvasionConfig cfg;
  cfg.epsilon = cfg.alpha = 0.05;
  cfg.max_iters = 2;
  cfg.restarts = 1;
  cfg.stop_on_success = false;
  const int label[1] = {0};
  EvasionResult up = pgd_attack(m, x, label, cfg);
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = std::clamp(x[i] + cfg.epsilon * (w[i] > 0 ? 1.0 : -1.0), 0.0, 1.0);
    CHECK(up.adversarial[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  // Flipped bias: class 1 leads, the runner-up target 0 is reached by descending its loss.
  LinearModel flipped = linear_scorer(in, w, 3.0);
  cfg.target_mode = TargetMode::most_likely;
  const int label1[1] = {1};
  EvasionResult down = pgd_attack(flipped, x, label1, cfg);
  CHECK(down.goals[0] == 0);
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = std::clamp(x[i] - cfg.epsilon * (w[i] > 0 ? 1.0 : -1.0), 0.0, 1.0);
    CHECK(down.adversarial[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("pgd defaults") {
  EvasionConfig m = EvasionConfig::most_likely(), l = EvasionConfig::least_likely();
  CHECK(m.epsilon == 8.0 / 255.0);
  CHECK(m.alpha == 2.0 / 255.0);
  CHECK(m.max_iters == 3);
  CHECK(l.max_iters == 7);
  CHECK(m.restarts == 5);
  CHECK(l.restarts == 5);
  CHECK(m.target_mode == TargetMode::most_likely);
  CHECK(l.target_mode == TargetMode::least_likely);
  EvasionConfig bad;
  bad.alpha = 2 * bad.epsilon;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("pgd outputs stay in the ball and report honest predictions") {
  DataSplit data = tiny_data(200, 60);
  TrainedModel tm = trained_chain(data, 3);
  for (TargetMode mode : {TargetMode::untargeted, TargetMode::most_likely, TargetMode::least_likely}) {
    EvasionConfig cfg;
    cfg.target_mode = mode;
    cfg.epsilon = 0.1;
    cfg.alpha = 0.03;
    cfg.restarts = 2;
    EvasionResult r = pgd_attack(*tm.model, data.test.images, data.test.labels, cfg);
    for (std::size_t i = 0; i < r.adversarial.size(); ++i) {
      CHECK(std::abs(r.adversarial[i] - data.test.images[i]) <= cfg.epsilon + 1e-9);
      CHECK(r.adversarial[i] >= 0.0);
      CHECK(r.adversarial[i] <= 1.0);
    }
    const std::vector<int> pred = predict_labels(*tm.model, r.adversarial);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      CHECK(pred[i] == r.predicted[i]);
      const bool goal = mode == TargetMode::untargeted ? pred[i] != data.test.labels[i] : pred[i] == r.goals[i];
      CHECK(goal == static_cast<bool>(r.success[i]));
    }
    AttackReport rep = evasion_report(*tm.model, data.test.images, data.test.labels, {}, cfg);
    CHECK(rep.aggregates["asr"].get<double>() == success_rate(rep.records));
  }
}

TEST_CASE("nes gradient of a constant is exactly zero") {
  Rng rng(4);
  Tensor x({3, 4, 4}, 0.5);
  Tensor g = nes_gradient([](const Tensor& b) { return std::vector<double>(static_cast<std::size_t>(b.dim(0)), 1.7); }, x,
                          400, 0.001, rng);
  for (double v : g.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(nes_gradient([](const Tensor& b) { return std::vector<double>(static_cast<std::size_t>(b.dim(0))); },
                               x, 401, 0.001, rng),
                  ConfigError);
}

TEST_CASE("nes gradient of a linear function points along w") {
  Rng data(8);
  Tensor x({3, 8, 8});
  std::vector<double> w(x.size());
  for (double& v : w) v = data.normal();
  for (double& v : x.values()) v = data.uniform();
  BatchScalarFn f = [&](const Tensor& b) {
    std::vector<double> out(static_cast<std::size_t>(b.dim(0)));
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = dot(w, std::span<const double>(b.data() + r * w.size(), w.size()));
    return out;
  };
  Rng rng(9);
  Tensor g = nes_gradient(f, x, 10000, 0.01, rng);
  CHECK(cosine(g.values(), w) > 0.95);
}

TEST_CASE("nes gradient of a small network matches autodiff") {
  DataSplit data = tiny_data(200, 10);
  TrainedModel tm = trained_chain(data, 2);
  const int rows[1] = {0};
  Tensor x = gather_rows(data.test.images, rows);
  const int label = data.test.labels[0];
  Tensor exact = input_gradient(*tm.model, x, [&](const Var& logits) {
    const int l[1] = {label};
    return cross_entropy(logits, l);
  });
  BatchScalarFn f = [&](const Tensor& b) {
    Tensor logits = predict_logits(*tm.model, b);
    std::vector<double> out(static_cast<std::size_t>(b.dim(0)));
    for (int r = 0; r < b.dim(0); ++r) {
      const double* row = logits.data() + static_cast<std::size_t>(r) * 4;
      double mx = *std::max_element(row, row + 4), s = 0.0;
      for (int c = 0; c < 4; ++c) s += std::exp(row[c] - mx);
      out[static_cast<std::size_t>(r)] = mx + std::log(s) - row[label];
    }
    return out;
  };
  Rng rng(10);
  Tensor g = nes_gradient(f, x.reshaped({3, 8, 8}), 4000, 1e-4, rng);
  CHECK(cosine(g.values(), exact.values()) > 0.9);
}

TEST_CASE("nes attack respects the ball and the query budget") {
  DataSplit data = tiny_data(200, 10);
  TrainedModel tm = trained_chain(data, 2);
  ProbabilityOracle oracle = [&](const Tensor& b) { return predict_proba(*tm.model, b); };
  const int rows[1] = {1};
  Tensor x = gather_rows(data.test.images, rows);
  EvasionConfig cfg;
  cfg.restarts = 1;
  NesConfig nes;
  nes.n_query = 50;
  NesResult r = nes_attack(oracle, x, data.test.labels[1], cfg, nes);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(r.adversarial[i] - x[i]) <= cfg.epsilon + 1e-9);
  nes.max_queries = 120;
  NesResult cut = nes_attack(oracle, x, data.test.labels[1], cfg, nes);
  CHECK(cut.queries <= 120);
  if (!cut.success) CHECK(cut.budget_exhausted);
}

TEST_CASE("AUC equals the pairwise definition on a hand list") {
  const std::vector<double> members{0.9, 0.4, 0.75, 0.75, 1.2, 0.3, 0.66, 0.81, 0.5, 0.75};
  const std::vector<double> non{0.2, 0.75, 0.35, 0.6, 0.1, 0.8, 0.45, 0.3, 0.55, 0.05};
  // Rank-sum form: U = R_members - n(n+1)/2 with midranks for ties.
  std::vector<std::pair<double, int>> all;
  for (double v : members) all.push_back({v, 1});
  for (double v : non) all.push_back({v, 0});
  std::sort(all.begin(), all.end());
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum += mid;
    i = j;
  }
  const double u = rank_sum - 10.0 * 11.0 / 2.0;
  CHECK(mann_whitney_auc(members, non) == doctest::Approx(u / 100.0).epsilon(1e-15));
  CHECK(mann_whitney_auc(members, non) == doctest::Approx(0.78).epsilon(1e-15));
  CHECK(mann_whitney_auc({1, 1, 1}, {1, 1}) == 0.5);
  CHECK(mann_whitney_auc({3, 4}, {1, 2, 2.5}) == 1.0);
}

TEST_CASE("hopskipjump recovers the point-to-hyperplane distance") {
  const Shape in{1, 4, 4};
  Rng rng(21);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> w(16);
    for (double& v : w) v = rng.normal();
    Tensor x({1, 1, 4, 4});
    for (double& v : x.values()) v = rng.uniform(0.35, 0.65);
    const double target = rng.uniform(0.05, 0.3);
    const double b = -dot(w, x.values()) + target * l2_norm(w);
    LinearModel m = linear_scorer(in, w, b);
    const double truth = std::abs(dot(w, x.values()) + b) / l2_norm(w);
    MembershipConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(trial);
    HsjResult r = hopskipjump(label_oracle(m), x, 1, cfg);
    REQUIRE(r.found);
    CHECK(r.queries <= cfg.max_evals);
    CHECK(std::abs(r.distance - truth) <= 0.05 * truth);
    for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1]);
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("hopskipjump edge cases") {
  LinearModel m = linear_scorer({1, 2, 2}, {1, 1, 1, 1}, -2.0);
  Tensor x({1, 1, 2, 2}, 0.9);
  MembershipConfig cfg;
  CHECK(hopskipjump_distance(label_oracle(m), x, 0, cfg) == 0.0);
  // Every point of the box is class 1 here: no misclassified probe exists.
  LinearModel always = linear_scorer({1, 2, 2}, {0, 0, 0, 0}, 5.0);
  HsjResult r = hopskipjump(label_oracle(always), x, 1, cfg);
  CHECK_FALSE(r.found);
  CHECK(std::isinf(r.distance));
  CHECK(r.queries == 1 + cfg.init_size);
  cfg.max_evals = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("membership separates far members from near nonmembers") {
  const std::vector<double> w{1, 1, 1, 1};
  LinearModel m = linear_scorer({1, 2, 2}, w, -2.0);
  auto make = [](std::vector<double> levels) {
    Dataset d;
    d.num_classes = 2;
    d.images = Tensor({static_cast<int>(levels.size()), 1, 2, 2});
    for (std::size_t i = 0; i < levels.size(); ++i) {
      std::fill(d.images.data() + 4 * i, d.images.data() + 4 * i + 4, levels[i]);
      d.labels.push_back(levels[i] > 0.5 ? 1 : 0);
    }
    return d;
  };
  Dataset members = make({0.9, 0.1, 0.85, 0.15});
  Dataset non = make({0.55, 0.45, 0.6, 0.4});
  MembershipConfig cfg;
  cfg.max_evals = 600;
  MembershipResult r = membership_infer(m, members, non, cfg);
  CHECK(r.auc == 1.0);
  CHECK(r.report.aggregates["excluded_infinite"].get<int>() == 0);
  CHECK(r.member_distances[0] == doctest::Approx(0.8).epsilon(0.05));
  std::vector<double> mem, nn;
  for (const AttackRecord& rec : r.report.records) (rec.group == "member" ? mem : nn).push_back(rec.aux);
  CHECK(mann_whitney_auc(mem, nn) == r.auc);
  CHECK_THROWS_AS(membership_infer(m, members, make({0.5}), cfg), InputError);
}

TEST_CASE("trigger embedding is confined to the corner patch") {
  BackdoorConfig cfg;
  Rng rng(2);
  Tensor x({2, 3, 8, 8});
  for (double& v : x.values()) v = rng.uniform();
  Tensor r({3, 3, 3});
  for (double& v : r.values()) v = rng.uniform();
  Tensor y = embed_trigger(x, r, cfg);
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < 8; ++h)
        for (int q = 0; q < 8; ++q) {
          const std::size_t e = ((static_cast<std::size_t>(i) * 3 + c) * 8 + h) * 8 + q;
          if (h >= 5 && q >= 5) {
            const double p = r[(static_cast<std::size_t>(c) * 3 + (h - 5)) * 3 + (q - 5)];
            CHECK(y[e] == 0.7 * x[e] + (1.0 - 0.7) * p);
          } else {
            CHECK(y[e] == x[e]);
          }
        }
  cfg.transparency = 1.0;
  CHECK(same(embed_trigger(x, r, cfg), x));
  cfg.trigger_size = 9;
  CHECK_THROWS_AS(trigger_origin({3, 8, 8}, cfg.trigger_size), ConfigError);
}

TEST_CASE("target neurons and trigger optimization") {
  DataSplit data = tiny_data(200, 40);
  TrainedModel tm = trained_chain(data, 3);
  const Tensor& W = tm.model->store().params()[static_cast<std::size_t>(tm.model->classifier().weight)].value;
  const std::vector<int> chosen = select_target_neurons(*tm.model, 2, 2);
  REQUIRE(chosen.size() == 2);
  for (int j = 0; j < W.dim(1); ++j) {
    if (j == chosen[0] || j == chosen[1]) continue;
    CHECK(std::abs(W[static_cast<std::size_t>(2 * W.dim(1) + j)]) <= std::abs(W[static_cast<std::size_t>(2 * W.dim(1) + chosen[1])]));
  }
  CHECK_THROWS_AS(select_target_neurons(*tm.model, 2, W.dim(1) + 1), ConfigError);

  BackdoorConfig cfg;
  auto activation = [&](const Tensor& r) {
    Tensor f = extract_features(*tm.model, embed_trigger(data.train.images, r, cfg));
    double s = 0.0;
    for (int i = 0; i < f.dim(0); ++i)
      for (int c : chosen) s += f[static_cast<std::size_t>(i * f.dim(1) + c)];
    return s;
  };
  BackdoorConfig zero = cfg;
  zero.preprocess_iters = 0;
  Tensor start = optimize_trigger(*tm.model, data.train.images, chosen, zero);
  Tensor opt = optimize_trigger(*tm.model, data.train.images, chosen, cfg);
  for (double v : opt.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(activation(opt) > activation(start));
}

TEST_CASE("trojannn plants a backdoor and its aggregates recompute") {
  DataSplit data = tiny_data(400, 100);
  TrainedModel tm = trained_chain(data, 8);
  BackdoorConfig cfg;
  cfg.target_class = 1;
  cfg.finetune.epochs = 4;
  cfg.finetune.batch_size = 16;
  BackdoorResult r = trojannn_inject(*tm.model, data, cfg);
  const double asr = r.report.aggregates["asr"].get<double>();
  CHECK(asr > 0.8);
  int trig = 0, hit = 0;
  double before = 0.0, after = 0.0;
  int clean = 0;
  for (const AttackRecord& rec : r.report.records) {
    if (rec.group == "trigger") {
      ++trig;
      hit += rec.success;
    } else {
      ++clean;
      before += rec.aux;
      after += rec.success;
    }
  }
  CHECK(trig == 100);
  CHECK(clean == 100);
  CHECK(asr == static_cast<double>(hit) / trig);
  CHECK(r.report.aggregates["cad"].get<double>() == before / clean - after / clean);
  CHECK(before / clean == evaluate_accuracy(*tm.model, data.test));
}

TEST_CASE("trojannn without the poisoned term leaves no backdoor") {
  DataSplit data = tiny_data(400, 200);
  TrainedModel tm = trained_chain(data, 8);
  BackdoorConfig cfg;
  cfg.target_class = 3;
  cfg.lambda = 0.0;
  cfg.finetune.epochs = 1;
  cfg.finetune.batch_size = 16;
  BackdoorResult r = trojannn_inject(*tm.model, data, cfg);
  CHECK(r.report.aggregates["asr"].get<double>() == doctest::Approx(0.25).epsilon(0.6));
  CHECK(std::abs(r.report.aggregates["cad"].get<double>()) <= 0.1);

  cfg.transparency = 1.0;
  cfg.lambda = 1.0;
  BackdoorResult same = trojannn_inject(*tm.model, data, cfg);
  const std::vector<int> pred = predict_labels(*same.model, data.test.images);
  const double frac = static_cast<double>(std::count(pred.begin(), pred.end(), 3)) / static_cast<double>(pred.size());
  CHECK(same.report.aggregates["asr"].get<double>() == frac);
}

TEST_CASE("knockoff ACE of a perfect copy is the victim entropy") {
  DataSplit data = tiny_data(200, 50);
  TrainedModel tm = trained_chain(data, 3);
  Tensor probs = predict_proba(*tm.model, data.test.images);
  double entropy = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) entropy -= probs[i] * std::log(probs[i]);
  entropy /= probs.dim(0);
  AttackReport rep = knockoff_report(probs, *tm.model, data.test.images, StealConfig{});
  CHECK(rep.aggregates["ace"].get<double>() == doctest::Approx(entropy).epsilon(1e-12));
  double s = 0.0;
  for (const AttackRecord& rec : rep.records) s += rec.aux;
  CHECK(rep.aggregates["ace"].get<double>() == s / static_cast<double>(rep.records.size()));
}

TEST_CASE("knockoff query strategies") {
  DataSplit data = tiny_data(300, 60);
  TrainedModel victim = trained_chain(data, 6);
  long calls = 0;
  ProbabilityOracle oracle = [&](const Tensor& b) {
    calls += b.dim(0);
    return predict_proba(*victim.model, b);
  };
  DataSplit pool = tiny_data(400, 4, 77);
  StealConfig cfg;
  cfg.surrogate = tiny_chain(9);
  cfg.train.epochs = 8;
  cfg.train.batch_size = 16;
  cfg.train.initial_lr = 0.05;

  cfg.query_budget = 0;
  StealResult none = knockoff_steal(oracle, pool.train.images, data.test.images, cfg);
  CHECK(none.queried.empty());
  CHECK(calls == data.test.size());
  AttackReport fresh = knockoff_report(predict_proba(*victim.model, data.test.images), *build_model(cfg.surrogate),
                                       data.test.images, cfg);
  CHECK(none.ace == fresh.aggregates["ace"].get<double>());

  cfg.query_budget = 300;
  calls = 0;
  StealResult rnd = knockoff_steal(oracle, pool.train.images, data.test.images, cfg);
  CHECK(calls == 300 + data.test.size());
  std::vector<int> q = rnd.queried;
  std::sort(q.begin(), q.end());
  CHECK(std::adjacent_find(q.begin(), q.end()) == q.end());
  CHECK(rnd.ace < none.ace);

  cfg.strategy = QueryStrategy::adaptive;
  cfg.adaptive_rounds = 3;
  calls = 0;
  StealResult ad = knockoff_steal(oracle, pool.train.images, data.test.images, cfg);
  CHECK(calls == 300 + data.test.size());
  CHECK(ad.queried.size() == 300);
  StealResult again = knockoff_steal(oracle, pool.train.images, data.test.images, cfg);
  CHECK(again.queried == ad.queried);
  CHECK(again.ace == ad.ace);
  CHECK(ad.ace < none.ace);

  cfg.query_budget = 500;
  cfg.strategy = QueryStrategy::random;
  StealResult over = knockoff_steal(oracle, pool.train.images, data.test.images, cfg);
  CHECK(over.queried.size() == 500);
}
