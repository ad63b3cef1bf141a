#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "naslab/nas/variants.hpp"
#include "naslab/trainer/data.hpp"

using namespace naslab;
using naslab::testing::random_tensor;

namespace {

// L_trn = 0.5 |theta - A alpha|^2 + 0.1 |theta|^2,  L_val = 0.5 |B theta - c|^2 + 0.5 alpha^T D alpha + e . alpha
struct Toy {
  Tensor A{{3, 2}, {1.0, 0.5, -0.3, 2.0, 0.7, -1.1}};
  Tensor B{{2, 3}, {0.4, -1.2, 0.9, 1.5, 0.2, -0.6}};
  Tensor c{{1, 2}, {0.3, -0.8}};
  Tensor D{{2, 2}, {2.0, 0.3, 0.3, 1.0}};
  Tensor e{{1, 2}, {0.25, -0.5}};

  BilevelLoss loss() const {
    return [this](Tape& tape, std::span<const Var> theta, std::span<const Var> alpha, const Batch& b) {
      const Var& th = theta[0];
      const Var& al = alpha[0];
      if (b.y.at(0) == 0) {
        Var d = add(th, scale(linear(al, tape.constant(A), Var()), -1.0));
        return add(scale(sum(mul(d, d)), 0.5), scale(sum(mul(th, th)), 0.1));
      }
      Var r = add(linear(th, tape.constant(B), Var()), scale(tape.constant(c), -1.0));
      Var quad = sum(mul(al, linear(al, tape.constant(D), Var())));
      return add(add(scale(sum(mul(r, r)), 0.5), scale(quad, 0.5)), sum(mul(al, tape.constant(e))));
    };
  }

  static Batch trn() { return {Tensor({1}), {0}}; }
  static Batch val() { return {Tensor({1}), {1}}; }

  double eval(const BilevelLoss& f, const Tensor& theta, const Tensor& alpha, const Batch& b) const {
    Tape tape;
    Var th = tape.constant(theta), al = tape.constant(alpha);
    const Var ts[1] = {th}, as[1] = {al};
    return f(tape, ts, as, b).value()[0];
  }
};

struct TinySearch {
  CellTemplate cell{2, 2, 1, 2, 2};
  NetworkTemplate net;
  Dataset data;

  TinySearch() {
    net.n_cells = 3;
    net.stem_width = 2;
    net.num_classes = 3;
    net.input = {3, 8, 8};
    DatasetSpec spec;
    spec.num_classes = 3;
    spec.input = {3, 8, 8};
    spec.train_size = 32;
    spec.test_size = 4;
    spec.seed = 2;
    data = make_synthetic(spec).train;
  }

  SearchConfig config() const {
    SearchConfig c;
    c.epochs = 2;
    c.batch_size = 8;
    c.arch_lr = 1.0;
    c.seed = 3;
    return c;
  }
};

Batch batch_of(const Dataset& d, int first, int count) {
  Dataset s = d.slice(first, count);
  return {s.images, s.labels};
}

}  // namespace

TEST_CASE("toy bilevel: first-order hypergradient against finite differences") {
  Toy toy;
  BilevelLoss f = toy.loss();
  Rng rng(4);
  const double xi = 0.3, h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor theta = random_tensor({1, 3}, rng), alpha = random_tensor({1, 2}, rng);
    ArchGradient g = first_order_arch_gradient(f, {theta}, {alpha}, Toy::trn(), Toy::val(), 1, xi);
    // Closed-form inner step: theta' = theta - xi * (theta - A alpha + 0.2 theta).
    auto unrolled = [&](const Tensor& a) {
      Tensor t = theta;
      for (int i = 0; i < 3; ++i) {
        double aa = 0.0;
        for (int k = 0; k < 2; ++k) aa += toy.A[i * 2 + k] * a[k];
        t[i] = theta[i] - xi * (1.2 * theta[i] - aa);
      }
      return t;
    };
    const Tensor fixed = unrolled(alpha);
    for (int k = 0; k < 2; ++k) {
      Tensor ap = alpha, am = alpha;
      ap[k] += h;
      am[k] -= h;
      // Central differences of L_val with the unrolled weights held fixed.
      const double fd_fixed = (toy.eval(f, fixed, ap, Toy::val()) - toy.eval(f, fixed, am, Toy::val())) / (2 * h);
      CHECK(std::abs(g.grad[0][k] - fd_fixed) <= 1e-3 * std::max(1.0, std::abs(fd_fixed)));
      // Central differences of the full unrolled objective, minus the omitted second-order term xi A^T grad_theta L_val.
      const double fd_full =
          (toy.eval(f, unrolled(ap), ap, Toy::val()) - toy.eval(f, unrolled(am), am, Toy::val())) / (2 * h);
      double second = 0.0;
      for (int i = 0; i < 3; ++i) {
        double gth = 0.0;  // (B^T (B theta' - c))_i
        for (int r = 0; r < 2; ++r) {
          double res = -toy.c[r];
          for (int q = 0; q < 3; ++q) res += toy.B[r * 3 + q] * fixed[q];
          gth += toy.B[r * 3 + i] * res;
        }
        second += xi * toy.A[i * 2 + k] * gth;
      }
      CHECK(std::abs(g.grad[0][k] - (fd_full - second)) <= 1e-3 * std::max(1.0, std::abs(fd_full)));
    }
  }
}

TEST_CASE("toy bilevel: zero inner rate gives the direct gradient") {
  Toy toy;
  Rng rng(5);
  Tensor theta = random_tensor({1, 3}, rng), alpha = random_tensor({1, 2}, rng);
  ArchGradient g = first_order_arch_gradient(toy.loss(), {theta}, {alpha}, Toy::trn(), Toy::val(), 3, 0.0);
  for (int k = 0; k < 2; ++k) {
    const double direct = toy.D[k * 2] * alpha[0] + toy.D[k * 2 + 1] * alpha[1] + toy.e[k];
    CHECK(g.grad[0][k] == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("toy bilevel: one inner step composes as 1 + 0") {
  Toy toy;
  Rng rng(6);
  Tensor theta = random_tensor({1, 3}, rng), alpha = random_tensor({1, 2}, rng);
  ArchGradient once = first_order_arch_gradient(toy.loss(), {theta}, {alpha}, Toy::trn(), Toy::val(), 1, 0.2);
  std::vector<Tensor> stepped = inner_unroll(toy.loss(), {theta}, {alpha}, Toy::trn(), 1, 0.2);
  ArchGradient split = first_order_arch_gradient(toy.loss(), stepped, {alpha}, Toy::trn(), Toy::val(), 0, 0.2);
  CHECK(once.grad[0] == split.grad[0]);
  CHECK(once.val_loss == split.val_loss);
}

TEST_CASE("supernet arch step with zero inner rate uses the direct validation gradient") {
  TinySearch ts;
  SuperNetwork net(ts.cell, ts.net, 1);
  Rng rng(2);
  net.arch().normal = random_tensor(net.arch().normal.shape(), rng, 0.5);
  net.arch().reduce = random_tensor(net.arch().reduce.shape(), rng, 0.5);
  SearchConfig cfg = ts.config();
  cfg.w_lr = 0.0;
  cfg.arch_lr = 0.5;
  Batch trn = batch_of(ts.data, 0, 8), val = batch_of(ts.data, 8, 8);
  const std::vector<Tensor> buffers_before = net.store().buffers();
  const std::vector<double> params_before = net.store().flat();
  double vl = 0.0;
  ArchParams next = arch_gradient_step(net, trn, val, cfg, &vl);
  CHECK(net.store().buffers() == buffers_before);
  CHECK(net.store().flat() == params_before);

  Tape tape;
  ForwardContext ctx = bind(tape, static_cast<const Model&>(net), Mode::train);
  ctx.arch_normal = tape.variable(net.arch().normal);
  ctx.arch_reduce = tape.variable(net.arch().reduce);
  Var loss = cross_entropy(net.forward(ctx, tape.constant(val.x)).logits, val.y);
  tape.backward(loss);
  CHECK(vl == doctest::Approx(loss.value()[0]).epsilon(1e-12));
  Tensor gn = tape.grad(ctx.arch_normal), gr = tape.grad(ctx.arch_reduce);
  for (std::size_t i = 0; i < gn.size(); ++i)
    CHECK(next.normal[i] == doctest::Approx(net.arch().normal[i] - 0.5 * gn[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < gr.size(); ++i)
    CHECK(next.reduce[i] == doctest::Approx(net.arch().reduce[i] - 0.5 * gr[i]).epsilon(1e-12));
}

TEST_CASE("supernet logit gradients match finite differences") {
  TinySearch ts;
  SuperNetwork net(ts.cell, ts.net, 1);
  Rng rng(9);
  net.arch().normal = random_tensor(net.arch().normal.shape(), rng, 0.5);
  net.arch().reduce = random_tensor(net.arch().reduce.shape(), rng, 0.5);
  Batch val = batch_of(ts.data, 0, 6);
  BilevelLoss f = supernet_loss(net);
  std::vector<Tensor> theta;
  for (const Param& p : net.store().params()) theta.push_back(p.value);
  const double err = testing::gradcheck(
      [&](Tape& tape, const std::vector<Var>& a) {
        std::vector<Var> th;
        for (const Tensor& t : theta) th.push_back(tape.constant(t));
        return f(tape, th, a, val);
      },
      {net.arch().normal, net.arch().reduce});
  CHECK(err < 1e-3);
}

TEST_CASE("search is deterministic given its seed") {
  TinySearch ts;
  SearchResult a = darts_search(ts.data, ts.cell, ts.net, ts.config());
  SearchResult b = darts_search(ts.data, ts.cell, ts.net, ts.config());
  CHECK(a.trace.to_csv() == b.trace.to_csv());
  CHECK(a.genotype == b.genotype);
  CHECK(a.arch.normal == b.arch.normal);
  CHECK(a.trace.epochs.size() == 2);
  CHECK(a.arch.all_finite());
  CHECK(a.trace.to_csv().rfind("epoch,val_loss,skip_logit_mean,genotype_string\n", 0) == 0);
  SearchConfig other = ts.config();
  other.seed = 4;
  CHECK(darts_search(ts.data, ts.cell, ts.net, other).trace.to_csv() != a.trace.to_csv());
}

TEST_CASE("search restricted to one op returns that op everywhere") {
  TinySearch ts;
  ArchParams init = ArchParams::zeros(ts.cell);
  init.restrict_to(OpKind::sep_conv_5x5);
  SearchConfig cfg = ts.config();
  cfg.epochs = 1;
  SearchResult r = darts_search(ts.data, ts.cell, ts.net, cfg, &init);
  for (const CellGenotype* c : {&r.genotype.normal, &r.genotype.reduce})
    for (const auto& node : c->nodes)
      for (const GenotypeEdge& e : node) CHECK(e.op == OpKind::sep_conv_5x5);
}

TEST_CASE("skip suppression alone drives skip weights down") {
  TinySearch ts;
  ArchParams init = ArchParams::zeros(ts.cell);
  for (int e = 0; e < ts.cell.num_edges(); ++e) init.normal[static_cast<std::size_t>(e) * kNumOps] = 2.0;
  SearchConfig cfg = ts.config();
  cfg.arch_lr = 0.0;
  cfg.skip_gamma = 0.5;
  cfg.epochs = 3;
  SearchResult r = darts_search(ts.data, ts.cell, ts.net, cfg, &init);
  double prev = 2.0;
  for (const SearchEpoch& e : r.trace.epochs) {
    CHECK(e.skip_logit_mean <= prev);
    CHECK_FALSE(e.negative_skip_logits);
    prev = e.skip_logit_mean;
  }
  // Two iterations per epoch, three epochs: 2 * 0.5^6.
  CHECK(prev == doctest::Approx(2.0 * std::pow(0.5, 6)));
}

TEST_CASE("exploding weights surface as SearchDiverged") {
  TinySearch ts;
  SearchConfig cfg = ts.config();
  cfg.w_lr = 1e200;
  cfg.grad_clip = 1e300;
  cfg.epochs = 4;
  CHECK_THROWS_AS(darts_search(ts.data, ts.cell, ts.net, cfg), SearchDiverged);
}

TEST_CASE("search config validation") {
  SearchConfig c;
  c.n_step = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.skip_gamma = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.val_split = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("random search") {
  CellTemplate cell{2, 2, 1, 2, 2};
  NetworkTemplate net;
  net.n_cells = 3;
  net.stem_width = 2;
  net.num_classes = 3;
  net.input = {3, 8, 8};
  DatasetSpec spec;
  spec.num_classes = 3;
  spec.input = {3, 8, 8};
  spec.train_size = 24;
  spec.test_size = 12;
  DataSplit data = make_synthetic(spec);
  TrainConfig brief;
  brief.epochs = 1;
  brief.batch_size = 8;

  RandomSearchResult one = random_search(cell, net, 1, 17, data, brief);
  Rng rng(17);
  CHECK(one.best == random_genotype(cell, rng));
  CHECK(std::isnan(one.candidates[0].val_accuracy));

  RandomSearchResult a = random_search(cell, net, 3, 5, data, brief), b = random_search(cell, net, 3, 5, data, brief);
  REQUIRE(a.candidates.size() == 3);
  double best = -1.0;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.candidates[i].genotype == b.candidates[i].genotype);
    CHECK(a.candidates[i].val_accuracy == b.candidates[i].val_accuracy);
    best = std::max(best, a.candidates[i].val_accuracy);
  }
  bool found = false;
  for (const auto& c : a.candidates) found = found || (c.genotype == a.best && c.val_accuracy == best);
  CHECK(found);
  CHECK_THROWS_AS(random_search(cell, net, 0, 1, data, brief), ConfigError);
}

TEST_CASE("variant naming and structure") {
  CHECK(variant_name(DartsVariant::darts_iii) == "DARTS-iii");
  CHECK(parse_variant("darts_ii") == DartsVariant::darts_ii);
  CHECK(parse_variant("DARTS") == DartsVariant::darts);
  CHECK_THROWS_AS(parse_variant("darts-iv"), ConfigError);
  VariantSettings s;
  SearchConfig base;
  CHECK(variant_search_config(DartsVariant::darts, base, s).n_step == 1);
  CHECK(variant_search_config(DartsVariant::darts_i, base, s).n_step == 5);
  CHECK(variant_search_config(DartsVariant::darts_i, base, s).skip_gamma == 1.0);
  CHECK(variant_search_config(DartsVariant::darts_ii, base, s).skip_gamma == 0.2);
  CHECK(variant_search_config(DartsVariant::darts_iii, base, s).n_step == 5);
  CHECK(variant_search_config(DartsVariant::darts_iii, base, s).skip_gamma == 0.2);

  Genotype d = darts_v1_genotype();
  CHECK(finalize_variant(DartsVariant::darts, d, s) == d);
  CHECK(topology_metrics(finalize_variant(DartsVariant::darts_ii, d, s)).skip_count == 0);
  Genotype iii = finalize_variant(DartsVariant::darts_iii, d, s);
  CHECK(topology_metrics(iii).skip_count == 0);
  CHECK(topology_metrics(iii).depth == 5);
  CHECK(topology_metrics(finalize_variant(DartsVariant::darts_i, d, s)).depth == 5);
}
