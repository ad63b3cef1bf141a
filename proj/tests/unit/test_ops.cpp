#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "naslab/core/error.hpp"
#include "naslab/core/ops.hpp"

using namespace naslab;
using naslab::testing::gradcheck;
using naslab::testing::random_tensor;

namespace {

// sum(y * w) with a fixed random w, so each output element gets its own upstream gradient.
Var probe(const Var& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  Var w = y.tape().constant(random_tensor(y.shape(), rng));
  return sum(mul(y, w));
}

double check_conv(Shape xs, Shape ws, Conv2dGeometry g, bool with_bias) {
  Rng rng(5);
  std::vector<Tensor> in{random_tensor(xs, rng), random_tensor(ws, rng)};
  if (with_bias) in.push_back(random_tensor({ws[0]}, rng));
  return gradcheck(
      [&](Tape&, const std::vector<Var>& v) { return probe(conv2d(v[0], v[1], with_bias ? v[2] : Var(), g)); }, in);
}

}  // namespace

TEST_CASE("conv2d gradients across geometries") {
  CHECK(check_conv({2, 3, 5, 5}, {4, 3, 3, 3}, {}, true) < 1e-6);
  CHECK(check_conv({2, 3, 6, 6}, {2, 3, 1, 1}, {1, 1, 1, 1, 0, 0, 1, 1}, false) < 1e-6);
  CHECK(check_conv({1, 4, 7, 7}, {4, 1, 3, 3}, {3, 3, 2, 2, 1, 1, 1, 4}, false) < 1e-6);
  CHECK(check_conv({1, 4, 7, 7}, {4, 1, 5, 5}, {5, 5, 1, 1, 4, 4, 2, 4}, false) < 1e-6);
  CHECK(check_conv({1, 2, 6, 6}, {3, 2, 1, 7}, {1, 7, 1, 2, 0, 3, 1, 1}, false) < 1e-6);
  CHECK(check_conv({1, 4, 6, 6}, {6, 2, 3, 3}, {3, 3, 2, 2, 1, 1, 1, 2}, true) < 1e-6);
  CHECK(check_conv({2, 3, 6, 6}, {2, 3, 1, 1}, {1, 1, 2, 2, 0, 0, 1, 1}, false) < 1e-6);
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(1);
  Tensor x = random_tensor({1, 2, 5, 4}, rng), w = random_tensor({3, 2, 3, 3}, rng);
  Conv2dGeometry g{3, 3, 2, 1, 1, 1, 1, 1};
  Tape tape;
  Tensor y = conv2d(tape.constant(x), tape.constant(w), Var(), g).value();
  REQUIRE(y.shape() == Shape{1, 3, 3, 4});
  for (int o = 0; o < 3; ++o)
    for (int oh = 0; oh < 3; ++oh)
      for (int ow = 0; ow < 4; ++ow) {
        double s = 0.0;
        for (int c = 0; c < 2; ++c)
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
              const int ih = oh * 2 - 1 + i, iw = ow - 1 + j;
              if (ih < 0 || ih >= 5 || iw < 0 || iw >= 4) continue;
              s += w[((o * 2 + c) * 3 + i) * 3 + j] * x[(c * 5 + ih) * 4 + iw];
            }
        CHECK(y[(o * 3 + oh) * 4 + ow] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("batch_norm gradients in both modes") {
  Rng rng(2);
  Tensor rm({3}, 0.1), rv({3}, 2.0);
  std::vector<Tensor> in{random_tensor({4, 3, 2, 2}, rng), random_tensor({3}, rng), random_tensor({3}, rng)};
  for (Mode mode : {Mode::train, Mode::eval}) {
    CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) {
            return probe(batch_norm(v[0], v[1], v[2], rm, rv, mode, nullptr, nullptr));
          }, in) < 1e-6);
    CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) {
            return probe(batch_norm(v[0], Var(), Var(), rm, rv, mode, nullptr, nullptr));
          }, {in[0]}) < 1e-6);
  }
}

TEST_CASE("batch_norm normalizes and updates running statistics") {
  Rng rng(3);
  Tensor x = random_tensor({5, 2, 3, 3}, rng, 3.0);
  Tensor rm({2}, 0.0), rv({2}, 1.0);
  Tape tape;
  Tensor y = batch_norm(tape.constant(x), Var(), Var(), rm, rv, Mode::train, &rm, &rv).value();
  for (int c = 0; c < 2; ++c) {
    double s = 0, ss = 0, xs = 0;
    for (int n = 0; n < 5; ++n)
      for (int k = 0; k < 9; ++k) {
        const double v = y[(n * 2 + c) * 9 + k];
        s += v;
        ss += v * v;
        xs += x[(n * 2 + c) * 9 + k];
      }
    CHECK(s / 45 == doctest::Approx(0.0).epsilon(1e-12).scale(1));
    CHECK(ss / 45 == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(rm[c] == doctest::Approx(0.1 * xs / 45));
  }
}

TEST_CASE("pooling gradients and padding exclusion") {
  Rng rng(4);
  std::vector<Tensor> in{random_tensor({2, 2, 5, 5}, rng)};
  for (Pool2dGeometry g : {Pool2dGeometry{3, 1, 1}, Pool2dGeometry{3, 2, 1}}) {
    CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) { return probe(avg_pool2d(v[0], g)); }, in) < 1e-6);
    CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) { return probe(max_pool2d(v[0], g)); }, in) < 1e-6);
  }
  Tape tape;
  Tensor ones({1, 1, 3, 3}, 1.0);
  Tensor avg = avg_pool2d(tape.constant(ones), {}).value();
  for (double v : avg.values()) CHECK(v == 1.0);
}

TEST_CASE("dense, concat, global pool and blend gradients") {
  Rng rng(6);
  CHECK(gradcheck([](Tape&, const std::vector<Var>& v) { return probe(linear(v[0], v[1], v[2])); },
                  {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5}, rng)}) < 1e-6);
  CHECK(gradcheck([](Tape&, const std::vector<Var>& v) {
          std::vector<Var> parts{v[0], relu(v[1])};
          return probe(global_avg_pool(concat_channels(parts)));
        }, {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)}) < 1e-6);
  CHECK(gradcheck([](Tape&, const std::vector<Var>& v) { return probe(blend_patch(v[0], v[1], 2, 1, 0.7)); },
                  {random_tensor({2, 3, 5, 4}, rng), random_tensor({3, 3, 3}, rng)}) < 1e-6);
  CHECK(gradcheck([](Tape&, const std::vector<Var>& v) {
          std::vector<Var> terms{v[0], v[1]};
          return probe(add_n(terms));
        }, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}) < 1e-6);
}

TEST_CASE("loss and softmax gradients") {
  Rng rng(7);
  std::vector<int> labels{2, 0, 1};
  CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) { return cross_entropy(v[0], labels); },
                  {random_tensor({3, 4}, rng)}) < 1e-6);
  Tensor target = softmax_rows(random_tensor({3, 4}, rng));
  CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) { return soft_cross_entropy(v[0], target); },
                  {random_tensor({3, 4}, rng)}) < 1e-6);
  std::vector<bool> mask{true, false, true, true};
  CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) { return probe(softmax_rows(v[0], mask)); },
                  {random_tensor({2, 4}, rng)}) < 1e-6);
  std::vector<int> cols{1, 3};
  CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) { return mean_of_columns(v[0], cols); },
                  {random_tensor({3, 4}, rng)}) < 1e-6);
  CHECK(gradcheck([&](Tape&, const std::vector<Var>& v) {
          std::vector<Var> terms{v[0], Var(), v[1]};
          return probe(weighted_sum(terms, softmax_rows(v[2]), 1));
        }, {random_tensor({2, 2}, rng), random_tensor({2, 2}, rng), random_tensor({2, 3}, rng)}) < 1e-6);
}

TEST_CASE("cross entropy value") {
  Tape tape;
  Var z = tape.constant(Tensor({1, 2}, std::vector<double>{0.0, 0.0}));
  std::vector<int> y{1};
  CHECK(cross_entropy(z, y).value()[0] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("shape errors are rejected") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({3, 2}));
  CHECK_THROWS_AS(add(a, b), InputError);
  CHECK_THROWS_AS(conv2d(tape.constant(Tensor({1, 2, 4, 4})), tape.constant(Tensor({1, 3, 3, 3})), Var(), {}),
                  InputError);
}
