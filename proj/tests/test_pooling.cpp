#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lsta/pooling.hpp"
#include "lsta/rng.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace lsta;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

PoolingModel model_from(Tensor theta) {
  PoolingModel m;
  m.theta = std::move(theta);
  return m;
}

}  // namespace

TEST_CASE("category_scores on zero features returns the bias") {
  CounterRng rng(1);
  PoolingModel m = PoolingModel::init(4, 5, rng);
  Tensor zero = Tensor::zeros({4, 3, 3});
  Tensor plain = category_scores(zero, m);
  for (int c = 0; c < 5; ++c) CHECK(plain.data()[c] == 0.0);

  Tensor bias = random_tensor({5}, rng);
  Tensor biased = category_scores(zero, m, bias);
  for (int c = 0; c < 5; ++c) CHECK(biased.data()[c] == bias.data()[c]);

  CHECK_THROWS_AS(category_scores(zero, m, random_tensor({4}, rng)), std::invalid_argument);
}

TEST_CASE("category_scores is linear in the features") {
  CounterRng rng(2);
  PoolingModel m = PoolingModel::init(3, 4, rng);
  Tensor x = random_tensor({3, 4, 4}, rng);
  Tensor a = category_scores(x, m);
  Tensor b = category_scores(scale(x, 3.0), m);
  for (int c = 0; c < 4; ++c)
    CHECK(b.data()[c] == doctest::Approx(3.0 * a.data()[c]).epsilon(1e-13));
}

TEST_CASE("category_scores matches the double-loop oracle") {
  CounterRng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    PoolingModel m = PoolingModel::init(4, 5, rng);
    Tensor x = random_tensor({4, 3, 3}, rng);
    Tensor got = category_scores(x, m);
    const oracle::Vec avg = oracle::spatial_average({x.data(), x.data() + x.size()}, 4, 9);
    for (int c = 0; c < 5; ++c) {
      double want = 0.0;
      for (int k = 0; k < 4; ++k) want += avg[k] * m.theta.data()[k * 5 + c];
      CHECK(std::fabs(got.data()[c] - want) <= 1e-12);
    }
  }
}

TEST_CASE("select_category: argmax, ties to the lowest index") {
  CHECK(select_category(Tensor::from_data({3}, {0.1, 0.9, 0.3})) == 1);
  CHECK(select_category(Tensor::from_data({2}, {0.5, 0.5})) == 0);
  CHECK(select_category(Tensor::from_data({1}, {42.0})) == 0);
}

TEST_CASE("positive scaling never changes the bias-free selection") {
  CounterRng rng(4);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    PoolingModel m = PoolingModel::init(3, 6, rng);
    Tensor x = random_tensor({3, 3, 3}, rng);
    const double lambda = rng.next_uniform(0.05, 20.0);
    const int a = select_category(category_scores(x, m));
    const int b = select_category(category_scores(scale(x, lambda), m));
    if (a != b) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("attention_map basics") {
  CounterRng rng(5);
  SUBCASE("single channel with unit parameters reproduces the channel") {
    PoolingModel m = model_from(Tensor::full({1, 4}, 1.0));
    Tensor x = random_tensor({1, 3, 3}, rng);
    Tensor nu = attention_map(x, m);
    CHECK(max_abs_diff(nu, x) == 0.0);
  }
  SUBCASE("channel-constant features give a spatially constant map") {
    PoolingModel m = PoolingModel::init(3, 4, rng);
    Tensor x = Tensor::zeros({3, 3, 3});
    for (int c = 0; c < 3; ++c)
      for (int j = 0; j < 9; ++j) x.data()[c * 9 + j] = 0.3 * (c + 1);
    Tensor nu = attention_map(x, m);
    for (size_t i = 1; i < nu.size(); ++i)
      CHECK(nu.data()[i] == doctest::Approx(nu.data()[0]).epsilon(1e-13));
  }
}

TEST_CASE("attention_map equals the all-category oracle at the argmax") {
  CounterRng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    PoolingModel m = PoolingModel::init(6, 8, rng);
    Tensor x = random_tensor({6, 4, 4}, rng);
    int winner = -1;
    Tensor got = attention_map(x, m, &winner);

    // oracle: build every category's map, then index the argmax
    const oracle::Vec avg = oracle::spatial_average({x.data(), x.data() + x.size()}, 6, 16);
    int best = 0;
    double best_score = -1e300;
    for (int c = 0; c < 8; ++c) {
      double s = 0.0;
      for (int k = 0; k < 6; ++k) s += avg[k] * m.theta.data()[k * 8 + c];
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    CHECK(best == winner);
    oracle::Vec want(16, 0.0);
    for (int k = 0; k < 6; ++k)
      for (int j = 0; j < 16; ++j)
        want[j] += x.data()[k * 16 + j] * m.theta.data()[k * 8 + best];
    CHECK(max_abs_diff(got, want) <= 1e-12);
  }
}

TEST_CASE("attention_map_fullrank basics and oracle") {
  CounterRng rng(7);
  SUBCASE("winning column of ones scales by one") {
    Tensor theta = Tensor::zeros({3, 2});
    for (int k = 0; k < 3; ++k) {
      theta.data()[k * 2 + 0] = 1.0;  // category 0 wins for positive features
      theta.data()[k * 2 + 1] = -1.0;
    }
    PoolingModel m = model_from(theta);
    Tensor c = random_tensor({3, 3, 3}, rng, 0.1, 1.0);
    Tensor nu = attention_map_fullrank(c, m);
    CHECK(max_abs_diff(nu, c) == 0.0);
  }
  SUBCASE("zero memory: the bias alone decides the winner") {
    CounterRng rng2(8);
    PoolingModel m = PoolingModel::init(3, 4, rng2);
    Tensor zero = Tensor::zeros({3, 2, 2});
    Tensor bias = Tensor::from_data({4}, {0.0, 2.0, -1.0, 1.5});
    int winner = -1;
    Tensor nu = attention_map_fullrank(zero, m, bias, &winner);
    CHECK(winner == 1);
    for (size_t i = 0; i < nu.size(); ++i) CHECK(nu.data()[i] == 0.0);
  }
  SUBCASE("matches the per-channel scaling oracle") {
    for (int trial = 0; trial < 50; ++trial) {
      PoolingModel m = PoolingModel::init(4, 5, rng);
      Tensor c = random_tensor({4, 3, 3}, rng);
      int winner = -1;
      Tensor nu = attention_map_fullrank(c, m, {}, &winner);
      for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 9; ++j)
          CHECK(std::fabs(nu.data()[k * 9 + j] -
                          c.data()[k * 9 + j] * m.theta.data()[k * 5 + winner]) <= 1e-12);
    }
  }
}

TEST_CASE("instance_bias") {
  CounterRng rng(9);
  SUBCASE("zero regression weights give a zero bias") {
    PoolingModel m = PoolingModel::init(3, 4, rng);
    BiasController ctrl;
    ctrl.weight = Tensor::zeros({4, 4});
    Tensor b = instance_bias(random_tensor({3, 3, 3}, rng), m, ctrl);
    for (int c = 0; c < 4; ++c) CHECK(b.data()[c] == 0.0);
  }
  SUBCASE("identity regression returns the raw category scores") {
    Tensor theta = Tensor::zeros({4, 3});
    theta.data()[0 * 3 + 0] = 1.0;  // orthonormal columns
    theta.data()[1 * 3 + 1] = 1.0;
    theta.data()[2 * 3 + 2] = 1.0;
    PoolingModel m = model_from(theta);
    BiasController ctrl;
    ctrl.weight = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) ctrl.weight.data()[i * 3 + i] = 1.0;
    Tensor x = random_tensor({4, 2, 2}, rng);
    Tensor b = instance_bias(x, m, ctrl);
    Tensor scores = category_scores(x, m);
    CHECK(max_abs_diff(b, scores) <= 1e-15);
  }
  SUBCASE("matches the matrix-multiplication oracle") {
    for (int trial = 0; trial < 50; ++trial) {
      PoolingModel m = PoolingModel::init(3, 4, rng);
      BiasController ctrl = BiasController::init(4, rng);
      Tensor x = random_tensor({3, 3, 3}, rng);
      Tensor got = instance_bias(x, m, ctrl);
      const oracle::Vec avg = oracle::spatial_average({x.data(), x.data() + x.size()}, 3, 9);
      oracle::Vec v(4, 0.0);
      for (int c = 0; c < 4; ++c)
        for (int k = 0; k < 3; ++k) v[c] += avg[k] * m.theta.data()[k * 4 + c];
      for (int mcol = 0; mcol < 4; ++mcol) {
        double want = 0.0;
        for (int c = 0; c < 4; ++c) want += v[c] * ctrl.weight.data()[c * 4 + mcol];
        CHECK(std::fabs(got.data()[mcol] - want) <= 1e-12);
      }
    }
  }
}

TEST_CASE("per-channel scaling is equivariant to the spatial average") {
  CounterRng rng(10);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor x = random_tensor({4, 3, 3}, rng);
    Tensor theta_col = random_tensor({4}, rng);
    Tensor left = spatial_average(scale_channels(x, theta_col));
    Tensor avg = spatial_average(x);
    for (int k = 0; k < 4; ++k)
      worst = std::max(worst, std::fabs(left.data()[k] - avg.data()[k] * theta_col.data()[k]));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("attention_map equals channel_sum of the full-rank map") {
  CounterRng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    PoolingModel m = PoolingModel::init(5, 6, rng);
    Tensor x = random_tensor({5, 3, 3}, rng);
    Tensor reduced = attention_map(x, m);
    Tensor full = channel_sum(attention_map_fullrank(x, m));
    CHECK(max_abs_diff(reduced, full) <= 1e-12);
  }
}

TEST_CASE("pooling gradients through the selected branch") {
  int done = 0;
  for (uint64_t seed = 100; done < 20 && seed < 400; ++seed) {
    CounterRng fixture_rng(seed);
    PoolingModel m = PoolingModel::init(3, 4, fixture_rng);
    BiasController ctrl = BiasController::init(4, fixture_rng);
    Tensor x = random_tensor({3, 3, 3}, fixture_rng);
    // strict-argmax fixture for both the plain and the bias-shifted selector
    if (selection_margin(category_scores(x, m)) < 1e-3) continue;
    if (selection_margin(category_scores(x, m, instance_bias(x, m, ctrl))) < 1e-3) continue;

    m.theta.set_requires_grad(true);
    ctrl.weight.set_requires_grad(true);
    x.set_requires_grad(true);
    auto build = [&] {
      Tensor bias = instance_bias(x, m, ctrl);
      Tensor nu = attention_map_fullrank(x, m, bias);
      Tensor cam = attention_map(x, m);
      return add(reduce_sum(hadamard(nu, nu)), reduce_sum(hadamard(cam, cam)));
    };
    m.theta.zero_grad();
    ctrl.weight.zero_grad();
    x.zero_grad();
    {
      Tape tape;
      backward(build(), tape);
    }
    auto loss_value = [&] { return build().scalar_value(); };
    for (Tensor* leaf : {&x, &m.theta, &ctrl.weight}) {
      Tensor numeric = finite_diff_grad(loss_value, *leaf, 1e-5);
      CHECK(testutil::max_grad_rel_err(*leaf, numeric) <= 1e-5);
    }
    ++done;
  }
  CHECK(done == 20);
}
