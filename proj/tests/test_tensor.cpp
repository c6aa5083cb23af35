#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "lsta/rng.hpp"
#include "lsta/tensor.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace lsta;
using testutil::max_abs_diff;
using testutil::random_tensor;

TEST_CASE("sigmoid and tanh at zero") {
  Tensor z = Tensor::zeros({2, 3, 3});
  Tensor s = sigmoid(z);
  Tensor t = tanh(z);
  for (size_t i = 0; i < s.size(); ++i) {
    CHECK(s.data()[i] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(t.data()[i] == 0.0);
  }
}

TEST_CASE("hadamard with ones is the identity") {
  CounterRng rng(7);
  Tensor x = random_tensor({3, 4, 4}, rng);
  Tensor y = hadamard(x, Tensor::full({3, 4, 4}, 1.0));
  for (size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("binary broadcast accepts a location map and rejects other mismatches") {
  CounterRng rng(9);
  Tensor x = random_tensor({4, 3, 3}, rng);
  Tensor map = random_tensor({1, 3, 3}, rng);
  Tensor prod = hadamard(x, map);
  for (int c = 0; c < 4; ++c)
    for (int j = 0; j < 9; ++j)
      CHECK(prod.data()[c * 9 + j] == x.data()[c * 9 + j] * map.data()[j]);
  Tensor sum = add(map, x);
  for (int c = 0; c < 4; ++c)
    for (int j = 0; j < 9; ++j) CHECK(sum.data()[c * 9 + j] == x.data()[c * 9 + j] + map.data()[j]);

  CHECK_THROWS_WITH_AS(add(x, random_tensor({4, 2, 3}, rng)),
                       doctest::Contains("[4x3x3]"), std::invalid_argument);
  CHECK_THROWS_AS(hadamard(x, random_tensor({2, 3, 3}, rng)), std::invalid_argument);
}

TEST_CASE("conv2d_same identity kernel and bias-only input") {
  CounterRng rng(11);
  Tensor x = random_tensor({1, 5, 5}, rng);
  Tensor k = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor out = conv2d_same(x, k, Tensor::zeros({1}));
  CHECK(max_abs_diff(out, x) == 0.0);

  Tensor zero_in = Tensor::zeros({2, 4, 4});
  Tensor kernel = random_tensor({3, 2, 3, 3}, rng);
  Tensor bias = Tensor::from_data({3}, {0.5, -1.25, 2.0});
  Tensor out2 = conv2d_same(zero_in, kernel, bias);
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < 16; ++j) CHECK(out2.data()[c * 16 + j] == bias.data()[c]);
}

TEST_CASE("conv2d_same rejects even kernels and channel mismatches") {
  CounterRng rng(12);
  Tensor x = random_tensor({2, 4, 4}, rng);
  CHECK_THROWS_AS(conv2d_same(x, random_tensor({3, 2, 2, 2}, rng), Tensor::zeros({3})),
                  std::invalid_argument);
  CHECK_THROWS_AS(conv2d_same(x, random_tensor({3, 4, 3, 3}, rng), Tensor::zeros({3})),
                  std::invalid_argument);
}

TEST_CASE("conv2d_same matches the nested-loop reference on random instances") {
  CounterRng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int ci = 1 + static_cast<int>(rng.next_below(8));
    const int co = 1 + static_cast<int>(rng.next_below(8));
    const int h = 1 + static_cast<int>(rng.next_below(8));
    const int w = 1 + static_cast<int>(rng.next_below(8));
    const int k = 1 + 2 * static_cast<int>(rng.next_below(4));  // 1,3,5,7
    Tensor x = random_tensor({ci, h, w}, rng);
    Tensor kern = random_tensor({co, ci, k, k}, rng);
    Tensor bias = random_tensor({co}, rng);
    const bool with_extra = rng.next_below(2) == 1;
    Tensor extra = with_extra ? random_tensor({co, h, w}, rng) : Tensor{};

    Tensor got = conv2d_same(x, kern, bias, extra);
    oracle::Vec want = oracle::conv2d_same(
        {x.data(), x.data() + x.size()}, ci, h, w, {kern.data(), kern.data() + kern.size()}, co, k,
        {bias.data(), bias.data() + bias.size()},
        with_extra ? oracle::Vec{extra.data(), extra.data() + extra.size()} : oracle::Vec{});
    worst = std::max(worst, max_abs_diff(got, want));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("conv3d matches the nested-loop reference") {
  CounterRng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int t = 3 + static_cast<int>(rng.next_below(4));
    const int ci = 1 + static_cast<int>(rng.next_below(3));
    const int co = 1 + static_cast<int>(rng.next_below(3));
    const int kt = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(t)));
    const int h = 2 + static_cast<int>(rng.next_below(4));
    const int w = 2 + static_cast<int>(rng.next_below(4));
    Tensor x = random_tensor({t, ci, h, w}, rng);
    Tensor kern = random_tensor({co, ci, kt, 3, 3}, rng);
    Tensor bias = random_tensor({co}, rng);
    Tensor got = conv3d_same_spatial(x, kern, bias);
    oracle::Vec want =
        oracle::conv3d({x.data(), x.data() + x.size()}, t, ci, h, w,
                       {kern.data(), kern.data() + kern.size()}, co, kt, 3,
                       {bias.data(), bias.data() + bias.size()});
    CHECK(max_abs_diff(got, want) <= 1e-12);
  }
}

TEST_CASE("spatial_average basics and oracle comparison") {
  Tensor c = Tensor::full({3, 2, 2}, 4.25);
  Tensor avg = spatial_average(c);
  for (int i = 0; i < 3; ++i) CHECK(avg.data()[i] == doctest::Approx(4.25).epsilon(1e-15));

  Tensor steps = Tensor::from_data({1, 2, 2}, {0, 1, 2, 3});
  CHECK(spatial_average(steps).data()[0] == doctest::Approx(1.5).epsilon(1e-15));

  CounterRng rng(5);
  Tensor x = random_tensor({8, 4, 4}, rng);
  oracle::Vec want = oracle::spatial_average({x.data(), x.data() + x.size()}, 8, 16);
  CHECK(max_abs_diff(spatial_average(x), want) <= 1e-12);
}

TEST_CASE("channel_sum basics and oracle comparison") {
  CounterRng rng(6);
  Tensor one = random_tensor({1, 3, 3}, rng);
  CHECK(max_abs_diff(channel_sum(one), one) == 0.0);

  Tensor x = random_tensor({1, 3, 3}, rng);
  Tensor neg = scale(x, -1.0);
  Tensor both = concat_channels(x, neg);
  Tensor zero = channel_sum(both);
  for (size_t i = 0; i < zero.size(); ++i) CHECK(std::fabs(zero.data()[i]) == 0.0);

  Tensor r = random_tensor({5, 4, 3}, rng);
  oracle::Vec want = oracle::channel_sum({r.data(), r.data() + r.size()}, 5, 12);
  CHECK(max_abs_diff(channel_sum(r), want) <= 1e-12);
}

TEST_CASE("softmax_locations contract") {
  Tensor u = Tensor::full({1, 4, 4}, 0.37);
  Tensor su = softmax_locations(u);
  for (size_t i = 0; i < su.size(); ++i)
    CHECK(su.data()[i] == doctest::Approx(1.0 / 16).epsilon(1e-13));

  Tensor dom = Tensor::zeros({1, 4, 4});
  dom.data()[5] = 50.0;
  CHECK(softmax_locations(dom).data()[5] > 0.999);

  CounterRng rng(8);
  Tensor x = random_tensor({1, 5, 5}, rng, -3.0, 3.0);
  Tensor shifted = add(x, Tensor::full({1, 5, 5}, 7.3));
  Tensor a = softmax_locations(x);
  Tensor b = softmax_locations(shifted);
  CHECK(max_abs_diff(a, b) <= 1e-12);

  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) sum += a.data()[i];
  CHECK(std::fabs(sum - 1.0) <= 1e-12);
}

TEST_CASE("backward on simple losses") {
  CounterRng rng(21);
  SUBCASE("sum of x") {
    Tensor x = random_tensor({2, 3, 3}, rng).set_requires_grad(true);
    Tape tape;
    Tensor loss = reduce_sum(x);
    backward(loss, tape);
    for (size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == 1.0);
  }
  SUBCASE("half sum of squares") {
    Tensor x = random_tensor({2, 3, 3}, rng).set_requires_grad(true);
    Tape tape;
    Tensor loss = scale(reduce_sum(hadamard(x, x)), 0.5);
    backward(loss, tape);
    for (size_t i = 0; i < x.size(); ++i)
      CHECK(x.grad()[i] == doctest::Approx(x.data()[i]).epsilon(1e-14));
  }
  SUBCASE("non-scalar loss is an error") {
    Tensor x = random_tensor({2, 2, 2}, rng).set_requires_grad(true);
    Tape tape;
    Tensor y = sigmoid(x);
    CHECK_THROWS_AS(backward(y, tape), std::invalid_argument);
  }
}

TEST_CASE("finite differences on known functions") {
  SUBCASE("identity sum") {
    Tensor x = Tensor::from_data({3}, {0.5, -2.0, 4.0});
    Tensor g = finite_diff_grad([&] {
      double s = 0.0;
      for (size_t i = 0; i < x.size(); ++i) s += x.data()[i];
      return s;
    }, x, 1e-5);
    for (size_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("half sum of squares at [1,2]") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0});
    Tensor g = finite_diff_grad([&] {
      double s = 0.0;
      for (size_t i = 0; i < x.size(); ++i) s += 0.5 * x.data()[i] * x.data()[i];
      return s;
    }, x, 1e-5);
    CHECK(g.data()[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(g.data()[1] == doctest::Approx(2.0).epsilon(1e-8));
  }
}

namespace {

// Builds a scalar loss from `op` applied to leaf tensors, then compares the
// recorded gradient of each leaf against central differences.
template <typename BuildLoss>
void gradcheck_against_fd(std::vector<Tensor>& leaves, BuildLoss&& build, double tol = 1e-6) {
  for (Tensor& leaf : leaves) leaf.set_requires_grad(true);
  {
    Tape tape;
    Tensor loss = build();
    backward(loss, tape);
  }
  auto loss_value = [&] { return build().scalar_value(); };
  for (Tensor& leaf : leaves) {
    Tensor numeric = finite_diff_grad(loss_value, leaf, 1e-5);
    CHECK(testutil::max_grad_rel_err(leaf, numeric) <= tol);
  }
}

}  // namespace

TEST_CASE("primitive gradients vs central differences, 50 instances each") {
  CounterRng rng(431);
  // sigmoid / tanh / add / hadamard (with and without broadcast) / scale
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> leaves = {random_tensor({2, 3, 3}, rng), random_tensor({2, 3, 3}, rng),
                                  random_tensor({1, 3, 3}, rng)};
    gradcheck_against_fd(leaves, [&] {
      Tensor a = sigmoid(leaves[0]);
      Tensor b = tanh(leaves[1]);
      Tensor c = hadamard(add(a, b), leaves[2]);
      return reduce_sum(scale(c, 0.75));
    });
  }
  // conv2d with extra bias
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> leaves = {random_tensor({2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng),
                                  random_tensor({3}, rng), random_tensor({3, 4, 4}, rng)};
    gradcheck_against_fd(leaves, [&] {
      return reduce_sum(tanh(conv2d_same(leaves[0], leaves[1], leaves[2], leaves[3])));
    });
  }
  // reductions, softmax, pooling, slicing
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> leaves = {random_tensor({4, 4, 4}, rng), random_tensor({1, 2, 2}, rng)};
    gradcheck_against_fd(leaves, [&] {
      Tensor pooled = avgpool2(leaves[0]);                      // [4,2,2]
      Tensor sm = softmax_locations(add(channel_sum(pooled), leaves[1]));
      Tensor picked = slice_channels(leaves[0], 1, 2);
      Tensor avg = spatial_average(picked);                     // [2]
      return add(reduce_sum(hadamard(sm, sm)), reduce_sum(hadamard(avg, avg)));
    });
  }
  // linear / matrix_column / scale_channels / cross_entropy
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> leaves = {random_tensor({3, 3, 3}, rng), random_tensor({3, 5}, rng),
                                  random_tensor({5}, rng)};
    const int label = static_cast<int>(rng.next_below(5));
    gradcheck_against_fd(leaves, [&] {
      Tensor scaled = scale_channels(leaves[0], matrix_column(leaves[1], 2));
      Tensor logits = linear(spatial_average(scaled), leaves[1], leaves[2]);
      return cross_entropy(logits, label);
    });
  }
  // conv3d + temporal mean + stack
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> leaves = {random_tensor({2, 3, 3}, rng), random_tensor({2, 3, 3}, rng),
                                  random_tensor({2, 3, 3}, rng), random_tensor({2, 2, 2, 3, 3}, rng),
                                  random_tensor({2}, rng)};
    gradcheck_against_fd(leaves, [&] {
      Tensor seq = stack_frames({leaves[0], leaves[1], leaves[2]});
      Tensor conv = conv3d_same_spatial(seq, leaves[3], leaves[4]);
      return reduce_sum(tanh(temporal_mean(conv)));
    });
  }
}

TEST_CASE("ops are deterministic across runs") {
  auto compute = [] {
    CounterRng rng(99);
    Tensor x = random_tensor({3, 6, 6}, rng);
    Tensor k = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor y = softmax_locations(channel_sum(tanh(conv2d_same(x, k, b))));
    return std::vector<double>(y.data(), y.data() + y.size());
  };
  const auto a = compute();
  const auto b = compute();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("avgpool2 requires even extents") {
  CounterRng rng(3);
  CHECK_THROWS_AS(avgpool2(random_tensor({1, 3, 4}, rng)), std::invalid_argument);
  Tensor x = Tensor::from_data({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(avgpool2(x).data()[0] == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("run_backward twice accumulates additively") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}).set_requires_grad(true);
  {
    Tape tape;
    backward(reduce_sum(x), tape);
  }
  {
    Tape tape;
    backward(reduce_sum(x), tape);
  }
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}
