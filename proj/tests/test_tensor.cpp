#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fmla/kernels.hpp"
#include "fmla/ops.hpp"
#include "testutil.hpp"

using namespace fmla;

TEST_CASE("matmul identity and hand-sum cases") {
  Tensor i2 = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul(i2, a);
  CHECK(out.raw() == std::vector<double>{1, 2, 3, 4});

  Tensor row = Tensor::from_data({1, 2}, {1, 2});
  Tensor col = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(row, col).scalar() == doctest::Approx(11.0));
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient: d sum(AB) / dA equals ones * B^T and passes FD") {
  Tensor a = testutil::random_tensor({4, 5}, 41, /*requires_grad=*/true);
  Tensor b = testutil::random_tensor({5, 3}, 42, /*requires_grad=*/true);
  {
    Tape::Scope scope;
    Tensor loss = sum_all(matmul(a, b));
    backward(loss);
    for (int i = 0; i < 4; ++i)
      for (int k = 0; k < 5; ++k) {
        double want = 0.0;
        for (int j = 0; j < 3; ++j) want += b(k, j);
        CHECK(a.grad()[static_cast<std::size_t>(i) * 5 + k] ==
              doctest::Approx(want).epsilon(1e-12));
      }
  }
  auto f = [&] { return sum_all(matmul(a, b)); };
  const Tensor params[] = {a, b};
  auto res = gradient_check(f, params, 1e-5);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("softmax basic rows") {
  Tensor u = softmax_lastdim(Tensor::from_data({3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i)
    CHECK(u(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor v = softmax_lastdim(Tensor::from_data({2}, {0.0, std::log(3.0)}));
  CHECK(v(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(v(1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one, entries in (0,1), shift invariant") {
  Tensor x = testutil::random_tensor({20, 9}, 43, false, -8.0, 8.0);
  Tensor y = softmax_lastdim(x);
  for (int r = 0; r < 20; ++r) {
    double sum = 0.0;
    for (int j = 0; j < 9; ++j) {
      CHECK(y(r, j) > 0.0);
      CHECK(y(r, j) < 1.0);
      sum += y(r, j);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  Tensor shifted = shift_columns(x, Tensor::full({9}, 17.25));
  Tensor y2 = softmax_lastdim(shifted);
  CHECK(testutil::max_abs_diff(y.raw(), y2.raw()) <= 1e-12);
}

TEST_CASE("conv1d pointwise identity and zeroed groups") {
  Tensor x = testutil::random_tensor({3, 12}, 44);
  std::vector<double> wdata(9, 0.0);
  wdata[0 * 3 + 0] = 1;  // w[o][i][0] with k=1: identity mapping per channel
  wdata[1 * 3 + 1] = 1;
  wdata[2 * 3 + 2] = 1;
  Tensor w = Tensor::from_data({3, 3, 1}, wdata);
  CHECK(conv1d_same(x, w).raw() == x.raw());

  // groups=2, second group's weights zero -> its output channels all zero
  Tensor xg = testutil::random_tensor({4, 10}, 45);
  Tensor wg = testutil::random_tensor({6, 2, 3}, 46);
  for (int o = 3; o < 6; ++o)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j)
        wg.raw()[(static_cast<std::size_t>(o) * 2 + i) * 3 + j] = 0.0;
  Tensor out = conv1d_same(xg, wg, 2);
  for (int o = 3; o < 6; ++o)
    for (int t = 0; t < 10; ++t) CHECK(out(o, t) == 0.0);
}

TEST_CASE("conv1d agrees with the independent triple-loop oracle") {
  // the spec's spike input
  Tensor x = Tensor::from_data({1, 4}, {0, 1, 0, 0});
  Tensor w = Tensor::from_data({1, 1, 3}, {1, 2, 3});
  Tensor got = conv1d_same(x, w);
  std::vector<double> want(4);
  ref::conv1d_same(x.raw().data(), w.raw().data(), nullptr, want.data(), 1, 1, 4,
                   3, 1);
  CHECK(got.raw() == want);

  Tensor xr = testutil::random_tensor({5, 23}, 47);
  Tensor wr = testutil::random_tensor({7, 5, 3}, 48);
  Tensor b = testutil::random_tensor({7}, 49);
  Tensor got2 = conv1d_same(xr, wr, b, 1);
  std::vector<double> want2(7 * 23);
  ref::conv1d_same(xr.raw().data(), wr.raw().data(), b.raw().data(),
                   want2.data(), 5, 7, 23, 3, 1);
  CHECK(testutil::max_abs_diff(got2.raw(), want2) <= 1e-12);
}

TEST_CASE("conv1d divisibility and kernel validation") {
  Tensor x = Tensor::zeros({3, 8});
  Tensor w = Tensor::zeros({4, 1, 3});
  CHECK_THROWS_AS(conv1d_same(x, w, 2), ConfigError);
  Tensor weven = Tensor::zeros({4, 3, 2});
  CHECK_THROWS_AS(conv1d_same(x, weven, 1), ConfigError);
}

TEST_CASE("conv1d gradients pass finite differences") {
  Tensor x = testutil::random_tensor({4, 9}, 50, true);
  Tensor w = testutil::random_tensor({6, 2, 3}, 51, true);
  Tensor b = testutil::random_tensor({6}, 52, true);
  auto f = [&] { return sum_all(mul(conv1d_same(x, w, b, 2),
                                    conv1d_same(x, w, b, 2))); };
  const Tensor params[] = {x, w, b};
  CHECK(gradient_check(f, params, 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("linear interpolation sampling: midpoint, lattice, clamping") {
  Tensor x = Tensor::from_data({1, 4}, {1, 2, 3, 4});
  CHECK(linear_interp_sample(x, Tensor::from_data({1}, {2.5})).raw()[0] ==
        doctest::Approx(3.5));
  CHECK(linear_interp_sample(x, Tensor::from_data({1}, {2.0})).raw()[0] == 3.0);
  // out-of-range clamps to the border value
  CHECK(linear_interp_sample(x, Tensor::from_data({1}, {11.0})).raw()[0] == 4.0);
  CHECK(linear_interp_sample(x, Tensor::from_data({1}, {-3.0})).raw()[0] == 1.0);
}

TEST_CASE("interpolation position gradient matches x[3]-x[2] and FD") {
  Tensor x = Tensor::from_data({1, 4}, {1, 2, 3, 4}, true);
  Tensor pos = Tensor::from_data({1}, {2.5}, true);
  {
    Tape::Scope scope;
    Tensor out = sum_all(linear_interp_sample(x, pos));
    backward(out);
    CHECK(pos.grad()[0] == doctest::Approx(1.0));  // x[3]-x[2]
  }
  auto f = [&] { return sum_all(linear_interp_sample(x, pos)); };
  const Tensor params[] = {x, pos};
  CHECK(gradient_check(f, params, 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("layer_norm rows") {
  Tensor gain1 = Tensor::full({3}, 1.0);
  Tensor bias0 = Tensor::zeros({3});
  Tensor constant = Tensor::from_data({1, 3}, {5, 5, 5});
  Tensor flat = layer_norm(constant, gain1, bias0);
  for (double v : flat.raw()) CHECK(v == 0.0);

  Tensor g2 = Tensor::full({2}, 1.0), b2 = Tensor::zeros({2});
  Tensor row = Tensor::from_data({1, 2}, {1, 3});
  Tensor out = layer_norm(row, g2, b2);
  CHECK(out(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(out(0, 1) == doctest::Approx(1.0).epsilon(1e-4));

  Tensor bias = Tensor::from_data({2}, {2.5, -1.25});
  Tensor zero_gain = layer_norm(row, Tensor::zeros({2}), bias);
  CHECK(zero_gain(0, 0) == 2.5);
  CHECK(zero_gain(0, 1) == -1.25);
}

TEST_CASE("layer_norm gradients pass finite differences") {
  Tensor x = testutil::random_tensor({5, 7}, 53, true);
  Tensor g = testutil::random_tensor({7}, 54, true);
  Tensor b = testutil::random_tensor({7}, 55, true);
  auto f = [&] {
    Tensor y = layer_norm(x, g, b);
    return sum_all(mul(y, y));
  };
  const Tensor params[] = {x, g, b};
  CHECK(gradient_check(f, params, 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("gradient_check on sum of squares is nearly exact") {
  Tensor x = testutil::random_tensor({6}, 56, true);
  Tensor x2d = reshape(x, {1, 6});
  auto f = [&] { return sum_all(mul(x, x)); };
  const Tensor params[] = {x};
  auto res = gradient_check(f, params, 1e-5);
  CHECK(res.max_rel_error < 1e-7);
  (void)x2d;
}

TEST_CASE("gradient_check on a constant function reports ~0") {
  Tensor x = testutil::random_tensor({4}, 57, true);
  auto f = [&] { return Tensor::full({1}, 3.25); };
  const Tensor params[] = {x};
  CHECK(gradient_check(f, params, 1e-5).max_rel_error < 1e-12);
}

TEST_CASE("gradient_check validates its step range") {
  Tensor x = testutil::random_tensor({2}, 58, true);
  auto f = [&] { return sum_all(x); };
  const Tensor params[] = {x};
  CHECK_THROWS_AS(gradient_check(f, params, 1e-2), ConfigError);
}

TEST_CASE("activations: ReLU exact gate, GELU monotone where defined") {
  Tensor x = Tensor::from_data({7}, {-3, -1, -0.2, 0, 0.4, 1, 9});
  Tensor r = relu(x);
  for (int i = 0; i < 7; ++i)
    CHECK(r(i) == (x(i) > 0 ? x(i) : 0.0));

  // GELU is monotone on x >= -0.75 (its global minimum sits near -0.7518)
  double prev = -1e300;
  for (double v = -0.75; v <= 8.0; v += 0.01) {
    Tensor g = gelu(Tensor::from_data({1}, {v}));
    CHECK(g(0) >= prev - 1e-12);
    prev = g(0);
  }
  // spot values of the tanh approximation
  CHECK(gelu(Tensor::from_data({1}, {0.0}))(0) == 0.0);
  CHECK(gelu(Tensor::from_data({1}, {1.0}))(0) ==
        doctest::Approx(0.841192).epsilon(1e-5));
}

TEST_CASE("activation gradients pass finite differences") {
  Tensor x = testutil::random_tensor({11}, 59, true, -2.0, 2.0);
  // keep relu inputs away from the kink
  for (double& v : x.raw())
    if (std::abs(v) < 1e-2) v += 0.05;
  auto f = [&] { return sum_all(mul(gelu(x), relu(x))); };
  const Tensor params[] = {x};
  CHECK(gradient_check(f, params, 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Tensor x = testutil::random_tensor({5}, 60, true);
  {
    Tape::Scope scope;
    Tensor z = add(x, x);
    Tensor loss = sum_all(mul(z, z));  // (2x)^2, gradient 8x
    backward(loss);
    for (int i = 0; i < 5; ++i)
      CHECK(x.grad()[static_cast<std::size_t>(i)] ==
            doctest::Approx(8.0 * x(i)).epsilon(1e-12));
  }
  auto f = [&] {
    Tensor z = add(x, x);
    return sum_all(mul(z, z));
  };
  const Tensor params[] = {x};
  CHECK(gradient_check(f, params, 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("tape records execution order with parents before children") {
  Tape::Scope scope;
  Tensor a = testutil::random_tensor({3, 3}, 61, true);
  Tensor b = matmul(a, a);
  Tensor c = add(b, b);
  Tensor d = sum_all(c);
  const auto& rec = Tape::current()->record();
  REQUIRE(rec.size() == 3);
  for (std::size_t i = 1; i < rec.size(); ++i)
    CHECK(rec[i]->seq > rec[i - 1]->seq);
  for (const auto& node : rec)
    for (const auto& parent : node->parents)
      if (!parent->is_leaf) CHECK(parent->seq < node->seq);
  (void)d;
}

TEST_CASE("elementwise and reduction ops pass finite differences") {
  Tensor x = testutil::random_tensor({4, 6}, 62, true);
  Tensor v = testutil::random_tensor({6}, 63, true);
  Tensor w = testutil::random_tensor({4}, 64, true);
  auto f = [&] {
    Tensor y = scale_columns(x, v);
    y = shift_columns(y, v);
    y = scale_rows(y, w);
    y = shift_rows(y, w);
    y = avg_pool_rows(y, 3);
    Tensor t = transpose(y);
    Tensor pooled = concat_cols(std::vector<Tensor>{mean_rows(y), mean_rows(y)});
    Tensor sliced = slice_cols(slice_rows(t, 1, 5), 0, 3);
    return add(add(sum_all(rownorm(sliced)), sum_all(pooled)),
               add(sum_all(mean_cols(y)), sum_all(softmax_lastdim(y))));
  };
  const Tensor params[] = {x, v, w};
  CHECK(gradient_check(f, params, 1e-5).max_rel_error < 1e-4);
}
