#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fmla/kernels.hpp"
#include "testutil.hpp"

using namespace fmla;

TEST_CASE("parallel matmul matches the serial reference") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const int m = 3 + static_cast<int>(seed * 7) % 60;
    const int k = 5 + static_cast<int>(seed * 13) % 40;
    const int p = 2 + static_cast<int>(seed * 11) % 50;
    auto a = testutil::random_tensor({m, k}, seed);
    auto b = testutil::random_tensor({k, p}, seed + 100);
    std::vector<double> got(static_cast<std::size_t>(m) * p);
    std::vector<double> want(got.size());
    kern::matmul(a.raw().data(), b.raw().data(), got.data(), m, k, p);
    ref::matmul(a.raw().data(), b.raw().data(), want.data(), m, k, p);
    CHECK(testutil::max_abs_diff(got, want) == doctest::Approx(0.0).epsilon(1e-15));
  }
}

TEST_CASE("parallel conv1d matches the direct triple-loop reference") {
  struct Shape {
    int c_in, c_out, n, k, groups;
  };
  for (const Shape s : {Shape{1, 4, 17, 3, 1}, Shape{6, 8, 33, 5, 2},
                        Shape{8, 8, 64, 1, 4}, Shape{128, 64, 100, 3, 1}}) {
    auto x = testutil::random_tensor({s.c_in, s.n}, 7);
    auto w = testutil::random_tensor({s.c_out, s.c_in / s.groups, s.k}, 8);
    auto bias = testutil::random_tensor({s.c_out}, 9);
    std::vector<double> got(static_cast<std::size_t>(s.c_out) * s.n);
    std::vector<double> want(got.size());
    kern::conv1d_same(x.raw().data(), w.raw().data(), bias.raw().data(),
                      got.data(), s.c_in, s.c_out, s.n, s.k, s.groups);
    ref::conv1d_same(x.raw().data(), w.raw().data(), bias.raw().data(),
                     want.data(), s.c_in, s.c_out, s.n, s.k, s.groups);
    CHECK(testutil::max_abs_diff(got, want) <= 1e-12);
  }
}

TEST_CASE("parallel softmax matches the serial reference") {
  auto x = testutil::random_tensor({37, 19}, 11, false, -5.0, 5.0);
  std::vector<double> got(x.raw().size()), want(x.raw().size());
  kern::softmax_rows(x.raw().data(), got.data(), 37, 19);
  ref::softmax_rows(x.raw().data(), want.data(), 37, 19);
  CHECK(testutil::max_abs_diff(got, want) <= 1e-14);
}

#ifdef _OPENMP
TEST_CASE("kernel results do not depend on the thread count") {
  const int m = 120, k = 90, p = 110;
  auto a = testutil::random_tensor({m, k}, 21);
  auto b = testutil::random_tensor({k, p}, 22);
  std::vector<double> one(static_cast<std::size_t>(m) * p), many(one.size());
  const int prev = omp_get_max_threads();
  omp_set_num_threads(1);
  kern::matmul(a.raw().data(), b.raw().data(), one.data(), m, k, p);
  omp_set_num_threads(prev);
  kern::matmul(a.raw().data(), b.raw().data(), many.data(), m, k, p);
  CHECK(one == many);  // bitwise
}
#endif

TEST_CASE("mac counter reflects matmul and conv work") {
  kern::reset_mac_counter();
  auto a = testutil::random_tensor({4, 5}, 31);
  auto b = testutil::random_tensor({5, 3}, 32);
  std::vector<double> out(12);
  kern::matmul(a.raw().data(), b.raw().data(), out.data(), 4, 5, 3);
  CHECK(kern::mac_counter() == 4u * 5u * 3u);

  kern::reset_mac_counter();
  auto x = testutil::random_tensor({6, 20}, 33);
  auto w = testutil::random_tensor({8, 3, 3}, 34);
  std::vector<double> y(8 * 20);
  kern::conv1d_same(x.raw().data(), w.raw().data(), nullptr, y.data(), 6, 8, 20,
                    3, 2);
  CHECK(kern::mac_counter() == 8u * 3u * 3u * 20u);
}
