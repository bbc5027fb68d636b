// Benchmark of the OpenMP kernels against their serial references.

#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fmla/kernels.hpp"

namespace {

using Clock = std::chrono::steady_clock;

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

template <typename F>
double time_ms(F&& fn, int reps) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms,
            double gmacs) {
  std::printf("%-24s serial %8.2f ms   parallel %8.2f ms   speedup %4.2fx   "
              "%6.2f GMAC/s\n",
              name, serial_ms, parallel_ms, serial_ms / parallel_ms,
              gmacs / (parallel_ms / 1e3) / 1e9);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP; both columns run serial code\n");
#endif

  {
    const int m = 384, k = 384, p = 384;
    auto a = random_vec(static_cast<std::size_t>(m) * k, 1);
    auto b = random_vec(static_cast<std::size_t>(k) * p, 2);
    std::vector<double> out(static_cast<std::size_t>(m) * p);
    const double serial =
        time_ms([&] { fmla::ref::matmul(a.data(), b.data(), out.data(), m, k, p); }, 5);
    const double parallel =
        time_ms([&] { fmla::kern::matmul(a.data(), b.data(), out.data(), m, k, p); }, 5);
    report("matmul 384^3", serial, parallel,
           static_cast<double>(m) * k * p);
  }

  {
    const int c_in = 128, c_out = 128, n = 2048, ksz = 3;
    auto x = random_vec(static_cast<std::size_t>(c_in) * n, 3);
    auto w = random_vec(static_cast<std::size_t>(c_out) * c_in * ksz, 4);
    std::vector<double> out(static_cast<std::size_t>(c_out) * n);
    const double serial = time_ms(
        [&] {
          fmla::ref::conv1d_same(x.data(), w.data(), nullptr, out.data(), c_in,
                                 c_out, n, ksz, 1);
        },
        5);
    const double parallel = time_ms(
        [&] {
          fmla::kern::conv1d_same(x.data(), w.data(), nullptr, out.data(), c_in,
                                  c_out, n, ksz, 1);
        },
        5);
    report("conv1d 128x128 n=2048", serial, parallel,
           static_cast<double>(c_out) * c_in * ksz * n);
  }

  {
    const int rows = 4096, cols = 512;
    auto x = random_vec(static_cast<std::size_t>(rows) * cols, 5);
    std::vector<double> y(x.size());
    const double serial = time_ms(
        [&] { fmla::ref::softmax_rows(x.data(), y.data(), rows, cols); }, 10);
    const double parallel = time_ms(
        [&] { fmla::kern::softmax_rows(x.data(), y.data(), rows, cols); }, 10);
    report("softmax 4096x512", serial, parallel,
           2.0 * rows * cols);
  }

  return 0;
}
