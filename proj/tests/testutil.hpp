#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fmla/ops.hpp"
#include "fmla/tensor.hpp"

namespace testutil {

inline fmla::Tensor random_tensor(fmla::Dims dims, std::uint64_t seed,
                                  bool requires_grad = false,
                                  double lo = -1.0, double hi = 1.0) {
  fmla::Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  fmla::Tensor t = fmla::Tensor::zeros(dims, requires_grad);
  for (double& v : t.raw()) v = u(rng);
  return t;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Brute-force O(n^2) single-head attention with an explicitly supplied key:
// softmax(Q K^T / sqrt(d_h)) V with Q = X Wq diag(m). Written with plain
// loops, independent of the production kernels.
inline std::vector<double> naive_collab_attention(
    const std::vector<double>& x, int n, int d, const std::vector<double>& wq,
    int dh, const std::vector<double>& m, const std::vector<double>& key,
    const std::vector<double>& value, int rows_kv) {
  std::vector<double> q(static_cast<std::size_t>(n) * dh, 0.0);
  for (int t = 0; t < n; ++t)
    for (int j = 0; j < dh; ++j) {
      double acc = 0.0;
      for (int a = 0; a < d; ++a)
        acc += x[static_cast<std::size_t>(t) * d + a] *
               wq[static_cast<std::size_t>(a) * dh + j];
      q[static_cast<std::size_t>(t) * dh + j] = acc * m[static_cast<std::size_t>(j)];
    }
  std::vector<double> out(static_cast<std::size_t>(n) * dh, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int t = 0; t < n; ++t) {
    std::vector<double> logits(static_cast<std::size_t>(rows_kv));
    double mx = -1e308;
    for (int r = 0; r < rows_kv; ++r) {
      double acc = 0.0;
      for (int j = 0; j < dh; ++j)
        acc += q[static_cast<std::size_t>(t) * dh + j] *
               key[static_cast<std::size_t>(r) * dh + j];
      logits[static_cast<std::size_t>(r)] = acc * scale;
      mx = std::max(mx, logits[static_cast<std::size_t>(r)]);
    }
    double denom = 0.0;
    for (int r = 0; r < rows_kv; ++r) {
      logits[static_cast<std::size_t>(r)] =
          std::exp(logits[static_cast<std::size_t>(r)] - mx);
      denom += logits[static_cast<std::size_t>(r)];
    }
    for (int r = 0; r < rows_kv; ++r) {
      const double w = logits[static_cast<std::size_t>(r)] / denom;
      for (int j = 0; j < dh; ++j)
        out[static_cast<std::size_t>(t) * dh + j] +=
            w * value[static_cast<std::size_t>(r) * dh + j];
    }
  }
  return out;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("fmla_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
