#include "fmla/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fmla::kern {

namespace {
// Below this many inner-loop operations the OpenMP fork overhead dominates.
constexpr std::int64_t kParallelMinWork = 1 << 15;
thread_local std::uint64_t g_macs = 0;
}  // namespace

std::uint64_t& mac_counter() { return g_macs; }
void count_macs(std::uint64_t n) { g_macs += n; }
void reset_mac_counter() { g_macs = 0; }

void matmul(const double* a, const double* b, double* out, int m, int k, int p,
            bool accumulate) {
  count_macs(static_cast<std::uint64_t>(m) * k * p);
  const std::int64_t work = static_cast<std::int64_t>(m) * k * p;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int i = 0; i < m; ++i) {
    double* orow = out + static_cast<std::size_t>(i) * p;
    if (!accumulate) std::fill(orow, orow + p, 0.0);
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(kk) * p;
      for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* out, int m, int k, int p,
               bool accumulate) {
  count_macs(static_cast<std::uint64_t>(m) * k * p);
  const std::int64_t work = static_cast<std::int64_t>(m) * k * p;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* orow = out + static_cast<std::size_t>(i) * p;
    for (int j = 0; j < p; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      if (accumulate)
        orow[j] += acc;
      else
        orow[j] = acc;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* out, int m, int k, int p,
               bool accumulate) {
  count_macs(static_cast<std::uint64_t>(m) * k * p);
  const std::int64_t work = static_cast<std::int64_t>(m) * k * p;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int kk = 0; kk < k; ++kk) {
    double* orow = out + static_cast<std::size_t>(kk) * p;
    if (!accumulate) std::fill(orow, orow + p, 0.0);
    for (int i = 0; i < m; ++i) {
      const double av = a[static_cast<std::size_t>(i) * k + kk];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(i) * p;
      for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
}

void conv1d_same(const double* x, const double* w, const double* bias, double* out,
                 int c_in, int c_out, int n, int ksz, int groups) {
  const int cig = c_in / groups;   // input channels per group
  const int cog = c_out / groups;  // output channels per group
  const int pad = (ksz - 1) / 2;
  count_macs(static_cast<std::uint64_t>(c_out) * cig * ksz * n);
  const std::int64_t work = static_cast<std::int64_t>(c_out) * cig * ksz * n;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int o = 0; o < c_out; ++o) {
    const int g = o / cog;
    const double* wrow = w + static_cast<std::size_t>(o) * cig * ksz;
    double* orow = out + static_cast<std::size_t>(o) * n;
    const double b0 = bias ? bias[o] : 0.0;
    std::fill(orow, orow + n, b0);
    for (int ic = 0; ic < cig; ++ic) {
      const double* xrow = x + static_cast<std::size_t>(g * cig + ic) * n;
      for (int j = 0; j < ksz; ++j) {
        const double wv = wrow[ic * ksz + j];
        if (wv == 0.0) continue;
        const int shift = j - pad;
        const int t0 = std::max(0, -shift);
        const int t1 = std::min(n, n - shift);
        for (int t = t0; t < t1; ++t) orow[t] += wv * xrow[t + shift];
      }
    }
  }
}

void conv1d_same_grad_x(const double* gout, const double* w, double* gx, int c_in,
                        int c_out, int n, int ksz, int groups) {
  const int cig = c_in / groups;
  const int cog = c_out / groups;
  const int pad = (ksz - 1) / 2;
  count_macs(static_cast<std::uint64_t>(c_out) * cig * ksz * n);
  const std::int64_t work = static_cast<std::int64_t>(c_out) * cig * ksz * n;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int i = 0; i < c_in; ++i) {
    const int g = i / cig;
    const int ic = i % cig;
    double* gxrow = gx + static_cast<std::size_t>(i) * n;
    for (int og = 0; og < cog; ++og) {
      const int o = g * cog + og;
      const double* grow = gout + static_cast<std::size_t>(o) * n;
      const double* wrow = w + static_cast<std::size_t>(o) * cig * ksz;
      for (int j = 0; j < ksz; ++j) {
        const double wv = wrow[ic * ksz + j];
        if (wv == 0.0) continue;
        // out[o,t] consumed x[i,t+j-pad]; flip the window for the gather.
        const int shift = j - pad;
        const int s0 = std::max(0, shift);
        const int s1 = std::min(n, n + shift);
        for (int s = s0; s < s1; ++s) gxrow[s] += wv * grow[s - shift];
      }
    }
  }
}

void conv1d_same_grad_w(const double* gout, const double* x, double* gw, int c_in,
                        int c_out, int n, int ksz, int groups) {
  const int cig = c_in / groups;
  const int cog = c_out / groups;
  const int pad = (ksz - 1) / 2;
  count_macs(static_cast<std::uint64_t>(c_out) * cig * ksz * n);
  const std::int64_t work = static_cast<std::int64_t>(c_out) * cig * ksz * n;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int o = 0; o < c_out; ++o) {
    const int g = o / cog;
    const double* grow = gout + static_cast<std::size_t>(o) * n;
    double* gwrow = gw + static_cast<std::size_t>(o) * cig * ksz;
    for (int ic = 0; ic < cig; ++ic) {
      const double* xrow = x + static_cast<std::size_t>(g * cig + ic) * n;
      for (int j = 0; j < ksz; ++j) {
        const int shift = j - pad;
        const int t0 = std::max(0, -shift);
        const int t1 = std::min(n, n - shift);
        double acc = 0.0;
        for (int t = t0; t < t1; ++t) acc += grow[t] * xrow[t + shift];
        gwrow[ic * ksz + j] += acc;
      }
    }
  }
}

void conv1d_same_grad_bias(const double* gout, double* gb, int c_out, int n) {
  for (int o = 0; o < c_out; ++o) {
    const double* grow = gout + static_cast<std::size_t>(o) * n;
    double acc = 0.0;
    for (int t = 0; t < n; ++t) acc += grow[t];
    gb[o] += acc;
  }
}

namespace {
inline void interp_coords(double p, int n, int& lo, int& hi, double& f) {
  const double pc = std::clamp(p, 0.0, static_cast<double>(n - 1));
  lo = static_cast<int>(pc);
  if (lo > n - 1) lo = n - 1;
  hi = std::min(lo + 1, n - 1);
  f = pc - lo;
}
}  // namespace

void interp_sample(const double* x, const double* pos, double* out, int c, int n,
                   int npos) {
  count_macs(2ull * c * npos);
  const std::int64_t work = 2ll * c * npos;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int q = 0; q < npos; ++q) {
    int lo, hi;
    double f;
    interp_coords(pos[q], n, lo, hi, f);
    for (int i = 0; i < c; ++i) {
      const double* xrow = x + static_cast<std::size_t>(i) * n;
      out[static_cast<std::size_t>(i) * npos + q] =
          (1.0 - f) * xrow[lo] + f * xrow[hi];
    }
  }
}

void interp_sample_grad_x(const double* gout, const double* pos, double* gx, int c,
                          int n, int npos) {
  count_macs(2ull * c * npos);
  // Scatter into gx: parallel over channels so each thread owns its row.
  const std::int64_t work = 2ll * c * npos;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork && c > 1)
  for (int i = 0; i < c; ++i) {
    double* gxrow = gx + static_cast<std::size_t>(i) * n;
    const double* grow = gout + static_cast<std::size_t>(i) * npos;
    for (int q = 0; q < npos; ++q) {
      int lo, hi;
      double f;
      interp_coords(pos[q], n, lo, hi, f);
      gxrow[lo] += (1.0 - f) * grow[q];
      gxrow[hi] += f * grow[q];
    }
  }
}

void interp_sample_grad_pos(const double* gout, const double* x, const double* pos,
                            double* gpos, int c, int n, int npos, bool accumulate) {
  count_macs(static_cast<std::uint64_t>(c) * npos);
  const std::int64_t work = static_cast<std::int64_t>(c) * npos;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int q = 0; q < npos; ++q) {
    const double p = pos[q];
    double acc = 0.0;
    // Clamped positions contribute no positional gradient.
    if (p > 0.0 && p < static_cast<double>(n - 1)) {
      int lo, hi;
      double f;
      interp_coords(p, n, lo, hi, f);
      for (int i = 0; i < c; ++i) {
        const double* xrow = x + static_cast<std::size_t>(i) * n;
        acc += gout[static_cast<std::size_t>(i) * npos + q] * (xrow[hi] - xrow[lo]);
      }
    }
    if (accumulate)
      gpos[q] += acc;
    else
      gpos[q] = acc;
  }
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  count_macs(2ull * rows * cols);
  const std::int64_t work = 2ll * rows * cols;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int r = 0; r < rows; ++r) {
    const double* xr = x + static_cast<std::size_t>(r) * cols;
    double* yr = y + static_cast<std::size_t>(r) * cols;
    double mx = xr[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

void softmax_rows_grad(const double* y, const double* gy, double* gx, int rows,
                       int cols) {
  count_macs(2ull * rows * cols);
  const std::int64_t work = 2ll * rows * cols;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int r = 0; r < rows; ++r) {
    const double* yr = y + static_cast<std::size_t>(r) * cols;
    const double* gr = gy + static_cast<std::size_t>(r) * cols;
    double* gxr = gx + static_cast<std::size_t>(r) * cols;
    double dot = 0.0;
    for (int j = 0; j < cols; ++j) dot += gr[j] * yr[j];
    for (int j = 0; j < cols; ++j) gxr[j] += yr[j] * (gr[j] - dot);
  }
}

void rownorm(const double* x, double* xhat, double* mean, double* invstd, int rows,
             int cols, double eps) {
  count_macs(2ull * rows * cols);
  const std::int64_t work = 2ll * rows * cols;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int r = 0; r < rows; ++r) {
    const double* xr = x + static_cast<std::size_t>(r) * cols;
    double* hr = xhat + static_cast<std::size_t>(r) * cols;
    double mu = 0.0;
    for (int j = 0; j < cols; ++j) mu += xr[j];
    mu /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double d = xr[j] - mu;
      var += d * d;
    }
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < cols; ++j) hr[j] = (xr[j] - mu) * inv;
    mean[r] = mu;
    invstd[r] = inv;
  }
}

void rownorm_grad(const double* xhat, const double* invstd, const double* gy,
                  double* gx, int rows, int cols) {
  count_macs(3ull * rows * cols);
  const std::int64_t work = 3ll * rows * cols;
#pragma omp parallel for schedule(static) if (work > kParallelMinWork)
  for (int r = 0; r < rows; ++r) {
    const double* hr = xhat + static_cast<std::size_t>(r) * cols;
    const double* gr = gy + static_cast<std::size_t>(r) * cols;
    double* gxr = gx + static_cast<std::size_t>(r) * cols;
    double gmean = 0.0, gdot = 0.0;
    for (int j = 0; j < cols; ++j) {
      gmean += gr[j];
      gdot += gr[j] * hr[j];
    }
    gmean /= cols;
    gdot /= cols;
    const double inv = invstd[r];
    for (int j = 0; j < cols; ++j) gxr[j] += inv * (gr[j] - gmean - hr[j] * gdot);
  }
}

}  // namespace fmla::kern

namespace fmla::ref {

void matmul(const double* a, const double* b, double* out, int m, int k, int p) {
  for (int i = 0; i < m; ++i) {
    double* orow = out + static_cast<std::size_t>(i) * p;
    std::fill(orow, orow + p, 0.0);
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(kk) * p;
      for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
}

void conv1d_same(const double* x, const double* w, const double* bias, double* out,
                 int c_in, int c_out, int n, int ksz, int groups) {
  const int cig = c_in / groups;
  const int cog = c_out / groups;
  const int pad = (ksz - 1) / 2;
  for (int o = 0; o < c_out; ++o) {
    const int g = o / cog;
    for (int t = 0; t < n; ++t) {
      double acc = bias ? bias[o] : 0.0;
      for (int ic = 0; ic < cig; ++ic) {
        for (int j = 0; j < ksz; ++j) {
          const int src = t + j - pad;
          if (src < 0 || src >= n) continue;
          acc += w[(static_cast<std::size_t>(o) * cig + ic) * ksz + j] *
                 x[static_cast<std::size_t>(g * cig + ic) * n + src];
        }
      }
      out[static_cast<std::size_t>(o) * n + t] = acc;
    }
  }
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* xr = x + static_cast<std::size_t>(r) * cols;
    double* yr = y + static_cast<std::size_t>(r) * cols;
    double mx = xr[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (int j = 0; j < cols; ++j) yr[j] /= sum;
  }
}

}  // namespace fmla::ref
