#pragma once

#include <cstdint>

// Hot numeric kernels. The fmla::kern versions parallelize with OpenMP over
// independent output elements (each element keeps a fixed serial accumulation
// order), so results are bitwise identical for any thread count. fmla::ref
// holds the serial reference implementations used as test oracles and by the
// kernel benchmark.

namespace fmla::kern {

// Thread-local multiply-accumulate counter. Kernels and ops add their MAC
// counts; the complexity module's analytic model is checked against it.
std::uint64_t& mac_counter();
void count_macs(std::uint64_t n);
void reset_mac_counter();

// out[m x p] = a[m x k] * b[k x p]; accumulate adds into out instead of assigning.
void matmul(const double* a, const double* b, double* out, int m, int k, int p,
            bool accumulate = false);
// out[m x p] = a[m x k] * b[p x k]^T
void matmul_nt(const double* a, const double* b, double* out, int m, int k, int p,
               bool accumulate = false);
// out[k x p] = a[m x k]^T * b[m x p]
void matmul_tn(const double* a, const double* b, double* out, int m, int k, int p,
               bool accumulate = false);

// Grouped same-length 1-D cross-correlation, zero padding (k-1)/2 per side.
// x[c_in x n], w[c_out x (c_in/groups) x ksz], bias[c_out] or nullptr,
// out[c_out x n].
void conv1d_same(const double* x, const double* w, const double* bias, double* out,
                 int c_in, int c_out, int n, int ksz, int groups);
void conv1d_same_grad_x(const double* gout, const double* w, double* gx, int c_in,
                        int c_out, int n, int ksz, int groups);
void conv1d_same_grad_w(const double* gout, const double* x, double* gw, int c_in,
                        int c_out, int n, int ksz, int groups);
void conv1d_same_grad_bias(const double* gout, double* gb, int c_out, int n);

// Linear interpolation sampling with border clamping.
// x[c x n], pos[npos], out[c x npos]: out[i,q] = lerp(x[i], clamp(pos[q], 0, n-1)).
void interp_sample(const double* x, const double* pos, double* out, int c, int n,
                   int npos);
void interp_sample_grad_x(const double* gout, const double* pos, double* gx, int c,
                          int n, int npos);
void interp_sample_grad_pos(const double* gout, const double* x, const double* pos,
                            double* gpos, int c, int n, int npos, bool accumulate);

// Row-wise softmax with max subtraction. x[rows x cols] -> y[rows x cols].
void softmax_rows(const double* x, double* y, int rows, int cols);
// gx += y .* (gy - rowsum(gy .* y))
void softmax_rows_grad(const double* y, const double* gy, double* gx, int rows,
                       int cols);

// Row standardization: per row, xhat = (x - mean) / sqrt(var + eps).
// mean/invstd are outputs of length rows (needed by the backward pass).
void rownorm(const double* x, double* xhat, double* mean, double* invstd, int rows,
             int cols, double eps);
// gx += invstd * (g - rowmean(g) - xhat * rowmean(g .* xhat))
void rownorm_grad(const double* xhat, const double* invstd, const double* gy,
                  double* gx, int rows, int cols);

}  // namespace fmla::kern

namespace fmla::ref {

void matmul(const double* a, const double* b, double* out, int m, int k, int p);
void conv1d_same(const double* x, const double* w, const double* bias, double* out,
                 int c_in, int c_out, int n, int ksz, int groups);
void softmax_rows(const double* x, double* y, int rows, int cols);

}  // namespace fmla::ref
