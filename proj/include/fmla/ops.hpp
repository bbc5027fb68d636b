#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fmla/tensor.hpp"

namespace fmla {

// Elementwise (same shape).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);

// Broadcast over a 2-D tensor. *_columns uses v[cols] (one value per column,
// broadcast down the rows); *_rows uses v[rows].
Tensor scale_columns(const Tensor& x, const Tensor& v);
Tensor shift_columns(const Tensor& x, const Tensor& v);
Tensor scale_rows(const Tensor& x, const Tensor& v);
Tensor shift_rows(const Tensor& x, const Tensor& v);

// out[m x p] = a[m x k] * b[k x p]; gradients dA = G B^T, dB = A^T G.
Tensor matmul(const Tensor& a, const Tensor& b);
// out[m x p] = a[m x k] * b[p x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor relu(const Tensor& x);
// tanh approximation: 0.5 x (1 + tanh(0.7978845608028654 (x + 0.044715 x^3)))
Tensor gelu(const Tensor& x);

// Rows of the last dimension sum to 1; computed with max subtraction.
// Accepts [L] or [rows x L].
Tensor softmax_lastdim(const Tensor& x);

// Grouped same-length 1-D cross-correlation, zero padding (k-1)/2 per side.
// x[c_in x n], w[c_out x (c_in/groups) x k], optional bias[c_out].
Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& bias,
                   int groups = 1);
Tensor conv1d_same(const Tensor& x, const Tensor& w, int groups = 1);

// Linear-interpolation sampling of each channel of x[c x n] at every entry of
// pos[kt x np]; out[c x kt x np]. Out-of-range positions clamp to [0, n-1].
// Differentiable in both x and pos.
Tensor linear_interp_sample(const Tensor& x, const Tensor& pos);

// Per-row standardization to mean 0 / variance 1 (epsilon inside the sqrt),
// then per-column affine: out = xhat .* gain + bias. x[n x d], gain[d], bias[d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// Per-row standardization only (batch-norm building block). x[r x c].
Tensor rownorm(const Tensor& x, double eps = 1e-5);

Tensor reshape(const Tensor& x, Dims d);
Tensor concat_cols(std::span<const Tensor> parts);  // [m x k_i] -> [m x sum(k_i)]
Tensor concat_rows(std::span<const Tensor> parts);  // [r_i x k] -> [sum(r_i) x k]
Tensor slice_rows(const Tensor& x, int i0, int i1);
Tensor slice_cols(const Tensor& x, int j0, int j1);

Tensor mean_rows(const Tensor& x);  // [m x k] -> [1 x k]
Tensor mean_cols(const Tensor& x);  // [m x k] -> [m x 1]
Tensor sum_all(const Tensor& x);    // -> [1]

// Same-length average pooling over rows with the given window; border windows
// average only their valid taps. x[n x d] -> [n x d].
Tensor avg_pool_rows(const Tensor& x, int window);

// Zeroes row t (all features) wherever masked[t] != 0; gradients at masked
// rows are exactly zero.
Tensor mask_rows(const Tensor& x, const std::vector<std::uint8_t>& masked);

// KL(p || q) = sum p ln(p/q) with q clamped below at 1e-9 and 0 ln 0 := 0.
// p is a teacher: no gradient flows into it. Accepts [K] (scalar result) or
// [B x K] (mean over rows). Both inputs must row-normalize to 1 +- 1e-6.
Tensor kl_divergence(const Tensor& p, const Tensor& q);

// Mean over the batch of -ln softmax(logits)[label]. logits[B x K].
Tensor cross_entropy_with_logits(const Tensor& logits,
                                 const std::vector<int>& labels);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::vector<std::pair<std::string, double>> per_param;  // worst error each
};

// Test hook for negative-control gradient checks: corrupts relu's backward
// slope (0.99 instead of 1) so a correct checker must report failure. Never
// set outside tests.
void set_gradient_fault_injection(bool enabled);

// Central-difference check of every entry of every parameter against the
// analytic gradient of the scalar f(). f must be deterministic. The relative
// error is |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckResult gradient_check(const std::function<Tensor()>& f,
                               std::span<const Tensor> params, double step);

}  // namespace fmla
