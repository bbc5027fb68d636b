#include "fmla/deform.hpp"

#include <cmath>

#include "fmla/error.hpp"

namespace fmla {

DcnBlockParams DcnBlockParams::init(int c_in, int c_out, int ksz, Rng& rng) {
  DcnBlockParams p;
  p.c_in = c_in;
  p.c_out = c_out;
  p.ksz = ksz;
  p.kernel = Tensor::randn({c_out, c_in, ksz}, rng, 0.02, /*requires_grad=*/true);
  p.offset_w = Tensor::zeros({ksz, c_in, ksz}, /*requires_grad=*/true);
  p.offset_b = Tensor::zeros({ksz}, /*requires_grad=*/true);
  p.bn_gain = Tensor::full({c_out}, 1.0, /*requires_grad=*/true);
  p.bn_bias = Tensor::zeros({c_out}, /*requires_grad=*/true);
  p.bn_running_mean = Tensor::zeros({c_out});
  p.bn_running_var = Tensor::full({c_out}, 1.0);
  return p;
}

Tensor predict_offsets(const Tensor& x, const DcnBlockParams& p) {
  return conv1d_same(x, p.offset_w, p.offset_b);
}

Tensor deform_conv1d(const Tensor& x, const Tensor& offsets, const Tensor& kernel) {
  const int c_in = x.dim(0), n = x.dim(1);
  const int c_out = kernel.dim(0), ksz = kernel.dim(2);
  if (kernel.dim(1) != c_in)
    throw DimensionError("deform_conv1d: kernel " + dims_str(kernel.dims()) +
                         " does not match input " + dims_str(x.dims()));
  if (offsets.rank() != 2 || offsets.dim(0) != ksz || offsets.dim(1) != n)
    throw DimensionError("deform_conv1d: offsets " + dims_str(offsets.dims()) +
                         " must be [" + std::to_string(ksz) + "x" +
                         std::to_string(n) + "]");
  // Sampling grid: tap j reads position t + (j - pad) + offset[j,t]. Taps
  // whose base position falls outside the series contribute zero, exactly
  // like the zero padding of a standard convolution; offsets on valid taps
  // clamp at the borders.
  const int pad = (ksz - 1) / 2;
  std::vector<double> base(static_cast<std::size_t>(ksz) * n);
  std::vector<double> valid(static_cast<std::size_t>(c_in) * ksz * n);
  for (int j = 0; j < ksz; ++j)
    for (int t = 0; t < n; ++t) {
      base[static_cast<std::size_t>(j) * n + t] = t + (j - pad);
      const double ok = (t + j - pad >= 0 && t + j - pad < n) ? 1.0 : 0.0;
      for (int i = 0; i < c_in; ++i)
        valid[(static_cast<std::size_t>(i) * ksz + j) * n + t] = ok;
    }
  Tensor pos = add(offsets, Tensor::from_data({ksz, n}, std::move(base)));
  Tensor sampled = linear_interp_sample(x, pos);            // [c_in x k x n]
  Tensor cols = mul(reshape(sampled, {c_in * ksz, n}),
                    Tensor::from_data({c_in * ksz, n}, std::move(valid)));
  Tensor kmat = reshape(kernel, {c_out, c_in * ksz});
  return matmul(kmat, cols);
}

namespace {

// Evaluation-mode batch norm: an affine map built from the running stats.
Tensor bn_eval(const Tensor& y, const DcnBlockParams& p) {
  const int c = y.dim(0);
  std::vector<double> neg_mean(static_cast<std::size_t>(c));
  std::vector<double> inv(static_cast<std::size_t>(c));
  for (int i = 0; i < c; ++i) {
    neg_mean[static_cast<std::size_t>(i)] = -p.bn_running_mean.raw()[i];
    inv[static_cast<std::size_t>(i)] =
        1.0 / std::sqrt(p.bn_running_var.raw()[i] + kBnEps);
  }
  Tensor centered = shift_rows(y, Tensor::from_data({c}, std::move(neg_mean)));
  Tensor scaled = scale_rows(centered, Tensor::from_data({c}, std::move(inv)));
  return shift_rows(scale_rows(scaled, p.bn_gain), p.bn_bias);
}

}  // namespace

std::vector<Tensor> dcn_block_forward_batch(const std::vector<Tensor>& xs,
                                            DcnBlockParams& p, bool training) {
  if (xs.empty()) throw DataError("dcn_block_forward_batch: empty batch");
  const int b = static_cast<int>(xs.size());
  std::vector<Tensor> convs;
  convs.reserve(xs.size());
  for (const Tensor& x : xs)
    convs.push_back(deform_conv1d(x, predict_offsets(x, p), p.kernel));

  std::vector<Tensor> outs;
  outs.reserve(xs.size());
  if (training) {
    const int n = convs[0].dim(1);
    Tensor cat = b == 1 ? convs[0] : concat_cols(convs);  // [c x (b*n)]
    // Running-stat update from the batch statistics (population variance).
    const int c = cat.dim(0);
    const int m = cat.dim(1);
    for (int i = 0; i < c; ++i) {
      double mu = 0.0;
      for (int t = 0; t < m; ++t) mu += cat(i, t);
      mu /= m;
      double var = 0.0;
      for (int t = 0; t < m; ++t) {
        const double dv = cat(i, t) - mu;
        var += dv * dv;
      }
      var /= m;
      p.bn_running_mean.raw()[i] =
          kBnMomentum * p.bn_running_mean.raw()[i] + (1.0 - kBnMomentum) * mu;
      p.bn_running_var.raw()[i] =
          kBnMomentum * p.bn_running_var.raw()[i] + (1.0 - kBnMomentum) * var;
    }
    Tensor normed = rownorm(cat, kBnEps);
    Tensor affine = shift_rows(scale_rows(normed, p.bn_gain), p.bn_bias);
    for (int s = 0; s < b; ++s)
      outs.push_back(relu(b == 1 ? affine : slice_cols(affine, s * n, (s + 1) * n)));
  } else {
    for (const Tensor& y : convs) outs.push_back(relu(bn_eval(y, p)));
  }
  return outs;
}

Tensor dcn_block_forward(const Tensor& x, DcnBlockParams& p, bool training) {
  return dcn_block_forward_batch({x}, p, training)[0];
}

}  // namespace fmla
