#pragma once

#include <vector>

#include "fmla/ops.hpp"
#include "fmla/tensor.hpp"

namespace fmla {

// One block of the DCN branch: a 1-D deformable convolution whose per-tap
// fractional offsets come from a zero-initialized standard convolution,
// followed by batch norm and ReLU.
struct DcnBlockParams {
  Tensor kernel;    // [c_out x c_in x k]
  Tensor offset_w;  // [k x c_in x k], one offset channel per tap
  Tensor offset_b;  // [k]
  Tensor bn_gain;   // [c_out]
  Tensor bn_bias;   // [c_out]
  Tensor bn_running_mean;  // buffers, not trained
  Tensor bn_running_var;
  int c_in = 0;
  int c_out = 0;
  int ksz = 3;

  // Offset net starts at zero so the block begins as a standard convolution.
  static DcnBlockParams init(int c_in, int c_out, int ksz, Rng& rng);
};

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;

// Offset for every tap j at every position t; unbounded reals. [k x n].
Tensor predict_offsets(const Tensor& x, const DcnBlockParams& p);

// out[o,t] = sum_{j,i} kernel[o,i,j] * sample(x[i], t + (j - (k-1)/2) + offsets[j,t])
// with linear interpolation and border clamping.
Tensor deform_conv1d(const Tensor& x, const Tensor& offsets, const Tensor& kernel);

// ReLU(BatchNorm(deform_conv1d(...))) over a batch of samples; batch norm uses
// batch statistics (and updates running stats) when training, running stats
// otherwise. Before the first training batch the running stats are their
// init values (mean 0, var 1).
std::vector<Tensor> dcn_block_forward_batch(const std::vector<Tensor>& xs,
                                            DcnBlockParams& p, bool training);

// Single-sample convenience wrapper (batch of one).
Tensor dcn_block_forward(const Tensor& x, DcnBlockParams& p, bool training);

}  // namespace fmla
