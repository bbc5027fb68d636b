#pragma once

#include <cstdint>
#include <vector>

#include "fmla/rng.hpp"
#include "fmla/tensor.hpp"

namespace fmla {

enum class MaskMode { kOff, kRandom, kRegular };

// Description of one mask layer. Random masks are reproducible from the seed;
// regular masks are deterministic given (ratio, phase, n).
struct MaskSpec {
  double ratio = 0.0;
  MaskMode mode = MaskMode::kOff;
  int phase = 1;
  std::uint64_t seed = 0;
  bool per_head = true;
};

// 1 = position masked, 0 = kept.
using MaskBits = std::vector<std::uint8_t>;

// Each position masked independently with probability ratio.
MaskBits sample_random_mask(int n, double ratio, Rng& rng);

// Fixed-stride pattern. ratio must be 1/k or (k-1)/k for integer k >= 2
// (ratio 0 means no mask); other ratios snap to the nearest such grid with a
// warning on stderr. For ratio 1/2, phase 1 masks odd indices (the second of
// each consecutive pair), phase 0 the even ones.
MaskBits build_regular_mask(int n, double ratio, int phase);

// Resolves a MaskSpec into one mask per head (random mode with per_head) or a
// single shared mask. Empty result means masking is off.
std::vector<MaskBits> make_layer_masks(const MaskSpec& spec, int n, int n_heads);

// Zeroes the masked rows of h[n x d]; gradient at masked rows is exactly zero.
Tensor apply_mask(const Tensor& h, const MaskBits& mask);

int count_masked(const MaskBits& m);

}  // namespace fmla
