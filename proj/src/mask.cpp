#include "fmla/mask.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "fmla/error.hpp"
#include "fmla/ops.hpp"

namespace fmla {

MaskBits sample_random_mask(int n, double ratio, Rng& rng) {
  if (ratio < 0.0 || ratio >= 1.0)
    throw ConfigError("mask ratio must lie in [0,1), got " +
                      std::to_string(ratio));
  MaskBits m(static_cast<std::size_t>(n), 0);
  if (ratio == 0.0) return m;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n; ++i)
    if (u(rng) < ratio) m[static_cast<std::size_t>(i)] = 1;
  return m;
}

namespace {

// Snaps ratio onto the {1/k, (k-1)/k} grid. Returns k and whether the mask
// keeps one position per group (dense form) or masks one per group.
void resolve_regular_ratio(double ratio, int n, int& k, bool& dense) {
  const int kmax = std::max(2, std::min(n, 64));
  double best_err = std::numeric_limits<double>::infinity();
  int best_k = 2;
  bool best_dense = false;
  for (int kk = 2; kk <= kmax; ++kk) {
    const double sparse = 1.0 / kk;
    const double denser = static_cast<double>(kk - 1) / kk;
    if (std::abs(ratio - sparse) < best_err) {
      best_err = std::abs(ratio - sparse);
      best_k = kk;
      best_dense = false;
    }
    if (std::abs(ratio - denser) < best_err) {
      best_err = std::abs(ratio - denser);
      best_k = kk;
      best_dense = true;
    }
  }
  if (best_err > 1e-9) {
    const double snapped =
        best_dense ? static_cast<double>(best_k - 1) / best_k : 1.0 / best_k;
    std::fprintf(stderr,
                 "warning: regular mask ratio %g is not 1/k or (k-1)/k; "
                 "using %g\n",
                 ratio, snapped);
  }
  k = best_k;
  dense = best_dense;
}

}  // namespace

MaskBits build_regular_mask(int n, double ratio, int phase) {
  if (ratio >= 1.0)
    throw ConfigError("regular mask ratio must be < 1, got " +
                      std::to_string(ratio));
  MaskBits m(static_cast<std::size_t>(n), 0);
  if (ratio <= 0.0) return m;
  int k = 2;
  bool dense = false;
  resolve_regular_ratio(ratio, n, k, dense);
  if (!dense) {
    // Mask one position per group of k; phase 1 hits the last of the group
    // (for k=2: the second of each consecutive pair).
    const int target = phase == 1 ? k - 1 : 0;
    for (int i = 0; i < n; ++i)
      if (i % k == target) m[static_cast<std::size_t>(i)] = 1;
  } else {
    // Keep one position per group of k, mask the rest.
    const int keep = phase == 1 ? 0 : k - 1;
    for (int i = 0; i < n; ++i)
      if (i % k != keep) m[static_cast<std::size_t>(i)] = 1;
  }
  return m;
}

std::vector<MaskBits> make_layer_masks(const MaskSpec& spec, int n, int n_heads) {
  if (spec.mode == MaskMode::kOff || spec.ratio <= 0.0) return {};
  if (spec.mode == MaskMode::kRegular) {
    // The same fixed pattern applies to every head.
    return {build_regular_mask(n, spec.ratio, spec.phase)};
  }
  const int count = spec.per_head ? n_heads : 1;
  std::vector<MaskBits> masks;
  masks.reserve(static_cast<std::size_t>(count));
  for (int h = 0; h < count; ++h) {
    Rng rng = make_rng({spec.seed, static_cast<std::uint64_t>(h)});
    masks.push_back(sample_random_mask(n, spec.ratio, rng));
  }
  return masks;
}

Tensor apply_mask(const Tensor& h, const MaskBits& mask) {
  return mask_rows(h, mask);
}

int count_masked(const MaskBits& m) {
  int c = 0;
  for (auto b : m) c += b != 0;
  return c;
}

}  // namespace fmla
