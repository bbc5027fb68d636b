#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fmla/config.hpp"

namespace fmla {

// Analytic multiply-accumulate model of one inference forward (per sample).
// It mirrors the implemented kernel sequence exactly, so the instrumented
// counters agree with it; one MAC counts as one FLOP.
struct FmlaCost {
  std::vector<std::pair<std::string, std::int64_t>> items;
  std::vector<std::int64_t> per_block;  // DCN block + CLA block of each layer
  std::int64_t stem = 0;
  std::int64_t heads = 0;
  std::int64_t total = 0;
};

// One vanilla attention layer: QKV projections 3nd^2, two quadratic stages
// 2n^2 d and the n^2 softmax, output projection nd^2.
std::int64_t flops_vanilla(std::int64_t n, std::int64_t d);

FmlaCost flops_fmla(const ModelConfig& cfg, int n);

struct ParamsTable {
  std::vector<std::pair<std::string, std::int64_t>> items;  // per module
  std::int64_t total = 0;
};

// Parameter counts from the configuration alone; must match the model's own
// registry count.
ParamsTable params_table(const ModelConfig& cfg);

// CSV rows `n,flops_fmla,flops_vanilla,params_fmla` for the given lengths.
void write_flops_csv(std::ostream& out, const ModelConfig& cfg,
                     std::span<const int> n_list);

// Least-squares slope of log(f) against log(n).
double loglog_slope(std::span<const double> n_values,
                    std::span<const double> f_values);

}  // namespace fmla
