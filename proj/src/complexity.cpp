#include "fmla/complexity.hpp"

#include <cmath>

#include "fmla/error.hpp"

namespace fmla {

std::int64_t flops_vanilla(std::int64_t n, std::int64_t d) {
  if (n < 1 || d < 1) throw ConfigError("flops_vanilla: n and d must be >= 1");
  return 3 * n * d * d + 2 * n * n * d + n * n + n * d * d;
}

FmlaCost flops_fmla(const ModelConfig& cfg, int n) {
  if (n < 1) throw ConfigError("flops_fmla: n must be >= 1");
  FmlaCost cost;
  const std::int64_t d = cfg.d;
  const std::int64_t dh = d / cfg.num_heads;
  const std::int64_t nh = cfg.num_heads;
  const std::int64_t ce = std::min<std::int64_t>(cfg.c, n);
  const std::int64_t k = cfg.kernel_size;
  const std::int64_t e = cfg.ffn_expansion;
  const std::int64_t nn = n;

  auto item = [&](const std::string& name, std::int64_t macs) {
    cost.items.emplace_back(name, macs);
    return macs;
  };

  cost.stem = item("stem.lift", nn * d);

  std::int64_t c_in = 1;
  for (int l = 0; l < cfg.num_blocks; ++l) {
    const std::int64_t c_out = cfg.dcn_channels[static_cast<std::size_t>(l)];
    const std::string dp = "dcn" + std::to_string(l + 1) + ".";
    std::int64_t dcn = 0;
    dcn += item(dp + "offset_net", k * k * c_in * nn);
    dcn += item(dp + "sampling", 3 * c_in * k * nn);  // interp + border mask
    dcn += item(dp + "kernel", c_out * k * c_in * nn);
    dcn += item(dp + "batch_norm", 2 * c_out * nn);

    const std::string cp = "cla" + std::to_string(l + 1) + ".";
    std::int64_t cla = 0;
    cla += item(cp + "layer_norms", 2 * 3 * nn * d);
    cla += item(cp + "query_proj", nn * d * dh);
    cla += item(cp + "mix_vectors", nn * d);
    cla += item(cp + "value_proj", nn * d * d);
    cla += item(cp + "compress_gen", cfg.c * c_out * nn);
    cla += item(cp + "compress_apply", ce * nn * d);
    cla += item(cp + "key_regen", ce * d * dh);
    cla += item(cp + "attn_logits", nn * ce * d + nh * nn * ce);
    cla += item(cp + "attn_softmax", 2 * nh * nn * ce);
    cla += item(cp + "attn_weighted_sum", nn * ce * d);
    cla += item(cp + "pooling_residual",
                cfg.pooling_residual ? 3 * nn * d : 0);
    cla += item(cp + "mask", cfg.mask_ratio > 0.0 ? nn * d : 0);
    cla += item(cp + "output_proj", nn * d * d);
    cla += item(cp + "ffn", 2 * e * nn * d * d + 8 * e * nn * d);

    cost.per_block.push_back(dcn + cla);
    c_in = c_out;
  }

  const std::int64_t c_last = cfg.dcn_channels.back();
  const std::int64_t kcls = cfg.num_classes;
  cost.heads = item("heads",
                    nn * d + d * kcls + nn * c_last + c_last * kcls + 6 * kcls);

  cost.total = cost.stem + cost.heads;
  for (std::int64_t b : cost.per_block) cost.total += b;
  return cost;
}

ParamsTable params_table(const ModelConfig& cfg) {
  ParamsTable table;
  const std::int64_t d = cfg.d;
  const std::int64_t dh = d / cfg.num_heads;
  const std::int64_t nh = cfg.num_heads;
  const std::int64_t k = cfg.kernel_size;
  const std::int64_t e = cfg.ffn_expansion;

  auto item = [&](const std::string& name, std::int64_t count) {
    table.items.emplace_back(name, count);
    table.total += count;
  };

  item("stem", d + d);
  std::int64_t c_in = 1;
  for (int l = 0; l < cfg.num_blocks; ++l) {
    const std::int64_t c_out = cfg.dcn_channels[static_cast<std::size_t>(l)];
    item("dcn" + std::to_string(l + 1),
         c_out * c_in * k        // deformable kernel
             + k * c_in * k + k  // offset net and its bias
             + 2 * c_out);       // batch-norm affine
    item("cla" + std::to_string(l + 1),
         d * dh                   // shared query projection
             + nh * dh            // mix vectors
             + nh * d * dh        // per-head value projections
             + dh * (nh * dh)     // key regeneration conv
             + nh * cfg.c * (c_out / nh)  // compression generator
             + d * d + d          // output projection
             + d * e * d + e * d + e * d * d + d  // FFN
             + 4 * d);            // two layer-norm pairs
    c_in = c_out;
  }
  item("heads", d * cfg.num_classes + cfg.num_classes +
                    cfg.dcn_channels.back() * cfg.num_classes + cfg.num_classes);
  return table;
}

void write_flops_csv(std::ostream& out, const ModelConfig& cfg,
                     std::span<const int> n_list) {
  out << "n,flops_fmla,flops_vanilla,params_fmla\n";
  const std::int64_t params = params_table(cfg).total;
  for (int n : n_list)
    out << n << "," << flops_fmla(cfg, n).total << ","
        << flops_vanilla(n, cfg.d) << "," << params << "\n";
}

double loglog_slope(std::span<const double> n_values,
                    std::span<const double> f_values) {
  if (n_values.size() != f_values.size() || n_values.size() < 2)
    throw ConfigError("loglog_slope: need matching samples, at least two");
  const std::size_t m = n_values.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double x = std::log(n_values[i]);
    const double y = std::log(f_values[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

}  // namespace fmla
