#include "fmla/losses.hpp"

#include <cmath>

#include "fmla/error.hpp"

namespace fmla {

Tensor self_distill_loss(std::span<const Tensor> random_outputs,
                         const Tensor& regular_output, double beta) {
  if (random_outputs.empty())
    throw ValidationError("self_distill_loss: empty ensemble");
  if (beta == 0.0) return Tensor::zeros({1});
  const Tensor& first = random_outputs[0];
  std::vector<double> mean(first.raw().size(), 0.0);
  for (const Tensor& t : random_outputs) {
    if (t.dims() != first.dims())
      throw DimensionError("self_distill_loss: ensemble shape mismatch " +
                           dims_str(t.dims()) + " vs " + dims_str(first.dims()));
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += t.raw()[i];
  }
  const double inv = 1.0 / static_cast<double>(random_outputs.size());
  for (double& v : mean) v *= inv;
  Tensor teacher = Tensor::from_data(first.dims(), std::move(mean));
  return scale(kl_divergence(teacher, regular_output), beta);
}

Tensor online_distill_loss(const Tensor& y_dcn, const Tensor& y_cla,
                           double alpha) {
  if (alpha == 0.0) return Tensor::zeros({1});
  // kl_divergence treats its first argument as data, so the DCN branch is
  // detached regardless of how y_dcn was produced.
  return scale(kl_divergence(y_dcn, y_cla), alpha);
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
  return cross_entropy_with_logits(logits, labels);
}

double total_loss(const LossBreakdown& parts) {
  return parts.loss1 + parts.loss2 + parts.loss3;
}

}  // namespace fmla
