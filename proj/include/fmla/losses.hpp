#pragma once

#include <span>
#include <vector>

#include "fmla/ops.hpp"
#include "fmla/tensor.hpp"

namespace fmla {

// The three loss terms of one training step. total is always exactly
// loss1 + loss2 + loss3.
struct LossBreakdown {
  double loss1 = 0.0;  // self-distillation (mask ensemble -> regular pass)
  double loss2 = 0.0;  // online distillation (DCN branch -> CLA branch)
  double loss3 = 0.0;  // cross entropy
  double total = 0.0;
  double alpha = 1.0;
  double beta = 1.0;
  int n_ensemble = 1;
};

// beta * KL(mean(random_outputs) || regular_output); the averaged teacher is
// detached. Rows are class distributions ([K] or [B x K]).
Tensor self_distill_loss(std::span<const Tensor> random_outputs,
                         const Tensor& regular_output, double beta);

// alpha * KL(y_dcn || y_cla); y_dcn is the teacher, so gradients reach only
// the CLA branch.
Tensor online_distill_loss(const Tensor& y_dcn, const Tensor& y_cla,
                           double alpha);

// Mean over the batch of -ln softmax(logits)[label].
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);

double total_loss(const LossBreakdown& parts);

}  // namespace fmla
