#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fmla/cla.hpp"
#include "fmla/config.hpp"
#include "fmla/deform.hpp"
#include "fmla/losses.hpp"

namespace fmla {

// Logits and class distributions of the two branches and their sum.
// All tensors are [B x K].
struct BranchOutputs {
  Tensor u_dcn, u_cla, u_sum;
  Tensor y_dcn, y_cla, y_hat;
};

// Teacher distributions captured from one forward, used to freeze the
// distillation teachers during finite-difference gradient checks.
struct TeacherSnapshot {
  std::vector<double> y_dcn;          // B x K
  std::vector<double> y_mean_random;  // B x K
};

struct TrainStepResult {
  LossBreakdown parts;
  Tensor total;                       // scalar loss, graph root
  std::vector<BranchOutputs> passes;  // N random passes, then the regular pass
  std::vector<int> regular_preds;     // argmax of the regular pass's u_sum
  TeacherSnapshot teachers;
};

// The dual-stream network: a chained DCN branch over the raw series and a
// stack of CLA blocks over the embedded series, interacting layer-wise
// through the compression maps, with one classification head per branch.
class FmlaModel {
 public:
  explicit FmlaModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  // Pointwise linear lift 1 -> d plus fixed sinusoidal positional encoding.
  Tensor embed_stem(std::span<const double> series) const;

  // Deterministic inference: regular masks, batch-norm running stats.
  // series holds batch * seq_len values row-major. per_block_macs, when
  // given, receives the measured multiply-accumulates of each block.
  BranchOutputs forward_eval(std::span<const double> series, int batch,
                             std::vector<std::uint64_t>* per_block_macs =
                                 nullptr);

  // N random-mask passes plus one regular-mask pass, assembling the three
  // loss terms. The DCN stream is shared by all passes (masks live only in
  // the CLA stream). frozen, when given, replaces both distillation teachers.
  TrainStepResult forward_train(std::span<const double> series,
                                const std::vector<int>& labels, int batch,
                                std::uint64_t step,
                                const TeacherSnapshot* frozen = nullptr);

  // argmax of summed logits; ties break toward the lower class index.
  std::vector<int> predict_labels(std::span<const double> series, int batch);

  std::int64_t count_params() const;
  // Per-module trainable-parameter counts (stem, dcn<i>, cla<i>, heads).
  std::vector<std::pair<std::string, std::int64_t>> param_breakdown() const;

  std::vector<std::pair<std::string, Tensor>>& trainable() { return trainable_; }
  const std::vector<std::pair<std::string, Tensor>>& trainable() const {
    return trainable_;
  }
  std::vector<std::pair<std::string, Tensor>>& buffers() { return buffers_; }
  const std::vector<std::pair<std::string, Tensor>>& buffers() const {
    return buffers_;
  }

  std::vector<DcnBlockParams>& dcn_blocks() { return dcn_; }
  std::vector<ClaBlockParams>& cla_blocks() { return cla_; }

 private:
  struct DcnStream {
    std::vector<std::vector<Tensor>> features;  // [layer][sample], post-ReLU
    Tensor u_dcn;                               // [B x K]
  };

  DcnStream run_dcn_stream(std::span<const double> series, int batch,
                           bool training,
                           std::vector<std::uint64_t>* per_block_macs);
  enum class MaskKind { kRandomTrain, kRegular };
  Tensor run_cla_stream(std::span<const double> series, int batch,
                        const DcnStream& ds, MaskKind kind, std::uint64_t step,
                        int pass,
                        std::vector<std::uint64_t>* per_block_macs) const;
  std::vector<MaskBits> masks_for(MaskKind kind, std::uint64_t step, int pass,
                                  int layer, int sample) const;
  Tensor branch_logits_cla(const Tensor& s) const;
  Tensor branch_logits_dcn(const Tensor& feat) const;

  ModelConfig cfg_;
  Tensor stem_w_, stem_b_;
  std::vector<DcnBlockParams> dcn_;
  std::vector<ClaBlockParams> cla_;
  Tensor head_cla_w_, head_cla_b_, head_dcn_w_, head_dcn_b_;
  std::vector<std::pair<std::string, Tensor>> trainable_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
};

// Fixed sinusoidal positional encoding [n x d].
Tensor sinusoidal_encoding(int n, int d);

}  // namespace fmla
