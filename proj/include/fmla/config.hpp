#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fmla {

enum class MaskScope { kPerHead, kBlockOutput };

struct ModelConfig {
  int num_blocks = 4;
  int d = 64;
  int num_heads = 4;
  int c = 16;  // compressed length budget
  std::vector<int> dcn_channels = {128, 128, 64, 64};
  int kernel_size = 3;
  double mask_ratio = 0.5;
  int mask_phase = 1;
  bool mask_per_head = true;
  MaskScope mask_scope = MaskScope::kPerHead;
  int self_distill_n = 3;
  double alpha = 1.0;
  double beta = 1.0;
  int ffn_expansion = 4;
  bool pooling_residual = true;
  bool normalize_f = false;
  int num_classes = 0;  // resolved from data
  int seq_len = 0;      // resolved from data
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 16;
  int epochs = 500;
  int eval_every = 1;
  double target_acc = 0.0;  // stop once reached; 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Dotted-key `key = value` configuration with `#` comments. Unknown keys are
// hard errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  static RunConfig load(const std::filesystem::path& file);
  static RunConfig defaults() { return RunConfig{}; }
  void apply_override(const std::string& key, const std::string& value);
  std::string resolved() const;  // full key = value dump
};

}  // namespace fmla
