#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fmla/config.hpp"
#include "fmla/data.hpp"
#include "fmla/model.hpp"

namespace fmla {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a named parameter registry.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>>& params, AdamConfig cfg);
  void zero_grad();
  // Applies one update from the parameters' current gradients. Non-finite
  // gradients abort with the parameter's name.
  void step();
  std::int64_t step_count() const { return t_; }

 private:
  std::vector<std::pair<std::string, Tensor>>* params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

struct EpochRow {
  int epoch = 0;
  double loss1 = 0, loss2 = 0, loss3 = 0, total = 0;
  double train_acc = 0;
  double test_acc = 0;
  std::int64_t ms = 0;
};

struct TrainReport {
  std::vector<EpochRow> rows;
  int epochs_run = 0;
  double final_test_acc = 0.0;
};

// Fraction of test samples whose predicted label matches, in [0,1].
double evaluate_accuracy(FmlaModel& model, const TimeSeriesDataset& ds);

// Seeded-shuffle epoch loop. When checkpoint_path is set the model is saved
// there at the end and the last row's test accuracy is recomputed from the
// reloaded checkpoint, so a later eval of that file reproduces it exactly.
TrainReport train_epochs(FmlaModel& model, const TimeSeriesDataset& train_set,
                         const TimeSeriesDataset* test_set,
                         const TrainConfig& tc,
                         const std::optional<std::filesystem::path>&
                             checkpoint_path = std::nullopt,
                         std::ostream* log = nullptr);

void write_metrics_csv(const std::filesystem::path& path,
                       const TrainReport& report);

}  // namespace fmla
