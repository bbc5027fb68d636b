#include "fmla/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fmla/checkpoint.hpp"
#include "fmla/error.hpp"

namespace fmla {

Adam::Adam(std::vector<std::pair<std::string, Tensor>>& params, AdamConfig cfg)
    : params_(&params), cfg_(cfg) {
  for (const auto& [name, t] : params) {
    m_.emplace_back(t.raw().size(), 0.0);
    v_.emplace_back(t.raw().size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& [name, t] : *params_) {
    t.node()->ensure_grad();
    t.zero_grad();
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_->size(); ++p) {
    auto& [name, tensor] = (*params_)[p];
    tensor.node()->ensure_grad();
    const std::vector<double>& g = tensor.node()->grad;
    std::vector<double>& w = tensor.raw();
    std::vector<double>& m = m_[p];
    std::vector<double>& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericError("non-finite gradient in parameter " + name);
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double evaluate_accuracy(FmlaModel& model, const TimeSeriesDataset& ds) {
  if (ds.num_samples == 0)
    throw DataError("evaluate_accuracy: empty test set");
  if (ds.length != model.config().seq_len)
    throw DataError("evaluate_accuracy: series length " +
                    std::to_string(ds.length) + " vs model seq_len " +
                    std::to_string(model.config().seq_len));
  const int chunk = 64;
  int correct = 0;
  for (int start = 0; start < ds.num_samples; start += chunk) {
    const int b = std::min(chunk, ds.num_samples - start);
    std::span<const double> block(
        ds.samples.data() + static_cast<std::size_t>(start) * ds.length,
        static_cast<std::size_t>(b) * ds.length);
    const std::vector<int> preds = model.predict_labels(block, b);
    for (int i = 0; i < b; ++i)
      correct += preds[static_cast<std::size_t>(i)] ==
                 ds.labels[static_cast<std::size_t>(start + i)];
  }
  return static_cast<double>(correct) / ds.num_samples;
}

TrainReport train_epochs(FmlaModel& model, const TimeSeriesDataset& train_set,
                         const TimeSeriesDataset* test_set,
                         const TrainConfig& tc,
                         const std::optional<std::filesystem::path>&
                             checkpoint_path,
                         std::ostream* log) {
  const ModelConfig& mc = model.config();
  if (train_set.length != mc.seq_len)
    throw DataError("train series length " + std::to_string(train_set.length) +
                    " vs model seq_len " + std::to_string(mc.seq_len));
  if (train_set.num_classes > mc.num_classes)
    throw DataError("dataset has " + std::to_string(train_set.num_classes) +
                    " classes, model has " + std::to_string(mc.num_classes));

  Adam adam(model.trainable(), {tc.lr, tc.beta1, tc.beta2, tc.eps});
  TrainReport report;
  std::vector<int> order(static_cast<std::size_t>(train_set.num_samples));
  std::iota(order.begin(), order.end(), 0);

  std::uint64_t global_step = 0;
  double last_test_acc = 0.0;
  bool reached_target = false;
  for (int epoch = 1; epoch <= tc.epochs && !reached_target; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng = make_rng({mc.seed, kShuffleStream,
                                static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double sum1 = 0, sum2 = 0, sum3 = 0;
    int seen = 0, train_correct = 0;
    for (int start = 0; start < train_set.num_samples; start += tc.batch_size) {
      const int b = std::min(tc.batch_size, train_set.num_samples - start);
      std::vector<double> series(static_cast<std::size_t>(b) * train_set.length);
      std::vector<int> labels(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) {
        const int src = order[static_cast<std::size_t>(start + i)];
        std::copy_n(train_set.samples.begin() +
                        static_cast<std::size_t>(src) * train_set.length,
                    train_set.length,
                    series.begin() + static_cast<std::size_t>(i) * train_set.length);
        labels[static_cast<std::size_t>(i)] = train_set.labels[static_cast<std::size_t>(src)];
      }

      Tape::Scope scope;
      adam.zero_grad();
      TrainStepResult res =
          model.forward_train(series, labels, b, global_step++);
      if (!std::isfinite(res.parts.total))
        throw NumericError("non-finite training loss at epoch " +
                           std::to_string(epoch));
      backward(res.total, /*free_buffers=*/true);
      adam.step();

      sum1 += res.parts.loss1 * b;
      sum2 += res.parts.loss2 * b;
      sum3 += res.parts.loss3 * b;
      seen += b;
      for (int i = 0; i < b; ++i)
        train_correct += res.regular_preds[static_cast<std::size_t>(i)] ==
                         labels[static_cast<std::size_t>(i)];
    }

    EpochRow row;
    row.epoch = epoch;
    row.loss1 = sum1 / seen;
    row.loss2 = sum2 / seen;
    row.loss3 = sum3 / seen;
    row.total = row.loss1 + row.loss2 + row.loss3;
    row.train_acc = static_cast<double>(train_correct) / seen;

    const bool last_epoch = epoch == tc.epochs;
    if (test_set &&
        (last_epoch || tc.eval_every <= 1 || epoch % tc.eval_every == 0)) {
      last_test_acc = evaluate_accuracy(model, *test_set);
      if (tc.target_acc > 0.0 && last_test_acc >= tc.target_acc)
        reached_target = true;
    }
    row.test_acc = last_test_acc;
    row.ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                 std::chrono::steady_clock::now() - t0)
                 .count();
    report.rows.push_back(row);
    report.epochs_run = epoch;
    if (log)
      *log << "epoch " << epoch << "  loss " << row.total << " (" << row.loss1
           << " + " << row.loss2 << " + " << row.loss3 << ")  train_acc "
           << row.train_acc << "  test_acc " << row.test_acc << "  "
           << row.ms << " ms\n";
  }

  report.final_test_acc = last_test_acc;
  if (checkpoint_path) {
    save_checkpoint(model, *checkpoint_path);
    if (test_set) {
      // Recompute the final accuracy from the stored f32 weights so that a
      // later eval of this checkpoint matches the last row exactly.
      FmlaModel reloaded = load_checkpoint(*checkpoint_path);
      report.final_test_acc = evaluate_accuracy(reloaded, *test_set);
      if (!report.rows.empty()) report.rows.back().test_acc = report.final_test_acc;
    }
  }
  return report;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metrics file " + path.string());
  out << "epoch,loss1,loss2,loss3,total,train_acc,test_acc,ms\n";
  char buf[256];
  for (const EpochRow& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.12g,%.12g,%.6f,%.6f,%lld\n",
                  r.epoch, r.loss1, r.loss2, r.loss3, r.total, r.train_acc,
                  r.test_acc, static_cast<long long>(r.ms));
    out << buf;
  }
}

}  // namespace fmla
