#include "fmla/synth.hpp"

#include <cmath>
#include <numbers>

#include "fmla/rng.hpp"

namespace fmla {

TimeSeriesDataset make_two_sine(int num_samples, int length, double noise_sigma,
                                std::uint64_t seed, const std::string& split) {
  TimeSeriesDataset ds;
  ds.name = "TwoSine";
  ds.split = split;
  ds.num_samples = num_samples;
  ds.length = length;
  ds.num_classes = 2;
  ds.label_map = {{0.0, 0}, {1.0, 1}};
  ds.samples.resize(static_cast<std::size_t>(num_samples) * length);
  ds.labels.resize(static_cast<std::size_t>(num_samples));

  Rng rng = make_rng({seed, kDataStream});
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, noise_sigma);
  const double freq[2] = {3.0, 4.0};  // cycles per window

  for (int i = 0; i < num_samples; ++i) {
    const int cls = i % 2;
    ds.labels[static_cast<std::size_t>(i)] = cls;
    const double ph = phase(rng);
    double* row = ds.samples.data() + static_cast<std::size_t>(i) * length;
    for (int t = 0; t < length; ++t)
      row[t] = std::sin(2.0 * std::numbers::pi * freq[cls] * t / length + ph) +
               noise(rng);
    znormalize_series({row, static_cast<std::size_t>(length)});
  }
  return ds;
}

}  // namespace fmla
