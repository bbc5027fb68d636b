#pragma once

#include <cstdint>

#include "fmla/data.hpp"

namespace fmla {

// Two-class synthetic benchmark: sinusoids of two nearby frequencies with a
// random phase and additive Gaussian noise, z-normalized. Balanced labels.
TimeSeriesDataset make_two_sine(int num_samples, int length, double noise_sigma,
                                std::uint64_t seed, const std::string& split);

}  // namespace fmla
