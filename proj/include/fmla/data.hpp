#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fmla {

// One split of a fixed-length univariate classification dataset. Labels are
// remapped to 0..K-1 by sorted original value.
struct TimeSeriesDataset {
  std::string name;
  std::string split;  // "train" or "test"
  int num_samples = 0;
  int length = 0;
  int num_classes = 0;
  std::vector<double> samples;            // num_samples x length, row-major
  std::vector<int> labels;                // remapped
  std::map<double, int> label_map;        // original -> contiguous

  std::span<const double> sample(int i) const {
    return {samples.data() + static_cast<std::size_t>(i) * length,
            static_cast<std::size_t>(length)};
  }
};

// Raw parse of one UCR2018-format file: one sample per line, label first,
// tab- or comma-separated. NaN cells pass through untouched. Ragged rows and
// empty files are data errors naming the line.
TimeSeriesDataset parse_ucr_file(const std::filesystem::path& file,
                                 const std::string& name,
                                 const std::string& split);

// parse + fill_missing + znormalize per series.
TimeSeriesDataset load_ucr_split(const std::filesystem::path& file,
                                 const std::string& name,
                                 const std::string& split);

struct UcrDataset {
  TimeSeriesDataset train;
  TimeSeriesDataset test;
};

// Loads <dir>/<name>/<name>_TRAIN.tsv and <name>_TEST.tsv.
UcrDataset load_ucr_dataset(const std::filesystem::path& dir,
                            const std::string& name);

// Per-series standardization to mean 0, std 1; near-constant series become
// zeros.
void znormalize_series(std::span<double> x);

// Linear interpolation across interior NaN runs; edge NaNs copy the nearest
// finite value. All-NaN series is a data error.
void fill_missing(std::span<double> x);

// Writes the UCR tab-separated layout (original labels, %.17g values).
void write_ucr_file(const std::filesystem::path& file,
                    const TimeSeriesDataset& ds);

}  // namespace fmla
