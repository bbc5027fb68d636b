#include "fmla/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include "fmla/error.hpp"

namespace fmla {

namespace {

std::vector<double> split_fields(const std::string& line, int lineno,
                                 const std::string& file) {
  std::vector<double> fields;
  std::size_t i = 0;
  const char sep = line.find('\t') != std::string::npos ? '\t' : ',';
  while (i <= line.size()) {
    std::size_t j = line.find(sep, i);
    if (j == std::string::npos) j = line.size();
    std::string tok = line.substr(i, j - i);
    // strip spaces and a possible trailing \r
    while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\r'))
      tok.pop_back();
    while (!tok.empty() && tok.front() == ' ') tok.erase(tok.begin());
    if (!tok.empty()) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0')
        throw DataError(file + ":" + std::to_string(lineno) +
                        ": unparseable field '" + tok + "'");
      fields.push_back(v);
    } else if (j < line.size()) {
      throw DataError(file + ":" + std::to_string(lineno) + ": empty field");
    }
    i = j + 1;
    if (j == line.size()) break;
  }
  return fields;
}

}  // namespace

TimeSeriesDataset parse_ucr_file(const std::filesystem::path& file,
                                 const std::string& name,
                                 const std::string& split) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open dataset file " + file.string());
  TimeSeriesDataset ds;
  ds.name = name;
  ds.split = split;
  std::vector<double> raw_labels;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> fields = split_fields(line, lineno, file.string());
    if (fields.size() < 2)
      throw DataError(file.string() + ":" + std::to_string(lineno) +
                      ": expected a label and at least one value");
    const int len = static_cast<int>(fields.size()) - 1;
    if (ds.num_samples == 0) {
      ds.length = len;
    } else if (len != ds.length) {
      throw DataError(file.string() + ":" + std::to_string(lineno) +
                      ": ragged row, expected " + std::to_string(ds.length) +
                      " values, got " + std::to_string(len));
    }
    raw_labels.push_back(fields[0]);
    ds.samples.insert(ds.samples.end(), fields.begin() + 1, fields.end());
    ++ds.num_samples;
  }
  if (ds.num_samples == 0)
    throw DataError("empty dataset file " + file.string());

  // Stable remap: sorted distinct original labels -> 0..K-1.
  std::set<double> distinct(raw_labels.begin(), raw_labels.end());
  int next = 0;
  for (double v : distinct) ds.label_map[v] = next++;
  ds.num_classes = next;
  ds.labels.reserve(raw_labels.size());
  for (double v : raw_labels) ds.labels.push_back(ds.label_map.at(v));
  return ds;
}

TimeSeriesDataset load_ucr_split(const std::filesystem::path& file,
                                 const std::string& name,
                                 const std::string& split) {
  TimeSeriesDataset ds = parse_ucr_file(file, name, split);
  for (int i = 0; i < ds.num_samples; ++i) {
    std::span<double> row(ds.samples.data() +
                              static_cast<std::size_t>(i) * ds.length,
                          static_cast<std::size_t>(ds.length));
    fill_missing(row);
    znormalize_series(row);
  }
  return ds;
}

UcrDataset load_ucr_dataset(const std::filesystem::path& dir,
                            const std::string& name) {
  const auto base = dir / name;
  UcrDataset out;
  out.train = load_ucr_split(base / (name + "_TRAIN.tsv"), name, "train");
  out.test = load_ucr_split(base / (name + "_TEST.tsv"), name, "test");
  if (out.train.length != out.test.length)
    throw DataError(name + ": train length " +
                    std::to_string(out.train.length) + " vs test length " +
                    std::to_string(out.test.length));
  if (out.train.label_map != out.test.label_map)
    throw DataError(name + ": train/test label sets differ");
  return out;
}

void znormalize_series(std::span<double> x) {
  if (x.empty()) return;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double sd = std::sqrt(var);
  if (sd < 1e-8) {
    std::fill(x.begin(), x.end(), 0.0);
    return;
  }
  for (double& v : x) v = (v - mean) / sd;
}

void fill_missing(std::span<double> x) {
  const int n = static_cast<int>(x.size());
  int first = -1, last = -1;
  for (int i = 0; i < n; ++i)
    if (std::isfinite(x[static_cast<std::size_t>(i)])) {
      if (first < 0) first = i;
      last = i;
    }
  if (first < 0) throw DataError("series is entirely missing");
  for (int i = 0; i < first; ++i) x[static_cast<std::size_t>(i)] = x[first];
  for (int i = last + 1; i < n; ++i) x[static_cast<std::size_t>(i)] = x[last];
  int i = first;
  while (i <= last) {
    if (std::isfinite(x[static_cast<std::size_t>(i)])) {
      ++i;
      continue;
    }
    // interior NaN run [i, j); endpoints i-1 and j are finite
    int j = i;
    while (!std::isfinite(x[static_cast<std::size_t>(j)])) ++j;
    const double a = x[static_cast<std::size_t>(i - 1)];
    const double b = x[static_cast<std::size_t>(j)];
    const int span = j - (i - 1);
    for (int k = i; k < j; ++k)
      x[static_cast<std::size_t>(k)] =
          a + (b - a) * static_cast<double>(k - (i - 1)) / span;
    i = j;
  }
}

void write_ucr_file(const std::filesystem::path& file,
                    const TimeSeriesDataset& ds) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  // invert the label map back to original values
  std::vector<double> original(static_cast<std::size_t>(ds.num_classes));
  for (const auto& [orig, idx] : ds.label_map)
    original[static_cast<std::size_t>(idx)] = orig;
  char buf[64];
  for (int i = 0; i < ds.num_samples; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g",
                  original[static_cast<std::size_t>(ds.labels[i])]);
    out << buf;
    for (int t = 0; t < ds.length; ++t) {
      std::snprintf(buf, sizeof buf, "%.17g",
                    ds.samples[static_cast<std::size_t>(i) * ds.length + t]);
      out << '\t' << buf;
    }
    out << '\n';
  }
}

}  // namespace fmla
