#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "radfuse/volume.hpp"

namespace radfuse {

struct Split {
  std::vector<int> train;  // row indices, ascending
  std::vector<int> test;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
};

/// Per-class shuffle, floor(fraction * count) rows of each class to train and the rest to test.
Split stratified_split(const std::vector<int>& labels, double fraction, std::uint64_t seed);
/// Single shuffle of all rows, floor(fraction * n) to train.
Split random_split(const std::vector<int>& labels, double fraction, std::uint64_t seed);

/// floor(fraction * count), tolerant of products like 0.29 * 100 landing just under an integer.
int floor_count(double fraction, std::size_t count);

/// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  std::array<std::array<int, kNumClasses>, kNumClasses> counts{};

  int total() const;
  int trace() const;
  int row_sum(int k) const;
  int col_sum(int k) const;
};

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels);

struct Metrics {
  double accuracy = 0.0;
  std::array<double, kNumClasses> recall{};
  std::array<double, kNumClasses> precision{};
  /// False where a class was never predicted (or never present) and the value was set to 0.
  std::array<bool, kNumClasses> recall_defined{};
  std::array<bool, kNumClasses> precision_defined{};
};

Metrics summarize(const ConfusionMatrix& cm);

/// {"method", "seed", "accuracy", "confusion"}.
std::string metrics_json(const std::string& method, std::uint64_t seed, const ConfusionMatrix& cm);
/// Aligned text table with class names on both axes plus per-class recall and precision.
std::string confusion_table(const ConfusionMatrix& cm);

struct MethodSummary {
  std::string method;
  std::vector<double> accuracies;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 for a single run
  ConfusionMatrix pooled;
};

MethodSummary summarize_runs(const std::string& method, const std::vector<double>& accuracies,
                             const std::vector<ConfusionMatrix>& confusions);
/// Method / mean / sd / per-seed table, accuracies in percent.
std::string accuracy_table(const std::vector<MethodSummary>& rows);

}  // namespace radfuse
