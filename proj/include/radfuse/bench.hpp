#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "radfuse/config.hpp"
#include "radfuse/eval.hpp"
#include "radfuse/features.hpp"

namespace radfuse {

/// Stage seeds derived from one run seed.
enum class SeedStage : std::uint64_t { Dataset = 0, Split = 1, Selection = 2, Carve = 3, Trainer = 4, InitCnn = 5, InitFusion = 6 };
std::uint64_t stage_seed(std::uint64_t run_seed, SeedStage stage);

/// Network inputs, one tensor per sample.
std::vector<Tensor> patch_tensors(const Dataset& ds, const ModelSection& model);
std::vector<Tensor> rf_tensors(const FeatureMatrix& rf);

/// Method keys in table order: svm, cnn, combine, fusion.
inline const std::array<std::string, 4> kMethods{"svm", "cnn", "combine", "fusion"};
/// Display name of a method key ("RF+SVM", "CNN", "RF+SVM+CNN", "Fusion").
std::string method_label(const std::string& method);

struct SeedResult {
  std::uint64_t seed = 0;
  int rf_dim = 0;
  std::array<double, 4> accuracy{};
  std::array<ConfusionMatrix, 4> confusion{};
  int cnn_best_epoch = 0;
  int fusion_best_epoch = 0;
};

struct BenchReport {
  std::vector<SeedResult> runs;
  std::vector<MethodSummary> methods;

  double mean(const std::string& method) const;
  /// Deterministic JSON (no timings).
  std::string to_json() const;
  /// Accuracy table followed by pooled confusion matrices.
  std::string text() const;
};

using LogFn = std::function<void(const std::string&)>;

/// Generate, split, extract, select, then train and test all four methods for one seed.
SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed, const LogFn& log = {});
BenchReport run_bench(const RunConfig& cfg, const LogFn& log = {});

}  // namespace radfuse
