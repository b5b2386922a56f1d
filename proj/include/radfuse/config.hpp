#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "radfuse/models.hpp"
#include "radfuse/phantom.hpp"
#include "radfuse/radiomics.hpp"
#include "radfuse/selection.hpp"
#include "radfuse/svm.hpp"

namespace radfuse {

inline constexpr int kConfigSchemaVersion = 1;

struct PhantomSection {
  std::array<int, kNumClasses> class_counts{40, 34, 13, 82};
  ClassSolidFractions solid_fractions = kDefaultSolidFractions;
  /// label, solid_fraction and seed are filled per sample.
  PhantomSpec spec;
};

struct ModelSection {
  EncoderConfig encoder;
  int convert_dim = 512;
  int fusion_dim = 256;
  /// Patches enter the networks as (HU - patch_center) / patch_scale.
  double patch_center = -500.0;
  double patch_scale = 500.0;
  /// Start the fusion encoder from the trained CNN baseline's encoder instead of a fresh init.
  bool fusion_encoder_from_cnn = true;
};

struct EvalSection {
  double train_fraction = 0.8;
  bool stratified = true;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

struct PathsSection {
  std::string dataset;
  std::string work;
};

/// Everything a run needs besides the seed. Seeds of the individual stages are derived from the run seed.
struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  PhantomSection phantom;
  RadiomicsConfig radiomics;
  SelectionConfig selection;
  ModelSection model;
  SGDConfig trainer;
  /// Learning rate of the fusion model; 0 means trainer.learning_rate.
  double fusion_learning_rate = 0.0;
  SvmConfig svm;
  EvalSection eval;
  PathsSection paths;

  void validate() const;
  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys and type mismatches are errors.
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  FusionConfig fusion_config(int rf_dim) const;
  CnnConfig cnn_config() const;
  SGDConfig fusion_trainer() const;
};

}  // namespace radfuse
