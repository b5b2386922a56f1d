#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "radfuse/radiomics.hpp"
#include "radfuse/volume.hpp"

namespace radfuse {

/// Samples in rows, features in columns.
struct FeatureMatrix {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<std::string> names;
  Eigen::MatrixXd values;

  std::size_t rows() const { return ids.size(); }
  std::size_t cols() const { return names.size(); }

  /// Rectangular, unique names, labels in 0..3, all values finite.
  void validate() const;

  FeatureMatrix select_rows(const std::vector<int>& rows) const;
  FeatureMatrix select_cols(const std::vector<int>& cols) const;
};

/// Runs extract_all over every sample. All samples must produce the same feature names.
FeatureMatrix extract_features(const Dataset& ds, const RadiomicsConfig& cfg = {});

/// Header "id,label,<names...>"; values printed with %.17g so a reload is exact.
void write_csv(const FeatureMatrix& m, const std::filesystem::path& path);
std::string to_csv(const FeatureMatrix& m);
FeatureMatrix read_csv(const std::filesystem::path& path);
FeatureMatrix parse_csv(std::string_view text);

std::uint64_t fnv1a64(std::string_view bytes);
/// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);

}  // namespace radfuse
