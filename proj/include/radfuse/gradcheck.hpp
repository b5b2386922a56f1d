#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "radfuse/models.hpp"

namespace radfuse {

/// Worst finite-difference error of one component over all fuzz cases.
struct GradcheckEntry {
  std::string component;
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;
  double tolerance = 0.0;

  bool pass() const { return checked > 0 && max_rel_error < tolerance; }
};

struct GradcheckReport {
  int cases = 0;
  std::uint64_t seed = 0;
  std::vector<GradcheckEntry> entries;

  bool pass() const;
  std::string to_json() const;
  std::string text() const;
};

inline constexpr double kLayerGradTolerance = 1e-5;
inline constexpr double kModelGradTolerance = 1e-4;

/// Randomized central-difference checks of dense, conv3d, relu, gap, softmax-CE and the fusion and CNN models.
/// Every case draws fresh shapes, parameters and inputs. `model` supplies the network widths; rf_dim is drawn.
GradcheckReport run_gradcheck_suite(int cases, std::uint64_t seed, const FusionConfig& model);

}  // namespace radfuse
