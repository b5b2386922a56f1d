#pragma once

#include <array>
#include <cstdint>

#include "radfuse/volume.hpp"

namespace radfuse {

/// Parameters of one synthetic nodule patch.
///
/// The class label drives two independent cues. Solid fraction shifts the
/// nodule's base intensity between ground-glass and solid density, which
/// first-order radiomics picks up directly. A stripe texture inside the nodule
/// has a class-indexed wave vector: even classes run along (1,1,0) and odd
/// classes along (1,-1,0). The two orientations are mirror images, so
/// direction-averaged texture features cannot tell them apart while an
/// oriented convolution can.
struct PhantomSpec {
  Label label = Label::AAH;
  int patch_size = 32;
  double spacing_mm = 1.0;
  double radius_min_mm = 5.0;
  double radius_max_mm = 9.0;
  /// Independent per-axis relative jitter of the semi-axes.
  double axis_jitter = 0.15;
  /// Max nodule-center offset from the patch center, in voxels.
  double center_jitter = 1.5;
  double solid_fraction = 0.5;
  /// Per-sample uniform jitter added to solid_fraction (result clamped to [0,1]).
  double solid_jitter = 0.0;
  double texture_amplitude = 60.0;
  double texture_period = 4.0;
  double noise_sigma = 20.0;
  double background_hu = -850.0;
  double ggo_hu = -700.0;
  double solid_hu = -100.0;
  std::uint64_t seed = 0;

  /// Throws Error when the nodule cannot fit the patch or a field is out of range.
  void validate() const;
  /// Base intensity for a given solid fraction.
  double base_intensity(double solid) const { return ggo_hu + solid * (solid_hu - ggo_hu); }
};

/// Texture wave direction (unnormalized) for a class.
std::array<double, 3> texture_direction(Label label);

/// Mean solid fraction per class; monotone in label order.
using ClassSolidFractions = std::array<double, kNumClasses>;
inline constexpr ClassSolidFractions kDefaultSolidFractions{0.2, 0.3, 0.7, 0.8};

NoduleSample generate_phantom(const PhantomSpec& spec);

/// Per-sample seed derived from (seed, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Generates class_counts[k] samples of class k, overriding label and solid_fraction per class.
Dataset generate_dataset(const std::array<int, kNumClasses>& class_counts, const PhantomSpec& base,
                         std::uint64_t seed, const ClassSolidFractions& solid = kDefaultSolidFractions);

}  // namespace radfuse
