#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "radfuse/volume.hpp"

namespace radfuse {

/// Ordered (name, value) list. Names are unique within a vector.
class FeatureVector {
 public:
  void add(std::string name, double value);
  void append(const FeatureVector& other, const std::string& prefix = "");

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  double value(std::size_t i) const { return entries_[i].second; }
  /// Throws if `name` is absent.
  double get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<std::string> names() const;
  std::vector<double> values() const;
  const std::vector<std::pair<std::string, double>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, double>> entries_;
};

// ---------------------------------------------------------------------------
// Discretization
// ---------------------------------------------------------------------------

struct DiscretizedVolume {
  Dims dims;
  /// Level per voxel in 1..levels under the mask, 0 elsewhere.
  std::vector<int> level;
  int levels = 1;
  double bin_width = 1.0;

  int at(int x, int y, int z) const {
    return level[(static_cast<std::size_t>(z) * dims.ny + y) * dims.nx + x];
  }
};

/// level = floor((v - min_masked) / bin_width) + 1.
DiscretizedVolume discretize(const Volume& vol, const Mask& mask, double bin_width);

// ---------------------------------------------------------------------------
// Feature families
// ---------------------------------------------------------------------------

/// Linear-interpolated percentile (q in [0,1]) of an ascending-sorted sample.
double percentile_sorted(const std::vector<double>& sorted, double q);

/// 18 first-order statistics of the masked intensities; entropy/uniformity use `bin_width` bins.
FeatureVector first_order_features(const Volume& vol, const Mask& mask, double bin_width);

/// Surface triangle mesh area and enclosed volume.
struct MeshMeasures {
  double area = 0.0;
  double volume = 0.0;
  std::size_t triangles = 0;
};

/// Marching cubes of the 0.5 level set of the binomial-smoothed mask, physical units.
/// Falls back to the raw binary mask when smoothing erases the surface.
MeshMeasures mask_mesh(const Mask& mask, const Spacing& spacing);

/// 14 shape descriptors.
FeatureVector shape_features(const Mask& mask, const Spacing& spacing);

using Offset3 = std::array<int, 3>;

/// The 13 unique neighbor directions of the 26-neighborhood.
const std::array<Offset3, 13>& unique_directions();

/// Ng x Ng co-occurrence matrix, row-major, index (i-1)*Ng + (j-1).
struct GLCMatrix {
  int levels = 1;
  Offset3 offset{1, 0, 0};
  std::vector<double> p;
  double total = 0.0;

  double operator()(int i, int j) const { return p[static_cast<std::size_t>(i - 1) * levels + (j - 1)]; }
};

/// Symmetric counts for one offset. With `normalize`, entries sum to 1 (left as zeros when there are no pairs).
GLCMatrix glcm_matrix(const DiscretizedVolume& disc, const Mask& mask, Offset3 offset, bool normalize = true);

/// The 9 per-matrix features of a normalized GLCM.
FeatureVector glcm_matrix_features(const GLCMatrix& m);

/// 9 GLCM features averaged over the 13 directions that contain at least one voxel pair.
FeatureVector glcm_features(const DiscretizedVolume& disc, const Mask& mask);

/// Ng x Nr run counts, index (i-1)*max_run + (j-1).
struct GLRLMatrix {
  int levels = 1;
  int max_run = 1;
  Offset3 direction{1, 0, 0};
  std::vector<double> counts;

  double operator()(int level, int run) const {
    return counts[static_cast<std::size_t>(level - 1) * max_run + (run - 1)];
  }
};

GLRLMatrix glrlm_matrix(const DiscretizedVolume& disc, const Mask& mask, Offset3 direction);
FeatureVector glrlm_matrix_features(const GLRLMatrix& m);
/// 7 run-length features averaged over the 13 directions.
FeatureVector glrlm_features(const DiscretizedVolume& disc, const Mask& mask);

// ---------------------------------------------------------------------------
// Wavelets
// ---------------------------------------------------------------------------

/// Single-level orthonormal 3D Haar bands. Band letters give the x, y, z filters.
struct WaveletBands {
  static constexpr std::array<const char*, 8> kNames{"LLL", "LLH", "LHL", "LHH", "HLL", "HLH", "HHL", "HHH"};
  std::array<Volume, 8> bands;
  /// Dims of the even-padded input.
  Dims padded;
};

WaveletBands haar3d(const Volume& vol);
/// Reconstructs the even-padded input.
Volume haar3d_inverse(const WaveletBands& bands);
/// Halves mask dims by 2x2x2 majority (ties count as foreground), edge-replicating odd dims.
Mask downsample_mask(const Mask& mask);

// ---------------------------------------------------------------------------
// Full extraction
// ---------------------------------------------------------------------------

struct RadiomicsConfig {
  double bin_width = 25.0;
  /// Each entry adds another GLCM + GLRLM pass per band at that bin width.
  std::vector<double> extra_bin_widths;
  bool shape = true;
  bool first_order = true;
  bool glcm = true;
  bool glrlm = true;
  bool wavelet = true;
};

/// Band names used in feature prefixes, original band first.
std::vector<std::string> band_names(const RadiomicsConfig& cfg);

FeatureVector extract_all(const NoduleSample& sample, const RadiomicsConfig& cfg = {});

}  // namespace radfuse
