#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace radfuse {

/// Thrown for any malformed input: bad dims, bad files, non-finite data.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dims {
  int nx = 1;
  int ny = 1;
  int nz = 1;

  std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz;
  }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

using Index3 = std::array<int, 3>;

/// 3D scalar grid, x-fastest linear order.
class Volume {
 public:
  Volume() = default;
  Volume(Dims dims, Spacing spacing, double fill = 0.0);
  Volume(Dims dims, Spacing spacing, std::vector<double> voxels);

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return voxels_.size(); }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims_.ny + y) * dims_.nx + x;
  }
  double& at(int x, int y, int z) { return voxels_[index(x, y, z)]; }
  double at(int x, int y, int z) const { return voxels_[index(x, y, z)]; }

  std::span<double> voxels() { return voxels_; }
  std::span<const double> voxels() const { return voxels_; }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<double> voxels_ = std::vector<double>(1, 0.0);
};

/// Binary voxel mask.
class Mask {
 public:
  Mask() = default;
  explicit Mask(Dims dims, std::uint8_t fill = 0);
  Mask(Dims dims, std::vector<std::uint8_t> voxels);

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return voxels_.size(); }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims_.ny + y) * dims_.nx + x;
  }
  bool at(int x, int y, int z) const { return voxels_[index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool on) { voxels_[index(x, y, z)] = on ? 1 : 0; }
  /// False outside the grid.
  bool test(int x, int y, int z) const { return dims_.contains(x, y, z) && at(x, y, z); }

  std::span<const std::uint8_t> voxels() const { return voxels_; }
  std::size_t foreground_count() const;

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  Dims dims_;
  std::vector<std::uint8_t> voxels_ = std::vector<std::uint8_t>(1, 0);
};

enum class Label : std::uint8_t { AAH = 0, AIS = 1, MIA = 2, IA = 3 };
inline constexpr int kNumClasses = 4;

std::string label_name(Label label);
Label label_from_int(int code);
Label label_from_name(const std::string& name);
inline int label_code(Label label) { return static_cast<int>(label); }

struct NoduleSample {
  std::string id;
  Volume patch;
  Mask mask;
  Label label = Label::AAH;
};

struct ManifestEntry {
  std::string id;
  Label label = Label::AAH;
  std::string volume_path;
  std::string mask_path;
};

struct Dataset {
  std::vector<NoduleSample> samples;
  std::vector<ManifestEntry> manifest;

  /// Throws unless non-empty, ids unique, and every patch/mask pair agrees on dims.
  void validate() const;
  std::array<int, kNumClasses> histogram() const;
};

/// On-disk scalar widths for the container format.
enum class ScalarType { Float32, Float64, UInt8 };

/// Writes `<stem>.json` + `<stem>.raw`. Float32 narrows values.
void save_volume(const Volume& vol, const std::filesystem::path& stem, ScalarType type = ScalarType::Float32);
Volume load_volume(const std::filesystem::path& stem);
void save_mask(const Mask& mask, const std::filesystem::path& stem);
Mask load_mask(const std::filesystem::path& stem);

/// Writes per-sample containers under `dir` plus `dir/manifest.json`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

inline constexpr double kAirHU = -1024.0;

/// Crops a `size`-shaped block centered at `center`; voxels outside `vol` take `fill`.
Volume extract_patch(const Volume& vol, Index3 center, Index3 size, double fill = kAirHU);

}  // namespace radfuse
