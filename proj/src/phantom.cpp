#include "radfuse/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace radfuse {

void PhantomSpec::validate() const {
  if (patch_size < 1) throw Error("phantom patch_size must be >= 1");
  if (!(spacing_mm > 0.0)) throw Error("phantom spacing must be > 0");
  if (!(radius_min_mm > 0.0) || radius_max_mm < radius_min_mm) throw Error("phantom radius range is invalid");
  if (axis_jitter < 0.0 || axis_jitter >= 1.0) throw Error("phantom axis_jitter must be in [0,1)");
  if (center_jitter < 0.0) throw Error("phantom center_jitter must be >= 0");
  if (solid_fraction < 0.0 || solid_fraction > 1.0) throw Error("phantom solid_fraction must be in [0,1]");
  if (solid_jitter < 0.0) throw Error("phantom solid_jitter must be >= 0");
  if (noise_sigma < 0.0) throw Error("phantom noise_sigma must be >= 0");
  if (!(texture_period > 0.0)) throw Error("phantom texture_period must be > 0");
  const double extent = radius_max_mm * (1.0 + axis_jitter) / spacing_mm + center_jitter;
  if (extent > (patch_size - 1) / 2.0)
    throw Error("phantom radius exceeds patch bounds (extent " + std::to_string(extent) + " voxels, half-patch " +
                std::to_string((patch_size - 1) / 2.0) + ")");
}

std::array<double, 3> texture_direction(Label label) {
  return label_code(label) % 2 == 0 ? std::array<double, 3>{1.0, 1.0, 0.0} : std::array<double, 3>{1.0, -1.0, 0.0};
}

NoduleSample generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double radius = uniform(spec.radius_min_mm, spec.radius_max_mm);
  std::array<double, 3> semi{};
  for (auto& a : semi) a = radius * (1.0 + uniform(-spec.axis_jitter, spec.axis_jitter));
  const double mid = (spec.patch_size - 1) / 2.0;
  std::array<double, 3> center{};
  for (auto& c : center) c = mid + uniform(-spec.center_jitter, spec.center_jitter);
  const double solid =
      std::clamp(spec.solid_fraction + uniform(-spec.solid_jitter, spec.solid_jitter), 0.0, 1.0);
  const double phase = uniform(0.0, 2.0 * std::numbers::pi);

  const auto dir = texture_direction(spec.label);
  const double dir_norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  const double wave = 2.0 * std::numbers::pi / spec.texture_period / dir_norm;
  const double base = spec.base_intensity(solid);

  const int n = spec.patch_size;
  const Dims dims{n, n, n};
  const Spacing spacing{spec.spacing_mm, spec.spacing_mm, spec.spacing_mm};
  Volume patch(dims, spacing, spec.background_hu);
  Mask mask(dims);
  std::normal_distribution<double> noise(0.0, 1.0);

  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dx = (x - center[0]) * spec.spacing_mm / semi[0];
        const double dy = (y - center[1]) * spec.spacing_mm / semi[1];
        const double dz = (z - center[2]) * spec.spacing_mm / semi[2];
        double v = spec.background_hu;
        if (dx * dx + dy * dy + dz * dz <= 1.0) {
          mask.set(x, y, z, true);
          v = base + spec.texture_amplitude * std::cos(wave * (dir[0] * x + dir[1] * y + dir[2] * z) + phase);
        }
        // Draw noise for every voxel so the stream layout does not depend on the shape.
        const double eps = noise(rng);
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * eps;
        // Stored values are float-representable so the float32 container round-trips exactly.
        patch.at(x, y, z) = static_cast<double>(static_cast<float>(v));
      }

  NoduleSample s;
  s.label = spec.label;
  s.patch = std::move(patch);
  s.mask = std::move(mask);
  return s;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Dataset generate_dataset(const std::array<int, kNumClasses>& class_counts, const PhantomSpec& base,
                         std::uint64_t seed, const ClassSolidFractions& solid) {
  int total = 0;
  for (int c : class_counts) {
    if (c < 0) throw Error("class counts must be >= 0");
    total += c;
  }
  if (total < 1) throw Error("class counts are all zero");

  Dataset ds;
  ds.samples.reserve(static_cast<std::size_t>(total));
  std::uint64_t index = 0;
  for (int k = 0; k < kNumClasses; ++k) {
    for (int i = 0; i < class_counts[k]; ++i, ++index) {
      PhantomSpec spec = base;
      spec.label = label_from_int(k);
      spec.solid_fraction = solid[k];
      spec.seed = derive_seed(seed, index);
      NoduleSample s = generate_phantom(spec);
      char id[32];
      std::snprintf(id, sizeof id, "nodule_%04llu", static_cast<unsigned long long>(index));
      s.id = id;
      ds.manifest.push_back({s.id, s.label, "volumes/" + s.id + ".json", "masks/" + s.id + ".json"});
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace radfuse
