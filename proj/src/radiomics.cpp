#include "radfuse/radiomics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace radfuse {

void FeatureVector::add(std::string name, double value) {
  for (const auto& [n, v] : entries_)
    if (n == name) throw Error("duplicate feature name '" + name + "'");
  entries_.emplace_back(std::move(name), value);
}

void FeatureVector::append(const FeatureVector& other, const std::string& prefix) {
  for (const auto& [n, v] : other.entries_) add(prefix + n, v);
}

double FeatureVector::get(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  throw Error("no feature named '" + name + "'");
}

bool FeatureVector::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::vector<std::string> FeatureVector::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

std::vector<double> FeatureVector::values() const {
  std::vector<double> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

DiscretizedVolume discretize(const Volume& vol, const Mask& mask, double bin_width) {
  if (!(bin_width > 0.0)) throw Error("bin_width must be > 0");
  if (!(vol.dims() == mask.dims())) throw Error("volume and mask dims differ");
  const auto voxels = vol.voxels();
  const auto on = mask.voxels();
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < voxels.size(); ++i)
    if (on[i]) lo = std::min(lo, voxels[i]);
  if (!std::isfinite(lo)) throw Error("cannot discretize an empty mask");

  DiscretizedVolume d;
  d.dims = vol.dims();
  d.bin_width = bin_width;
  d.level.assign(voxels.size(), 0);
  int top = 1;
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    if (!on[i]) continue;
    const int level = static_cast<int>(std::floor((voxels[i] - lo) / bin_width)) + 1;
    d.level[i] = level;
    top = std::max(top, level);
  }
  d.levels = top;
  return d;
}

std::vector<std::string> band_names(const RadiomicsConfig& cfg) {
  std::vector<std::string> out{"orig"};
  if (cfg.wavelet)
    for (const char* n : WaveletBands::kNames) out.emplace_back(n);
  return out;
}

namespace {

std::string bin_width_tag(double w) {
  std::string s = std::to_string(w);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

void add_band_features(FeatureVector& out, const std::string& band, const Volume& vol, const Mask& mask,
                       const RadiomicsConfig& cfg) {
  if (cfg.first_order) out.append(first_order_features(vol, mask, cfg.bin_width), band + "_firstorder_");
  if (cfg.glcm || cfg.glrlm) {
    const DiscretizedVolume disc = discretize(vol, mask, cfg.bin_width);
    if (cfg.glcm) out.append(glcm_features(disc, mask), band + "_glcm_");
    if (cfg.glrlm) out.append(glrlm_features(disc, mask), band + "_glrlm_");
  }
  for (double w : cfg.extra_bin_widths) {
    const DiscretizedVolume disc = discretize(vol, mask, w);
    const std::string tag = "-bw" + bin_width_tag(w) + "_";
    if (cfg.glcm) out.append(glcm_features(disc, mask), band + "_glcm" + tag);
    if (cfg.glrlm) out.append(glrlm_features(disc, mask), band + "_glrlm" + tag);
  }
}

}  // namespace

FeatureVector extract_all(const NoduleSample& sample, const RadiomicsConfig& cfg) {
  if (!(sample.patch.dims() == sample.mask.dims())) throw Error("sample '" + sample.id + "': patch/mask dims differ");
  if (sample.mask.foreground_count() == 0) throw Error("sample '" + sample.id + "': empty mask");
  for (double w : cfg.extra_bin_widths)
    if (!(w > 0.0)) throw Error("extra bin widths must be > 0");

  FeatureVector out;
  if (cfg.shape) out.append(shape_features(sample.mask, sample.patch.spacing()), "shape_");
  add_band_features(out, "orig", sample.patch, sample.mask, cfg);
  if (cfg.wavelet && (cfg.first_order || cfg.glcm || cfg.glrlm)) {
    const WaveletBands bands = haar3d(sample.patch);
    const Mask band_mask = downsample_mask(sample.mask);
    for (std::size_t b = 0; b < bands.bands.size(); ++b)
      add_band_features(out, WaveletBands::kNames[b], bands.bands[b], band_mask, cfg);
  }
  for (const auto& [name, value] : out.entries())
    if (!std::isfinite(value)) throw Error("sample '" + sample.id + "': feature " + name + " is not finite");
  return out;
}

}  // namespace radfuse
