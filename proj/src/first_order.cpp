#include <algorithm>
#include <cmath>
#include <map>

#include "radfuse/radiomics.hpp"

namespace radfuse {

double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw Error("percentile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

FeatureVector first_order_features(const Volume& vol, const Mask& mask, double bin_width) {
  if (!(vol.dims() == mask.dims())) throw Error("volume and mask dims differ");
  if (!(bin_width > 0.0)) throw Error("bin_width must be > 0");
  std::vector<double> x;
  const auto voxels = vol.voxels();
  const auto on = mask.voxels();
  for (std::size_t i = 0; i < voxels.size(); ++i)
    if (on[i]) x.push_back(voxels[i]);
  if (x.empty()) throw Error("first-order features need a non-empty mask");

  const double n = static_cast<double>(x.size());
  double sum = 0.0, sum_sq = 0.0;
  for (double v : x) {
    sum += v;
    sum_sq += v * v;
  }
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();
  // A constant region gets exact zero moments instead of rounding residue.
  const double mean = lo == hi ? lo : sum / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0;
  for (double v : x) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
    mad += std::abs(d);
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  mad /= n;

  const double p10 = percentile_sorted(sorted, 0.10);
  const double p25 = percentile_sorted(sorted, 0.25);
  const double p75 = percentile_sorted(sorted, 0.75);
  const double p90 = percentile_sorted(sorted, 0.90);

  double robust_mean = 0.0;
  std::size_t robust_n = 0;
  for (double v : x)
    if (v >= p10 && v <= p90) {
      robust_mean += v;
      ++robust_n;
    }
  double robust_mad = 0.0;
  // With very few voxels no sample may fall between the interpolated percentiles.
  if (robust_n > 0) {
    robust_mean /= static_cast<double>(robust_n);
    for (double v : x)
      if (v >= p10 && v <= p90) robust_mad += std::abs(v - robust_mean);
    robust_mad /= static_cast<double>(robust_n);
  }

  std::map<long, std::size_t> histogram;
  for (double v : x) ++histogram[static_cast<long>(std::floor((v - lo) / bin_width))];
  double entropy = 0.0, uniformity = 0.0;
  for (const auto& [bin, count] : histogram) {
    const double p = static_cast<double>(count) / n;
    entropy -= p * std::log2(p);
    uniformity += p * p;
  }

  FeatureVector f;
  f.add("mean", mean);
  f.add("median", percentile_sorted(sorted, 0.5));
  f.add("minimum", lo);
  f.add("maximum", hi);
  f.add("range", hi - lo);
  f.add("variance", m2);
  f.add("std", std::sqrt(m2));
  f.add("skewness", m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0);
  f.add("kurtosis", m2 > 0.0 ? m4 / (m2 * m2) : 0.0);
  f.add("energy", sum_sq);
  f.add("rms", std::sqrt(sum_sq / n));
  f.add("entropy", entropy);
  f.add("uniformity", uniformity);
  f.add("mad", mad);
  f.add("robust_mad", robust_mad);
  f.add("p10", p10);
  f.add("p90", p90);
  f.add("iqr", p75 - p25);
  return f;
}

}  // namespace radfuse
