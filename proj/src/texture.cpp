#include <algorithm>
#include <cmath>

#include "radfuse/radiomics.hpp"

namespace radfuse {

const std::array<Offset3, 13>& unique_directions() {
  static const std::array<Offset3, 13> dirs{{
      {1, 0, 0}, {0, 1, 0}, {0, 0, 1},
      {1, 1, 0}, {1, -1, 0}, {1, 0, 1}, {1, 0, -1}, {0, 1, 1}, {0, 1, -1},
      {1, 1, 1}, {1, 1, -1}, {1, -1, 1}, {1, -1, -1},
  }};
  return dirs;
}

namespace {

void check_inputs(const DiscretizedVolume& disc, const Mask& mask) {
  if (!(disc.dims == mask.dims())) throw Error("discretized volume and mask dims differ");
  if (disc.levels < 1) throw Error("discretized volume must have >= 1 gray level");
  if (mask.foreground_count() == 0) throw Error("texture features need a non-empty mask");
}

FeatureVector average(const std::vector<FeatureVector>& per_dir, const std::vector<std::string>& names) {
  FeatureVector out;
  for (std::size_t k = 0; k < names.size(); ++k) {
    double acc = 0.0;
    for (const auto& f : per_dir) acc += f.value(k);
    out.add(names[k], per_dir.empty() ? 0.0 : acc / static_cast<double>(per_dir.size()));
  }
  return out;
}

const std::vector<std::string> kGlcmNames{"contrast",   "dissimilarity", "homogeneity",
                                          "energy",     "entropy",       "correlation",
                                          "cluster_shade", "cluster_prominence", "max_probability"};
const std::vector<std::string> kGlrlmNames{"sre", "lre", "gln", "rln", "rp", "lglre", "hglre"};

}  // namespace

GLCMatrix glcm_matrix(const DiscretizedVolume& disc, const Mask& mask, Offset3 offset, bool normalize) {
  check_inputs(disc, mask);
  GLCMatrix m;
  m.levels = disc.levels;
  m.offset = offset;
  const auto ng = static_cast<std::size_t>(disc.levels);
  m.p.assign(ng * ng, 0.0);
  const Dims& d = disc.dims;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        if (!mask.at(x, y, z)) continue;
        const int qx = x + offset[0], qy = y + offset[1], qz = z + offset[2];
        if (!mask.test(qx, qy, qz)) continue;
        const auto i = static_cast<std::size_t>(disc.at(x, y, z) - 1);
        const auto j = static_cast<std::size_t>(disc.at(qx, qy, qz) - 1);
        m.p[i * ng + j] += 1.0;
        m.p[j * ng + i] += 1.0;
      }
  for (double c : m.p) m.total += c;
  if (normalize && m.total > 0.0)
    for (double& c : m.p) c /= m.total;
  return m;
}

FeatureVector glcm_matrix_features(const GLCMatrix& m) {
  const int ng = m.levels;
  std::vector<double> px(static_cast<std::size_t>(ng), 0.0);
  for (int i = 1; i <= ng; ++i)
    for (int j = 1; j <= ng; ++j) px[i - 1] += m(i, j);
  double mu = 0.0;
  for (int i = 1; i <= ng; ++i) mu += i * px[i - 1];
  double var = 0.0;
  for (int i = 1; i <= ng; ++i) var += (i - mu) * (i - mu) * px[i - 1];

  double contrast = 0, dissimilarity = 0, homogeneity = 0, energy = 0, entropy = 0, cov = 0, shade = 0,
         prominence = 0, max_p = 0;
  for (int i = 1; i <= ng; ++i)
    for (int j = 1; j <= ng; ++j) {
      const double p = m(i, j);
      if (p == 0.0) continue;
      const double diff = i - j;
      const double s = i + j - 2.0 * mu;
      contrast += diff * diff * p;
      dissimilarity += std::abs(diff) * p;
      homogeneity += p / (1.0 + diff * diff);
      energy += p * p;
      entropy -= p * std::log2(p);
      cov += (i - mu) * (j - mu) * p;
      shade += s * s * s * p;
      prominence += s * s * s * s * p;
      max_p = std::max(max_p, p);
    }
  FeatureVector f;
  f.add("contrast", contrast);
  f.add("dissimilarity", dissimilarity);
  f.add("homogeneity", homogeneity);
  f.add("energy", energy);
  f.add("entropy", entropy);
  f.add("correlation", var > 0.0 ? cov / var : 0.0);
  f.add("cluster_shade", shade);
  f.add("cluster_prominence", prominence);
  f.add("max_probability", max_p);
  return f;
}

FeatureVector glcm_features(const DiscretizedVolume& disc, const Mask& mask) {
  std::vector<FeatureVector> per_dir;
  for (const auto& dir : unique_directions()) {
    const GLCMatrix m = glcm_matrix(disc, mask, dir, true);
    if (m.total > 0.0) per_dir.push_back(glcm_matrix_features(m));
  }
  return average(per_dir, kGlcmNames);
}

GLRLMatrix glrlm_matrix(const DiscretizedVolume& disc, const Mask& mask, Offset3 dir) {
  check_inputs(disc, mask);
  const Dims& d = disc.dims;
  struct Run {
    int level;
    int length;
  };
  std::vector<Run> runs;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        if (!mask.at(x, y, z)) continue;
        const int level = disc.at(x, y, z);
        const int px = x - dir[0], py = y - dir[1], pz = z - dir[2];
        if (mask.test(px, py, pz) && disc.at(px, py, pz) == level) continue;  // not a run start
        int length = 1;
        int cx = x + dir[0], cy = y + dir[1], cz = z + dir[2];
        while (mask.test(cx, cy, cz) && disc.at(cx, cy, cz) == level) {
          ++length;
          cx += dir[0];
          cy += dir[1];
          cz += dir[2];
        }
        runs.push_back({level, length});
      }
  GLRLMatrix m;
  m.levels = disc.levels;
  m.direction = dir;
  for (const auto& r : runs) m.max_run = std::max(m.max_run, r.length);
  m.counts.assign(static_cast<std::size_t>(m.levels) * m.max_run, 0.0);
  for (const auto& r : runs) m.counts[static_cast<std::size_t>(r.level - 1) * m.max_run + (r.length - 1)] += 1.0;
  return m;
}

FeatureVector glrlm_matrix_features(const GLRLMatrix& m) {
  double runs = 0, voxels = 0, sre = 0, lre = 0, lglre = 0, hglre = 0;
  std::vector<double> by_level(static_cast<std::size_t>(m.levels), 0.0);
  std::vector<double> by_length(static_cast<std::size_t>(m.max_run), 0.0);
  for (int i = 1; i <= m.levels; ++i)
    for (int j = 1; j <= m.max_run; ++j) {
      const double c = m(i, j);
      if (c == 0.0) continue;
      const double jj = static_cast<double>(j) * j;
      const double ii = static_cast<double>(i) * i;
      runs += c;
      voxels += c * j;
      sre += c / jj;
      lre += c * jj;
      lglre += c / ii;
      hglre += c * ii;
      by_level[i - 1] += c;
      by_length[j - 1] += c;
    }
  double gln = 0, rln = 0;
  for (double c : by_level) gln += c * c;
  for (double c : by_length) rln += c * c;
  FeatureVector f;
  const bool any = runs > 0.0;
  f.add("sre", any ? sre / runs : 0.0);
  f.add("lre", any ? lre / runs : 0.0);
  f.add("gln", any ? gln / runs : 0.0);
  f.add("rln", any ? rln / runs : 0.0);
  f.add("rp", any ? runs / voxels : 0.0);
  f.add("lglre", any ? lglre / runs : 0.0);
  f.add("hglre", any ? hglre / runs : 0.0);
  return f;
}

FeatureVector glrlm_features(const DiscretizedVolume& disc, const Mask& mask) {
  std::vector<FeatureVector> per_dir;
  for (const auto& dir : unique_directions()) per_dir.push_back(glrlm_matrix_features(glrlm_matrix(disc, mask, dir)));
  return average(per_dir, kGlrlmNames);
}

}  // namespace radfuse
