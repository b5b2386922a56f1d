#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "marching_tables.hpp"
#include "radfuse/radiomics.hpp"

namespace radfuse {

namespace {

constexpr int kPad = 2;

struct Field {
  int nx, ny, nz;
  std::vector<double> v;
  double at(int x, int y, int z) const { return v[(static_cast<std::size_t>(z) * ny + y) * nx + x]; }
  double& at(int x, int y, int z) { return v[(static_cast<std::size_t>(z) * ny + y) * nx + x]; }
};

Field padded_field(const Mask& mask) {
  const Dims& d = mask.dims();
  Field f{d.nx + 2 * kPad, d.ny + 2 * kPad, d.nz + 2 * kPad, {}};
  f.v.assign(static_cast<std::size_t>(f.nx) * f.ny * f.nz, 0.0);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x)
        if (mask.at(x, y, z)) f.at(x + kPad, y + kPad, z + kPad) = 1.0;
  return f;
}

// Separable [1,2,1]/4 along each axis; zero beyond the (already padded) grid.
Field binomial_smooth(const Field& in) {
  Field cur = in;
  const std::array<int, 3> n{in.nx, in.ny, in.nz};
  for (int axis = 0; axis < 3; ++axis) {
    Field next = cur;
    for (int z = 0; z < in.nz; ++z)
      for (int y = 0; y < in.ny; ++y)
        for (int x = 0; x < in.nx; ++x) {
          std::array<int, 3> p{x, y, z};
          const int c = p[axis];
          double acc = 0.5 * cur.at(x, y, z);
          if (c > 0) {
            auto q = p;
            --q[axis];
            acc += 0.25 * cur.at(q[0], q[1], q[2]);
          }
          if (c + 1 < n[axis]) {
            auto q = p;
            ++q[axis];
            acc += 0.25 * cur.at(q[0], q[1], q[2]);
          }
          next.at(x, y, z) = acc;
        }
    cur = std::move(next);
  }
  return cur;
}

constexpr std::array<std::array<int, 3>, 8> kCorner{{
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
}};
constexpr std::array<std::array<int, 2>, 12> kEdge{{
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
}};

MeshMeasures march(const Field& f, const Spacing& s, double iso) {
  MeshMeasures m;
  double signed_volume = 0.0;
  for (int z = 0; z + 1 < f.nz; ++z)
    for (int y = 0; y + 1 < f.ny; ++y)
      for (int x = 0; x + 1 < f.nx; ++x) {
        std::array<double, 8> val;
        int cube = 0;
        for (int k = 0; k < 8; ++k) {
          val[k] = f.at(x + kCorner[k][0], y + kCorner[k][1], z + kCorner[k][2]);
          if (val[k] < iso) cube |= 1 << k;
        }
        if (detail::kEdgeTable[cube] == 0) continue;
        std::array<Eigen::Vector3d, 12> vert;
        for (int e = 0; e < 12; ++e) {
          if (!(detail::kEdgeTable[cube] & (1 << e))) continue;
          const int a = kEdge[e][0], b = kEdge[e][1];
          const double t = (iso - val[a]) / (val[b] - val[a]);
          Eigen::Vector3d pa(x + kCorner[a][0], y + kCorner[a][1], z + kCorner[a][2]);
          Eigen::Vector3d pb(x + kCorner[b][0], y + kCorner[b][1], z + kCorner[b][2]);
          Eigen::Vector3d p = pa + t * (pb - pa);
          vert[e] = Eigen::Vector3d(p.x() * s.x, p.y() * s.y, p.z() * s.z);
        }
        const auto& tri = detail::kTriTable[cube];
        for (int i = 0; i < 16 && tri[i] >= 0; i += 3) {
          const Eigen::Vector3d& p0 = vert[tri[i]];
          const Eigen::Vector3d& p1 = vert[tri[i + 1]];
          const Eigen::Vector3d& p2 = vert[tri[i + 2]];
          m.area += 0.5 * (p1 - p0).cross(p2 - p0).norm();
          signed_volume += p0.dot(p1.cross(p2)) / 6.0;
          ++m.triangles;
        }
      }
  m.volume = std::abs(signed_volume);
  return m;
}

}  // namespace

MeshMeasures mask_mesh(const Mask& mask, const Spacing& spacing) {
  const Field raw = padded_field(mask);
  MeshMeasures m = march(binomial_smooth(raw), spacing, 0.5);
  if (m.triangles == 0) m = march(raw, spacing, 0.5);
  return m;
}

FeatureVector shape_features(const Mask& mask, const Spacing& spacing) {
  const Dims& d = mask.dims();
  const std::size_t count = mask.foreground_count();
  if (count == 0) throw Error("shape features need a non-empty mask");

  const double voxel_volume = static_cast<double>(count) * spacing.x * spacing.y * spacing.z;
  const MeshMeasures mesh = mask_mesh(mask, spacing);
  const double area = mesh.area;
  const double pi = std::numbers::pi;

  // Surface voxels: foreground with a 6-neighbor outside the mask or the grid.
  std::vector<Eigen::Vector3d> surface;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        if (!mask.at(x, y, z)) continue;
        const Eigen::Vector3d p(x * spacing.x, y * spacing.y, z * spacing.z);
        mean += p;
        if (!mask.test(x - 1, y, z) || !mask.test(x + 1, y, z) || !mask.test(x, y - 1, z) ||
            !mask.test(x, y + 1, z) || !mask.test(x, y, z - 1) || !mask.test(x, y, z + 1))
          surface.push_back(p);
      }
  mean /= static_cast<double>(count);

  double max_d2 = 0.0;
  for (std::size_t i = 0; i < surface.size(); ++i)
    for (std::size_t j = i + 1; j < surface.size(); ++j) max_d2 = std::max(max_d2, (surface[i] - surface[j]).squaredNorm());

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        if (!mask.at(x, y, z)) continue;
        const Eigen::Vector3d q = Eigen::Vector3d(x * spacing.x, y * spacing.y, z * spacing.z) - mean;
        cov += q * q.transpose();
      }
  cov /= static_cast<double>(count);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov, Eigen::EigenvaluesOnly);
  // Ascending from Eigen; clamp round-off negatives.
  const double l3 = std::max(eig.eigenvalues()[0], 0.0);
  const double l2 = std::max(eig.eigenvalues()[1], 0.0);
  const double l1 = std::max(eig.eigenvalues()[2], 0.0);

  const double v = voxel_volume;
  FeatureVector f;
  f.add("voxel_volume", v);
  f.add("mesh_volume", mesh.volume);
  f.add("surface_area", area);
  f.add("surface_volume_ratio", area / v);
  f.add("sphericity", area > 0.0 ? std::cbrt(pi) * std::pow(6.0 * v, 2.0 / 3.0) / area : 0.0);
  f.add("compactness1", area > 0.0 ? v / (std::sqrt(pi) * std::pow(area, 1.5)) : 0.0);
  f.add("compactness2", area > 0.0 ? 36.0 * pi * v * v / (area * area * area) : 0.0);
  f.add("spherical_disproportion", area / std::cbrt(36.0 * pi * v * v));
  f.add("max_3d_diameter", std::sqrt(max_d2));
  f.add("major_axis_length", 4.0 * std::sqrt(l1));
  f.add("minor_axis_length", 4.0 * std::sqrt(l2));
  f.add("least_axis_length", 4.0 * std::sqrt(l3));
  f.add("elongation", l1 > 0.0 ? std::sqrt(l2 / l1) : 0.0);
  f.add("flatness", l1 > 0.0 ? std::sqrt(l3 / l1) : 0.0);
  return f;
}

}  // namespace radfuse
