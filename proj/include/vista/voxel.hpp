#pragma once

#include "vista/ops.hpp"
#include "vista/tensor.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <vector>

namespace vista {

/// Voxelization ranges (meters) and per-axis resolution. Grid extents are
/// derived, never stored, so full-scale configs can be reasoned about without
/// allocating anything.
struct VoxelConfig {
  double x_min = -8.0, x_max = 8.0;
  double y_min = -8.0, y_max = 8.0;
  double z_min = -1.0, z_max = 3.0;
  double res_x = 0.25, res_y = 0.25, res_z = 0.25;

  Index nx() const { return extent(x_min, x_max, res_x); }
  Index ny() const { return extent(y_min, y_max, res_y); }
  Index nz() const { return extent(z_min, z_max, res_z); }

  double center_x(Index i) const { return x_min + (static_cast<double>(i) + 0.5) * res_x; }
  double center_y(Index i) const { return y_min + (static_cast<double>(i) + 0.5) * res_y; }
  double center_z(Index i) const { return z_min + (static_cast<double>(i) + 0.5) * res_z; }

  void validate() const {
    if (!(x_max > x_min && y_max > y_min && z_max > z_min)) {
      throw std::invalid_argument("voxel config: max must exceed min on every axis");
    }
    if (!(res_x > 0 && res_y > 0 && res_z > 0)) {
      throw std::invalid_argument("voxel config: resolution must be positive");
    }
    if (nx() < 1 || ny() < 1 || nz() < 1) {
      throw std::invalid_argument("voxel config: grid collapses to zero extent");
    }
  }

 private:
  static Index extent(double lo, double hi, double res) {
    return static_cast<Index>(std::llround((hi - lo) / res));
  }
};

struct Point {
  double x = 0, y = 0, z = 0;
  double intensity = 0;
};

struct PointCloud {
  std::vector<Point> points;
};

/// Per-voxel aggregate: mean offsets from the voxel center plus mean
/// intensity, and occupancy counts. Empty voxels keep zero features.
struct VoxelGrid {
  VoxelConfig config;
  Tensor mean_feature;  // [4 x nx x ny x nz]
  Tensor count;         // [1 x nx x ny x nz]
};

/// Ground-plane pillar centers in row-major pillar order: j = ix*ny + iy.
struct PillarCenters {
  std::vector<std::array<double, 2>> centers;
  Index nx = 0, ny = 0;
};

/// Half-open binning [min, max) per axis; returns nothing for out-of-range
/// points. Index arithmetic clamps against the upper edge so coordinates just
/// below max cannot escape the grid through rounding.
inline std::optional<std::array<Index, 3>> voxel_index(const VoxelConfig& cfg, double x, double y,
                                                       double z) {
  if (!(x >= cfg.x_min && x < cfg.x_max)) return std::nullopt;
  if (!(y >= cfg.y_min && y < cfg.y_max)) return std::nullopt;
  if (!(z >= cfg.z_min && z < cfg.z_max)) return std::nullopt;
  const Index ix = std::min(static_cast<Index>((x - cfg.x_min) / cfg.res_x), cfg.nx() - 1);
  const Index iy = std::min(static_cast<Index>((y - cfg.y_min) / cfg.res_y), cfg.ny() - 1);
  const Index iz = std::min(static_cast<Index>((z - cfg.z_min) / cfg.res_z), cfg.nz() - 1);
  return std::array<Index, 3>{ix, iy, iz};
}

inline Index count_in_range(const PointCloud& cloud, const VoxelConfig& cfg) {
  Index n = 0;
  for (const Point& p : cloud.points) {
    if (voxel_index(cfg, p.x, p.y, p.z)) ++n;
  }
  return n;
}

inline VoxelGrid voxelize(const PointCloud& cloud, const VoxelConfig& cfg) {
  cfg.validate();
  const Index nx = cfg.nx(), ny = cfg.ny(), nz = cfg.nz();
  const Index n = nx * ny * nz;
  VoxelGrid grid;
  grid.config = cfg;
  grid.mean_feature = Tensor::zeros({4, nx, ny, nz});
  grid.count = Tensor::zeros({1, nx, ny, nz});
  auto& feat = grid.mean_feature.data();
  auto& cnt = grid.count.data();
  for (const Point& p : cloud.points) {
    const auto idx = voxel_index(cfg, p.x, p.y, p.z);
    if (!idx) continue;
    const auto [ix, iy, iz] = *idx;
    const Index v = (ix * ny + iy) * nz + iz;
    feat[0 * n + v] += p.x - cfg.center_x(ix);
    feat[1 * n + v] += p.y - cfg.center_y(iy);
    feat[2 * n + v] += p.z - cfg.center_z(iz);
    feat[3 * n + v] += p.intensity;
    cnt[v] += 1.0;
  }
  for (Index v = 0; v < n; ++v) {
    if (cnt[v] > 0) {
      for (int c = 0; c < 4; ++c) feat[c * n + v] /= cnt[v];
    }
  }
  return grid;
}

inline PillarCenters pillar_centers(const VoxelConfig& cfg) {
  cfg.validate();
  PillarCenters out;
  out.nx = cfg.nx();
  out.ny = cfg.ny();
  out.centers.reserve(static_cast<std::size_t>(out.nx * out.ny));
  for (Index ix = 0; ix < out.nx; ++ix) {
    for (Index iy = 0; iy < out.ny; ++iy) {
      out.centers.push_back({cfg.center_x(ix), cfg.center_y(iy)});
    }
  }
  return out;
}

/// Centers of pooled super-pillars: the mean of the covered fine-pillar
/// centers, row-major over pooled cells. Used when the attention constraint
/// is evaluated at pooled resolution.
inline PillarCenters pillar_centers_pooled(const VoxelConfig& cfg, Index kh, Index kw) {
  cfg.validate();
  if (kh < 1 || kw < 1) throw std::invalid_argument("pillar_centers_pooled: kernel extents must be >= 1");
  PillarCenters out;
  const Index nx = cfg.nx(), ny = cfg.ny();
  out.nx = pooled_extent(nx, kh);
  out.ny = pooled_extent(ny, kw);
  out.centers.reserve(static_cast<std::size_t>(out.nx * out.ny));
  for (Index pi = 0; pi < out.nx; ++pi) {
    const Index a = pi * kh, b = std::min(a + kh, nx);
    const double cx = cfg.x_min + 0.5 * static_cast<double>(a + b) * cfg.res_x;
    for (Index pj = 0; pj < out.ny; ++pj) {
      const Index c = pj * kw, d = std::min(c + kw, ny);
      const double cy = cfg.y_min + 0.5 * static_cast<double>(c + d) * cfg.res_y;
      out.centers.push_back({cx, cy});
    }
  }
  return out;
}

/// Two pointwise linear layers with a relu between them; stands in for a full
/// 3D backbone. Empty voxels respond with the bias path only.
struct VoxelEncoderWeights {
  Tensor w1;  // [C x 4]
  Tensor b1;  // [C]
  Tensor w2;  // [C x C]
  Tensor b2;  // [C]

  Index channels() const { return w1.dim(0); }

  void validate() const {
    if (w1.rank() != 2 || w1.dim(1) != 4) throw std::invalid_argument("encoder: w1 must be [C x 4]");
    const Index c = w1.dim(0);
    if (b1.rank() != 1 || b1.dim(0) != c) throw std::invalid_argument("encoder: b1 must be [C]");
    if (w2.rank() != 2 || w2.dim(0) != c || w2.dim(1) != c) {
      throw std::invalid_argument("encoder: w2 must be [C x C]");
    }
    if (b2.rank() != 1 || b2.dim(0) != c) throw std::invalid_argument("encoder: b2 must be [C]");
  }
};

inline Tensor encode_features(const VoxelGrid& grid, const VoxelEncoderWeights& w) {
  w.validate();
  const Index nx = grid.config.nx(), ny = grid.config.ny(), nz = grid.config.nz();
  const Index n = nx * ny * nz;
  Tensor flat = reshape(grid.mean_feature, {4, n});
  Tensor h = relu(conv1d_pointwise(flat, w.w1, w.b1));
  Tensor f = conv1d_pointwise(h, w.w2, w.b2);
  return reshape(f, {w.channels(), nx, ny, nz});
}

}  // namespace vista
