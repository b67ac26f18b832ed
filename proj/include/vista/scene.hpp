#pragma once

#include "vista/losses.hpp"
#include "vista/voxel.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace vista {

/// One synthetic training scene: a ground-dominated point cloud plus the
/// axis-aligned boxes of the planted objects. Background points stay at or
/// above 90% so the loss landscape mirrors outdoor scans.
struct SceneSample {
  PointCloud cloud;
  std::vector<BoxFootprint> boxes;
  std::uint64_t seed = 0;
};

namespace detail {

/// Two vehicle-like classes with overlapping footprint distributions; the
/// overlap is what makes the classification branch work for its supper.
struct ObjectClassSpec {
  double w_lo, w_hi;
  double h_lo, h_hi;
  double z_lo, z_hi;          // object height above ground
  double intensity_lo, intensity_hi;
};

inline const ObjectClassSpec kClasses[2] = {
    {1.6, 2.4, 1.2, 1.8, 1.2, 1.6, 0.40, 0.70},
    {2.0, 3.2, 1.5, 2.4, 1.6, 2.2, 0.55, 0.90},
};

}  // namespace detail

/// Deterministic per seed. Objects are boxes sampled from two size-overlapping
/// classes, rendered as jittered surface points (top plus four sides); the
/// ground plane supplies ~15x as many background points as all objects
/// together, plus a flat floor of 2000.
inline SceneSample generate_scene(std::uint64_t seed, int n_objects, const VoxelConfig& cfg) {
  cfg.validate();
  if (n_objects < 0) throw std::invalid_argument("generate_scene: n_objects must be >= 0");
  std::mt19937_64 rng(seed ^ 0x5ce7e5u);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> ground_noise(0.0, 0.05);

  SceneSample s;
  s.seed = seed;

  const double margin = 0.5;
  for (int k = 0; k < n_objects; ++k) {
    const int cls = static_cast<int>(u01(rng) * 2.0) % 2;
    const auto& spec = detail::kClasses[cls];
    BoxFootprint box;
    box.class_id = cls;
    box.w = spec.w_lo + u01(rng) * (spec.w_hi - spec.w_lo);
    box.h = spec.h_lo + u01(rng) * (spec.h_hi - spec.h_lo);
    const double x_lo = cfg.x_min + box.w / 2 + margin, x_hi = cfg.x_max - box.w / 2 - margin;
    const double y_lo = cfg.y_min + box.h / 2 + margin, y_hi = cfg.y_max - box.h / 2 - margin;
    if (x_hi <= x_lo || y_hi <= y_lo) {
      throw std::invalid_argument("generate_scene: voxel range too small for object footprints");
    }
    box.x = x_lo + u01(rng) * (x_hi - x_lo);
    box.y = y_lo + u01(rng) * (y_hi - y_lo);
    const double height = spec.z_lo + u01(rng) * (spec.z_hi - spec.z_lo);
    const double intensity = spec.intensity_lo + u01(rng) * (spec.intensity_hi - spec.intensity_lo);

    std::uniform_int_distribution<int> count_dist(80, 150);
    const int n_points = count_dist(rng);
    std::uniform_real_distribution<double> face(0.0, 1.0);
    for (int p = 0; p < n_points; ++p) {
      // faces weighted: 0 top, 1..4 sides
      const int f = static_cast<int>(face(rng) * 5.0) % 5;
      Point pt;
      pt.intensity = std::min(1.0, std::max(0.0, intensity + 0.05 * (face(rng) - 0.5)));
      const double a = face(rng), b = face(rng);
      switch (f) {
        case 0:
          pt.x = box.x + (a - 0.5) * box.w;
          pt.y = box.y + (b - 0.5) * box.h;
          pt.z = height;
          break;
        case 1:
          pt.x = box.x - box.w / 2;
          pt.y = box.y + (a - 0.5) * box.h;
          pt.z = b * height;
          break;
        case 2:
          pt.x = box.x + box.w / 2;
          pt.y = box.y + (a - 0.5) * box.h;
          pt.z = b * height;
          break;
        case 3:
          pt.x = box.x + (a - 0.5) * box.w;
          pt.y = box.y - box.h / 2;
          pt.z = b * height;
          break;
        default:
          pt.x = box.x + (a - 0.5) * box.w;
          pt.y = box.y + box.h / 2;
          pt.z = b * height;
          break;
      }
      s.cloud.points.push_back(pt);
    }
    s.boxes.push_back(box);
  }

  const std::size_t object_points = s.cloud.points.size();
  const std::size_t n_ground = 2000 + 15 * object_points;
  std::uniform_real_distribution<double> ux(cfg.x_min, cfg.x_max);
  std::uniform_real_distribution<double> uy(cfg.y_min, cfg.y_max);
  std::uniform_real_distribution<double> ui(0.05, 0.25);
  for (std::size_t p = 0; p < n_ground; ++p) {
    Point pt;
    pt.x = ux(rng);
    pt.y = uy(rng);
    pt.z = ground_noise(rng);
    pt.intensity = ui(rng);
    s.cloud.points.push_back(pt);
  }
  return s;
}

/// One draw of the augmentation parameters: axis flips, z rotation within
/// [-0.3925, 0.3925] rad, scale in [0.95, 1.05], translation within +-0.2 m
/// per axis.
struct AugmentDraw {
  bool flip_x = false;
  bool flip_y = false;
  double rotation = 0.0;
  double scale = 1.0;
  double tx = 0.0, ty = 0.0, tz = 0.0;
};

inline AugmentDraw draw_augment(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xa06e3du);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  AugmentDraw d;
  d.flip_x = u01(rng) < 0.5;
  d.flip_y = u01(rng) < 0.5;
  d.rotation = (u01(rng) * 2.0 - 1.0) * 0.3925;
  d.scale = 0.95 + u01(rng) * 0.10;
  d.tx = (u01(rng) * 2.0 - 1.0) * 0.2;
  d.ty = (u01(rng) * 2.0 - 1.0) * 0.2;
  d.tz = (u01(rng) * 2.0 - 1.0) * 0.2;
  return d;
}

/// Apply one rigid/scale transform to points and boxes alike: flip, rotate
/// around z, scale, translate, in that order. Axis-aligned footprints are
/// re-fit to the rotated rectangle's bounding box.
inline SceneSample augment(const SceneSample& s, const AugmentDraw& d) {
  SceneSample out;
  out.seed = s.seed;
  out.cloud.points.reserve(s.cloud.points.size());
  const double c = std::cos(d.rotation), sn = std::sin(d.rotation);
  for (Point p : s.cloud.points) {
    if (d.flip_x) p.x = -p.x;
    if (d.flip_y) p.y = -p.y;
    const double rx = p.x * c - p.y * sn;
    const double ry = p.x * sn + p.y * c;
    p.x = rx * d.scale + d.tx;
    p.y = ry * d.scale + d.ty;
    p.z = p.z * d.scale + d.tz;
    out.cloud.points.push_back(p);
  }
  out.boxes.reserve(s.boxes.size());
  for (BoxFootprint b : s.boxes) {
    if (d.flip_x) b.x = -b.x;
    if (d.flip_y) b.y = -b.y;
    const double rx = b.x * c - b.y * sn;
    const double ry = b.x * sn + b.y * c;
    b.x = rx * d.scale + d.tx;
    b.y = ry * d.scale + d.ty;
    const double w_fit = b.w * std::abs(c) + b.h * std::abs(sn);
    const double h_fit = b.w * std::abs(sn) + b.h * std::abs(c);
    b.w = w_fit * d.scale;
    b.h = h_fit * d.scale;
    out.boxes.push_back(b);
  }
  return out;
}

inline SceneSample augment(const SceneSample& s, std::uint64_t seed) {
  return augment(s, draw_augment(seed));
}

}  // namespace vista
