// Wrist-camera stand-in: a deterministic orthographic 64x64 raster of
// the slot opening and the peg silhouette, centered on the gripper.
// With occlusion enabled the gripper body and the grasped peg are drawn
// over the opening, which reproduces the vision failure mode where the
// inserted object blocks the view of the hole; with occlusion disabled
// the opening is drawn on top so it stays visible for diagnostics.
#pragma once

#include <cstdint>

#include "tactsim/contact.hpp"

namespace tactsim {

inline constexpr int kRasterSide = 64;

using RasterF = Eigen::Matrix<double, kRasterSide, kRasterSide>;
using RasterU8 = Eigen::Matrix<std::uint8_t, kRasterSide, kRasterSide>;

// Fixed render intensities, chosen to be distinct under 8-bit rounding.
inline constexpr double kShadePlate = 0.2;
inline constexpr double kShadeOpening = 0.8;
inline constexpr double kShadePeg = 0.5;
inline constexpr double kShadeOccluder = 0.35;

struct CameraConfig {
  double mm_per_px{0.5};
  bool occlusion{true};
  double occluder_halfwidth_mm{16.0};

  static CameraConfig fromConfig(const Config& cfg) {
    CameraConfig c;
    c.mm_per_px = cfg.get<double>("camera.mm_per_px");
    c.occlusion = cfg.get<bool>("camera.occlusion");
    c.occluder_halfwidth_mm = cfg.get<double>("camera.occluder_halfwidth_mm");
    return c;
  }
};

namespace detail {

inline bool insideConvexXy(const std::vector<Vec2>& poly, const Vec2& p) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = poly[i];
    const Vec2 b = poly[(i + 1) % n];
    if ((b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x()) < 0.0) return false;
  }
  return true;
}

}  // namespace detail

// Renders the scene around the gripper position. Pixel (row, col) maps
// to world (x, y) = gripper + mm_per_px * (col - 31.5, row - 31.5).
inline RasterF renderVision(const WorldState& state, const PegGeometry& peg,
                            const SlotGeometry& slot, const CameraConfig& cam) {
  RasterF img = RasterF::Constant(kShadePlate);
  const Vec2 center(state.ee_pose.position.x(), state.ee_pose.position.y());

  // Peg bottom-face outline in world xy.
  std::vector<Vec2> peg_xy;
  if (state.peg_in_gripper) {
    const Mat3 r = state.ee_pose.rotationMatrix();
    peg_xy.reserve(peg.cross_section.size());
    for (const auto& v : peg.cross_section) {
      const Vec3 w = state.ee_pose.position + r * Vec3(v.x(), v.y(), -peg.grasp_height_mm);
      peg_xy.emplace_back(w.x(), w.y());
    }
  }

  const double cy = std::cos(slot.yaw_rad), sy = std::sin(slot.yaw_rad);
  const double hw = 0.5 * slot.width_mm, hd = 0.5 * slot.depth_mm;

  for (int row = 0; row < kRasterSide; ++row) {
    for (int col = 0; col < kRasterSide; ++col) {
      const Vec2 p = center + cam.mm_per_px * Vec2(col - 31.5, row - 31.5);

      const Vec2 d = p - slot.center_mm;
      const double sx = cy * d.x() + sy * d.y();
      const double sxy = -sy * d.x() + cy * d.y();
      const bool in_opening = std::abs(sx) <= hw && std::abs(sxy) <= hd;
      const bool in_peg = !peg_xy.empty() && detail::insideConvexXy(peg_xy, p);
      const bool in_occluder = std::abs(p.x() - center.x()) <= cam.occluder_halfwidth_mm &&
                               std::abs(p.y() - center.y()) <= cam.occluder_halfwidth_mm;

      double shade = kShadePlate;
      if (cam.occlusion) {
        if (in_opening) shade = kShadeOpening;
        if (in_occluder) shade = kShadeOccluder;
        if (in_peg) shade = kShadePeg;
      } else {
        if (in_peg) shade = kShadePeg;
        if (in_opening) shade = kShadeOpening;
      }
      img(row, col) = shade;
    }
  }
  return img;
}

inline RasterU8 quantizeRaster(const RasterF& img) {
  RasterU8 q;
  for (int r = 0; r < kRasterSide; ++r)
    for (int c = 0; c < kRasterSide; ++c) {
      const double v = std::clamp(img(r, c), 0.0, 1.0);
      q(r, c) = static_cast<std::uint8_t>(std::nearbyint(v * 255.0));
    }
  return q;
}

inline RasterF dequantizeRaster(const RasterU8& q) {
  RasterF img;
  for (int r = 0; r < kRasterSide; ++r)
    for (int c = 0; c < kRasterSide; ++c) img(r, c) = q(r, c) / 255.0;
  return img;
}

}  // namespace tactsim
