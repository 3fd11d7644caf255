// Peg and slot geometry. Pegs are extruded convex 2D cross-sections;
// curved outlines are polygonized at 32 vertices which keeps the radial
// clearance error well below the smallest slot clearance in the catalog.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tactsim/common.hpp"
#include "tactsim/config.hpp"

namespace tactsim {

inline constexpr int kCurveVertices = 32;

enum class PegShape { kRectangularPrism, kCylinder, kEllipticalCylinder, kUsbPlug, kKey };

inline std::string toString(PegShape s) {
  switch (s) {
    case PegShape::kRectangularPrism: return "rectangular-prism";
    case PegShape::kCylinder: return "cylinder";
    case PegShape::kEllipticalCylinder: return "elliptical-cylinder";
    case PegShape::kUsbPlug: return "usb-plug";
    case PegShape::kKey: return "key";
  }
  return "?";
}

inline PegShape pegShapeFromString(const std::string& s) {
  if (s == "rectangular-prism") return PegShape::kRectangularPrism;
  if (s == "cylinder") return PegShape::kCylinder;
  if (s == "elliptical-cylinder") return PegShape::kEllipticalCylinder;
  if (s == "usb-plug") return PegShape::kUsbPlug;
  if (s == "key") return PegShape::kKey;
  throw InvalidGeometryError("unknown peg shape: " + s);
}

// Counter-clockwise convex polygon, peg cross-section in the peg frame (mm).
using Polygon = std::vector<Vec2>;

inline double polygonArea(const Polygon& poly) {
  double a = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

inline bool isConvexCcw(const Polygon& poly, double tol = 1e-9) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = poly[(i + 1) % n] - poly[i];
    const Vec2 b = poly[(i + 2) % n] - poly[(i + 1) % n];
    if (a.x() * b.y() - a.y() * b.x() < -tol) return false;
  }
  return true;
}

struct PegGeometry {
  PegShape shape{PegShape::kRectangularPrism};
  Polygon cross_section;   // convex CCW outline, centered on the peg axis
  double length_mm{0.0};
  double grasp_height_mm{0.0};  // above the peg bottom

  double extentX() const {
    double lo = 1e18, hi = -1e18;
    for (const auto& v : cross_section) {
      lo = std::min(lo, v.x());
      hi = std::max(hi, v.x());
    }
    return hi - lo;
  }
  double extentY() const {
    double lo = 1e18, hi = -1e18;
    for (const auto& v : cross_section) {
      lo = std::min(lo, v.y());
      hi = std::max(hi, v.y());
    }
    return hi - lo;
  }
};

struct SlotGeometry {
  double width_mm{0.0};        // opening extent along x
  double depth_mm{0.0};        // opening extent along y
  double wall_height_mm{0.0};  // opening bottom at z = -wall_height
  // Planar pose of the slot center in the world (top surface at z = 0).
  Vec2 center_mm{Vec2::Zero()};
  double yaw_rad{0.0};

  void validateAgainst(const PegGeometry& peg) const {
    if (wall_height_mm <= 0.0) throw InvalidGeometryError("slot wall height must be positive");
    if (width_mm <= peg.extentX() || depth_mm <= peg.extentY())
      throw InvalidGeometryError("slot opening must exceed peg cross-section (clearance > 0)");
  }
  double clearanceX(const PegGeometry& peg) const { return width_mm - peg.extentX(); }
  double clearanceY(const PegGeometry& peg) const { return depth_mm - peg.extentY(); }
};

namespace detail {

inline Polygon rectangleOutline(double w, double d) {
  const double hw = 0.5 * w, hd = 0.5 * d;
  return {{-hw, -hd}, {hw, -hd}, {hw, hd}, {-hw, hd}};
}

inline Polygon ellipseOutline(double a, double b, int n = kCurveVertices) {
  Polygon poly;
  poly.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * M_PI * static_cast<double>(i) / n;
    poly.emplace_back(a * std::cos(t), b * std::sin(t));
  }
  return poly;
}

inline Polygon convexHull(Polygon pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& p, const Vec2& q) {
    return p.x() < q.x() || (p.x() == q.x() && p.y() < q.y());
  });
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  Polygon hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = pts.size(); i-- > 1;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace detail

// Builds a peg. dims are shape specific (mm):
//   rectangular-prism: {width, depth, length}
//   cylinder:          {radius, length}
//   elliptical-cylinder: {semi_a, semi_b, length}
//   usb-plug / key:    {length} (catalog footprints)
// grasp_height defaults to 3/4 of the length when not given.
inline PegGeometry makePeg(PegShape shape, const std::vector<double>& dims, double grasp_height_mm = -1.0) {
  for (double d : dims)
    if (!(d > 0.0)) throw InvalidGeometryError("peg dimensions must be positive");

  PegGeometry peg;
  peg.shape = shape;
  auto need = [&](std::size_t n) {
    if (dims.size() != n)
      throw InvalidGeometryError("wrong dimension count for " + toString(shape) + ": expected " +
                                 std::to_string(n) + ", got " + std::to_string(dims.size()));
  };
  switch (shape) {
    case PegShape::kRectangularPrism:
      need(3);
      peg.cross_section = detail::rectangleOutline(dims[0], dims[1]);
      peg.length_mm = dims[2];
      break;
    case PegShape::kCylinder:
      need(2);
      peg.cross_section = detail::ellipseOutline(dims[0], dims[0]);
      peg.length_mm = dims[1];
      break;
    case PegShape::kEllipticalCylinder:
      need(3);
      peg.cross_section = detail::ellipseOutline(dims[0], dims[1]);
      peg.length_mm = dims[2];
      break;
    case PegShape::kUsbPlug: {
      // Type-A shell footprint: 12 mm wide, 4.5 mm narrow edge, chamfered.
      need(1);
      Polygon pts = {{-6.0, -2.25}, {6.0, -2.25}, {6.0, 2.25}, {-6.0, 2.25},
                     {-5.4, -2.25}, {5.4, 2.25}};
      peg.cross_section = detail::convexHull(pts);
      peg.length_mm = dims[0];
      break;
    }
    case PegShape::kKey: {
      // Flat key blade: 9 mm tall bow-to-tip profile, 2.4 mm thick.
      need(1);
      Polygon pts = {{-4.5, -1.2}, {4.5, -1.2}, {4.5, 1.2}, {-4.5, 1.2},
                     {0.0, -1.2},  {0.0, 1.2}};
      peg.cross_section = detail::convexHull(pts);
      peg.length_mm = dims[0];
      break;
    }
  }
  peg.grasp_height_mm = grasp_height_mm > 0.0 ? grasp_height_mm : 0.75 * peg.length_mm;
  if (peg.grasp_height_mm > peg.length_mm)
    throw InvalidGeometryError("grasp height exceeds peg length");
  if (polygonArea(peg.cross_section) <= 0.0 || !isConvexCcw(peg.cross_section))
    throw InvalidGeometryError("degenerate or non-convex cross-section");
  return peg;
}

// Named object catalog used by the CLI and the evaluation protocol.
// Slots are sized 3 mm wider than the object along both axes except for
// the USB and key pairs which use their real, tighter clearances.
struct CatalogEntry {
  PegGeometry peg;
  double slot_width_mm;
  double slot_depth_mm;
};

inline CatalogEntry catalogObject(const std::string& name) {
  auto prism = [](double l) { return makePeg(PegShape::kRectangularPrism, {20.0, 20.0, l}); };
  auto cyl = [](double l) { return makePeg(PegShape::kCylinder, {10.0, l}); };
  auto ell = [](double l) { return makePeg(PegShape::kEllipticalCylinder, {10.0, 5.0, l}); };
  if (name == "prism40") return {prism(40.0), 23.0, 23.0};
  if (name == "prism60") return {prism(60.0), 23.0, 23.0};
  if (name == "cylinder40") return {cyl(40.0), 23.0, 23.0};
  if (name == "cylinder60") return {cyl(60.0), 23.0, 23.0};
  if (name == "ellipse40") return {ell(40.0), 23.0, 13.0};
  if (name == "ellipse60") return {ell(60.0), 23.0, 13.0};
  if (name == "usb") return {makePeg(PegShape::kUsbPlug, {30.0}), 13.0, 5.5};
  if (name == "key") return {makePeg(PegShape::kKey, {35.0}), 10.0, 3.4};
  throw InvalidGeometryError("unknown catalog object: " + name);
}

inline std::vector<std::string> catalogNames() {
  return {"prism40", "prism60", "cylinder40", "cylinder60", "ellipse40", "ellipse60", "usb", "key"};
}

}  // namespace tactsim
