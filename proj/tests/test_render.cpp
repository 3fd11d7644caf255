#include <doctest.h>

#include <cstring>

#include "tactsim/render.hpp"

using namespace tactsim;

namespace {

CameraConfig defaultCam(bool occlusion) {
  CameraConfig c;
  c.mm_per_px = 0.5;
  c.occlusion = occlusion;
  c.occluder_halfwidth_mm = 16.0;
  return c;
}

SlotGeometry prismSlot(const Vec2& center = Vec2::Zero()) {
  SlotGeometry s;
  s.width_mm = 23.0;
  s.depth_mm = 23.0;
  s.wall_height_mm = 14.0;
  s.center_mm = center;
  return s;
}

int countShade(const RasterF& img, double shade) {
  int n = 0;
  for (int r = 0; r < kRasterSide; ++r)
    for (int c = 0; c < kRasterSide; ++c)
      if (img(r, c) == shade) ++n;
  return n;
}

Vec2 shadeCentroidPx(const RasterF& img, double shade) {
  double sr = 0.0, sc = 0.0;
  int n = 0;
  for (int r = 0; r < kRasterSide; ++r)
    for (int c = 0; c < kRasterSide; ++c)
      if (img(r, c) == shade) {
        sr += r;
        sc += c;
        ++n;
      }
  REQUIRE(n > 0);
  return {sc / n, sr / n};  // (col, row)
}

}  // namespace

TEST_CASE("empty scene renders all background") {
  const auto peg = catalogObject("prism40").peg;
  WorldState state;
  state.peg_in_gripper = false;
  const auto slot = prismSlot(Vec2(100.0, 100.0));  // outside the frame
  const RasterF img = renderVision(state, peg, slot, defaultCam(false));
  CHECK(countShade(img, kShadePlate) == kRasterSide * kRasterSide);
}

TEST_CASE("opening is visible without occlusion and sized to camera scale") {
  const auto peg = catalogObject("prism40").peg;
  WorldState state;
  state.peg_in_gripper = false;
  state.ee_pose.position = Vec3(0.0, 0.0, peg.grasp_height_mm + 5.0);
  const auto slot = prismSlot();
  const RasterF img = renderVision(state, peg, slot, defaultCam(false));
  // 23 mm opening at 0.5 mm/px covers about 46x46 pixels.
  const int n = countShade(img, kShadeOpening);
  CHECK(n > 44 * 44);
  CHECK(n < 48 * 48);
}

TEST_CASE("peg over the slot blocks the opening when occlusion is on") {
  const auto peg = catalogObject("prism40").peg;
  WorldState state;
  state.ee_pose.position = Vec3(0.0, 0.0, peg.grasp_height_mm + 2.0);
  const auto slot = prismSlot();
  const RasterF on = renderVision(state, peg, slot, defaultCam(true));
  CHECK(countShade(on, kShadeOpening) == 0);
  CHECK(countShade(on, kShadePeg) > 0);

  const RasterF off = renderVision(state, peg, slot, defaultCam(false));
  CHECK(countShade(off, kShadeOpening) > 0);
}

TEST_CASE("lateral camera move shifts the opening centroid by the pixel scale") {
  const auto peg = catalogObject("prism40").peg;
  const auto slot = prismSlot();
  const auto cam = defaultCam(false);

  WorldState a, b;
  a.peg_in_gripper = b.peg_in_gripper = false;
  a.ee_pose.position = Vec3(0.0, 0.0, 40.0);
  b.ee_pose.position = Vec3(1.0, 0.0, 40.0);  // 1 mm = 2 px at 0.5 mm/px

  const Vec2 ca = shadeCentroidPx(renderVision(a, peg, slot, cam), kShadeOpening);
  const Vec2 cb = shadeCentroidPx(renderVision(b, peg, slot, cam), kShadeOpening);
  // Wrist-centered camera: the scene appears to move opposite the gripper.
  CHECK(cb.x() - ca.x() == doctest::Approx(-2.0).epsilon(0.5));
  CHECK(std::abs(cb.y() - ca.y()) < 1.0);
}

TEST_CASE("rotated slot opening renders in the slot frame") {
  const auto peg = catalogObject("prism40").peg;
  WorldState state;
  state.peg_in_gripper = false;
  auto slot = prismSlot();
  slot.depth_mm = 10.0;
  const RasterF straight = renderVision(state, peg, slot, defaultCam(false));
  slot.yaw_rad = M_PI / 2.0;
  const RasterF turned = renderVision(state, peg, slot, defaultCam(false));
  // A quarter turn of a 23x10 opening swaps the image axes.
  CHECK(countShade(straight, kShadeOpening) == countShade(turned, kShadeOpening));
  CHECK(straight(32, 10) == kShadeOpening);   // wide along columns when straight
  CHECK(turned(32, 10) == kShadePlate);
  CHECK(turned(10, 32) == kShadeOpening);
}

TEST_CASE("raster quantization round-trips within half a code") {
  const auto peg = catalogObject("prism40").peg;
  WorldState state;
  state.ee_pose.position = Vec3(1.0, -2.0, peg.grasp_height_mm + 1.0);
  const RasterF img = renderVision(state, peg, prismSlot(), defaultCam(true));
  const RasterU8 q = quantizeRaster(img);
  const RasterF back = dequantizeRaster(q);
  CHECK((img - back).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);

  const RasterU8 q2 = quantizeRaster(img);
  CHECK(std::memcmp(q.data(), q2.data(), sizeof(RasterU8)) == 0);
}
