// Core value types shared across the simulator: poses, wrenches, RNG,
// hashing and error types. All lengths are in millimeters, forces in
// newtons, torques in newton-millimeters and time in seconds unless a
// field says otherwise.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace tactsim {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

// Simulation clocks. The IMU/world substep clock and the observation and
// policy tick rates are fixed by the sensing hardware being modeled.
inline constexpr double kImuRateHz = 3500.0;
inline constexpr double kObsRateHz = 24.0;
inline constexpr double kPolicyRateHz = 12.0;
inline constexpr int kWindowRows = 146;
inline constexpr int kChunkSteps = 16;
inline constexpr int kActionDims = 6;

inline constexpr double kGravityMs2 = 9.80665;
inline constexpr double kAccFullScaleG = 16.0;     // +-16 g
inline constexpr double kGyroFullScaleDps = 4000.0;  // +-4000 dps
inline constexpr double kAccLsbG = 32.0 / 65536.0;
inline constexpr double kGyroLsbDps = 8000.0 / 65536.0;

struct InvalidGeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SimulationBlowupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StreamOrderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BufferUnderflowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PolicyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 6-DoF pose: position (mm) and orientation as a rotation vector (rad).
struct Pose6 {
  Vec3 position{Vec3::Zero()};
  Vec3 rotation{Vec3::Zero()};  // axis * angle, |rotation| < pi

  Mat3 rotationMatrix() const {
    const double angle = rotation.norm();
    if (angle < 1e-12) return Mat3::Identity();
    return Eigen::AngleAxisd(angle, rotation / angle).toRotationMatrix();
  }

  Vec6 asVector() const {
    Vec6 v;
    v << position, rotation;
    return v;
  }
  static Pose6 fromVector(const Vec6& v) {
    Pose6 p;
    p.position = v.head<3>();
    p.rotation = v.tail<3>();
    return p;
  }
};

enum class WrenchFrame { kGrasp, kWorld };

// Force (N) + torque (N*mm) with an explicit expressed-in frame tag.
struct Wrench6 {
  Vec3 force{Vec3::Zero()};
  Vec3 torque{Vec3::Zero()};
  WrenchFrame frame{WrenchFrame::kWorld};

  Wrench6() = default;
  Wrench6(const Vec3& f, const Vec3& tq, WrenchFrame fr) : force(f), torque(tq), frame(fr) {}

  bool isZero(double tol = 0.0) const {
    return force.lpNorm<Eigen::Infinity>() <= tol && torque.lpNorm<Eigen::Infinity>() <= tol;
  }
  Wrench6& operator+=(const Wrench6& o) {
    force += o.force;
    torque += o.torque;
    return *this;
  }
};

// Deterministic RNG. Gaussian draws use Box-Muller so the byte stream is
// fully pinned by the seed (std::normal_distribution is not portable).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t nextU64() { return engine_(); }

  double uniform01() {
    // 53-bit mantissa in [0, 1)
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  int uniformInt(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(static_cast<double>(hi - lo + 1) * uniform01());
  }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a, used for config hashes and for deriving per-cell seeds.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

// Seed derivation for independent sub-streams (episodes, noise lanes, ...).
inline std::uint64_t deriveSeed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const std::uint64_t vals[4] = {root, a, b, c};
  h = fnv1a(vals, sizeof(vals), h);
  return h;
}

inline bool allFinite(const Vec3& v) { return v.allFinite(); }

}  // namespace tactsim
