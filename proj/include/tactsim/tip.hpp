// Elastomeric fingertip model: distribution of the grasp wrench onto the
// two tips, decoupled spring-mass-damper dynamics per axis, and 6-axis
// IMU synthesis (16-bit quantized, +-16 g / +-4000 dps).
//
// Frames: the gripper frame is the world frame yawed by +90 degrees, so
// the jaw axis (tip separation) lies along world x. Each tip carries its
// own sensor mounting rotation; the two mountings are mirrored, which is
// what produces the opposite-phase gyro reading for a rotation the two
// tips share.
#pragma once

#include <cstdint>
#include <utility>

#include "tactsim/common.hpp"
#include "tactsim/config.hpp"

namespace tactsim {

enum class TipSide { kLeft, kRight };

// Gripper-from-world rotation (yaw +90 deg): gripper x = world y,
// gripper y = -world x, gripper z = world z.
inline Mat3 gripperFromWorld() {
  Mat3 r;
  r << 0.0, 1.0, 0.0,
      -1.0, 0.0, 0.0,
       0.0, 0.0, 1.0;
  return r;
}

// Sensor-from-gripper mounting rotations. The right mounting is a +90
// degree roll (sensor y reads vertical); the left adds a 180 degree yaw
// so the boards face each other.
inline Mat3 sensorFromGripper(TipSide side) {
  Mat3 gripper_from_sensor;
  if (side == TipSide::kRight) {
    // sensor axes in gripper coords: x=gx, y=gz, z=-gy
    gripper_from_sensor << 1.0, 0.0, 0.0,
                           0.0, 0.0, -1.0,
                           0.0, 1.0, 0.0;
  } else {
    // x=-gx, y=gz, z=+gy
    gripper_from_sensor << -1.0, 0.0, 0.0,
                            0.0, 0.0, 1.0,
                            0.0, 1.0, 0.0;
  }
  return gripper_from_sensor.transpose();
}

struct TipParams {
  double mass_g{14.0};
  double inertia_g_mm2{316.0};
  Vec3 stiffness_n_per_mm{Vec3::Constant(50.0)};
  Vec3 stiffness_nmm_per_mrad{Vec3::Constant(0.5)};
  Vec3 damping_n_s_per_mm{Vec3::Zero()};
  Vec3 damping_nmm_s_per_mrad{Vec3::Zero()};
  Vec3 lever_arm_mm{Vec3::Zero()};  // grasp center to this tip, gripper frame
  double max_translation_um{2000.0};

  // Builds a tip from natural frequencies and damping ratios.
  static TipParams fromConfig(const Config& cfg, TipSide side) {
    TipParams p;
    p.mass_g = cfg.get<double>("tip.mass_g");
    p.inertia_g_mm2 = cfg.get<double>("tip.inertia_g_mm2");
    p.max_translation_um = cfg.get<double>("tip.max_translation_um");

    const double m_kg = p.mass_g * 1e-3;
    const double j_kgm2 = p.inertia_g_mm2 * 1e-9;
    const double wt = 2.0 * M_PI * cfg.get<double>("tip.trans_natural_hz");
    const double wr = 2.0 * M_PI * cfg.get<double>("tip.tors_natural_hz");
    const double zt = cfg.get<double>("tip.trans_damping_ratio");
    const double zr = cfg.get<double>("tip.tors_damping_ratio");

    const double k_n_per_m = m_kg * wt * wt;
    p.stiffness_n_per_mm = Vec3::Constant(k_n_per_m * 1e-3);
    p.damping_n_s_per_mm = Vec3::Constant(2.0 * zt * std::sqrt(k_n_per_m * m_kg) * 1e-3);

    const double kr_nm_per_rad = j_kgm2 * wr * wr;
    // N*m/rad == N*mm/mrad
    p.stiffness_nmm_per_mrad = Vec3::Constant(kr_nm_per_rad);
    p.damping_nmm_s_per_mrad = Vec3::Constant(2.0 * zr * std::sqrt(kr_nm_per_rad * j_kgm2));

    const double a = cfg.get<double>("tip.lever_separation_mm");
    const double h = cfg.get<double>("tip.lever_drop_mm");
    p.lever_arm_mm = Vec3(0.0, side == TipSide::kLeft ? a : -a, -h);
    return p;
  }

  void validate() const {
    auto positive = [](const Vec3& v) { return (v.array() > 0.0).all(); };
    if (mass_g <= 0.0 || inertia_g_mm2 <= 0.0 || !positive(stiffness_n_per_mm) ||
        !positive(stiffness_nmm_per_mrad) || !positive(damping_n_s_per_mm) ||
        !positive(damping_nmm_s_per_mrad))
      throw ConfigError("tip parameters must be positive");
    const double m_kg = mass_g * 1e-3;
    const double j = inertia_g_mm2 * 1e-9;
    for (int i = 0; i < 3; ++i) {
      const double zt =
          damping_n_s_per_mm[i] * 1e3 / (2.0 * std::sqrt(stiffness_n_per_mm[i] * 1e3 * m_kg));
      const double zr =
          damping_nmm_s_per_mrad[i] / (2.0 * std::sqrt(stiffness_nmm_per_mrad[i] * j));
      if (zt <= 0.0 || zt > 2.0 || zr <= 0.0 || zr > 2.0)
        throw ConfigError("tip damping ratio must lie in (0, 2]");
    }
  }
};

struct TipDeformationState {
  Vec3 translation_um{Vec3::Zero()};
  Vec3 torsion_mrad{Vec3::Zero()};
  Vec3 lin_rate_um_s{Vec3::Zero()};
  Vec3 ang_rate_mrad_s{Vec3::Zero()};
  double time_s{0.0};
  bool saturated{false};
};

// Semi-implicit Euler update of the decoupled per-axis oscillators.
// The wrench is expressed in this tip's sensor frame.
inline TipDeformationState stepTip(const TipDeformationState& state, const Wrench6& tip_wrench,
                                   const TipParams& params, double dt) {
  TipDeformationState next = state;
  const double m_kg = params.mass_g * 1e-3;
  const double j_kgm2 = params.inertia_g_mm2 * 1e-9;

  for (int i = 0; i < 3; ++i) {
    // Translation: N, N/m, N*s/m on meters; state kept in um.
    const double k = params.stiffness_n_per_mm[i] * 1e3;
    const double c = params.damping_n_s_per_mm[i] * 1e3;
    const double x_m = state.translation_um[i] * 1e-6;
    const double v_m = state.lin_rate_um_s[i] * 1e-6;
    const double a_m = (tip_wrench.force[i] - k * x_m - c * v_m) / m_kg;
    const double v_next = v_m + dt * a_m;
    next.lin_rate_um_s[i] = v_next * 1e6;
    next.translation_um[i] = state.translation_um[i] + dt * next.lin_rate_um_s[i];

    // Torsion: N*mm -> N*m, stiffness N*mm/mrad == N*m/rad.
    const double kr = params.stiffness_nmm_per_mrad[i];
    const double cr = params.damping_nmm_s_per_mrad[i];
    const double th_rad = state.torsion_mrad[i] * 1e-3;
    const double w_rad = state.ang_rate_mrad_s[i] * 1e-3;
    const double alpha = (tip_wrench.torque[i] * 1e-3 - kr * th_rad - cr * w_rad) / j_kgm2;
    const double w_next = w_rad + dt * alpha;
    next.ang_rate_mrad_s[i] = w_next * 1e3;
    next.torsion_mrad[i] = state.torsion_mrad[i] + dt * next.ang_rate_mrad_s[i];
  }
  next.time_s = state.time_s + dt;

  const double norm = next.translation_um.norm();
  if (norm >= params.max_translation_um) {
    next.translation_um *= params.max_translation_um / norm;
    next.saturated = true;
  } else {
    next.saturated = false;
  }
  return next;
}

struct SplitGains {
  double torsion_share{0.5};      // fraction of the jaw-axis torque routed to tip torsion
  double force_couple_gain{1.0};  // torque-free differential force pathway
};

// Distributes a grasp wrench (gripper frame) onto the two tips.
// Left output first. The transported sum of the two tip wrenches equals
// the input exactly: the differential along the separation axis and the
// anti-phase torsion pair are both torque-free, every other component is
// accounted once.
inline std::pair<Wrench6, Wrench6> splitWrench(const Wrench6& grasp_wrench,
                                               const TipParams& left, const TipParams& right,
                                               const SplitGains& gains = {}) {
  const Vec3 f = grasp_wrench.force;
  const Vec3 tau = grasp_wrench.torque;
  const Vec3 r_l = left.lever_arm_mm;
  const Vec3 r_r = right.lever_arm_mm;
  const Vec3 r_c = 0.5 * (r_l + r_r);
  const Vec3 sep = r_l - r_r;  // (0, 2a, 0)
  const double two_a = sep.y();

  const Vec3 tau_res = tau - r_c.cross(f);

  // Differential force d: +d on the left tip, -d on the right tip.
  // (0,2a,0) x d = (2a dz, 0, -2a dx) carries tau_res x and z; dy is
  // torque-free and carries the x-torque as the unequal tangential load
  // the two pads see when the object pivots about the jaw line.
  Vec3 d = Vec3::Zero();
  const double share = gains.torsion_share;
  if (std::abs(two_a) > 1e-12) {
    d.z() = share * tau_res.x() / two_a;
    d.x() = -tau_res.z() / two_a;
    d.y() = gains.force_couple_gain * tau_res.x() / two_a;
  }

  // Common tip moments carry the rest; the z pair is anti-phase (zero
  // sum) and exists purely as the torsion sensing pathway.
  Vec3 m_common(0.5 * (1.0 - share) * tau_res.x(), 0.5 * tau_res.y(), 0.0);
  const double m_z_pair = 0.5 * gains.force_couple_gain * tau_res.z();

  Wrench6 wl, wr;
  wl.frame = wr.frame = WrenchFrame::kGrasp;
  wl.force = 0.5 * f + d;
  wr.force = 0.5 * f - d;
  wl.torque = m_common + Vec3(0.0, 0.0, m_z_pair);
  wr.torque = m_common - Vec3(0.0, 0.0, m_z_pair);
  return {wl, wr};
}

// One 6-axis sample. Codes are the 16-bit register values; physical
// units come from the fixed full-scale ranges.
struct ImuSample {
  double t_s{0.0};
  std::int16_t acc_q[3]{0, 0, 0};
  std::int16_t gyro_q[3]{0, 0, 0};
  TipSide tip{TipSide::kLeft};

  Vec3 accG() const { return Vec3(acc_q[0], acc_q[1], acc_q[2]) * kAccLsbG; }
  Vec3 gyroDps() const { return Vec3(gyro_q[0], gyro_q[1], gyro_q[2]) * kGyroLsbDps; }
};

inline std::int16_t quantize(double value, double lsb) {
  const double q = std::nearbyint(value / lsb);
  if (q > 32767.0) return 32767;
  if (q < -32767.0) return -32767;
  return static_cast<std::int16_t>(q);
}

struct ImuNoise {
  double sigma_acc_g{0.01};
  double sigma_gyro_dps{1.0};
};

// Synthesizes one IMU sample from two consecutive tip states one
// substep apart. The accelerometer reads the deformation acceleration
// plus gravity projected through the torsion-tilted sensor frame; the
// gyro reads the torsion rate. Values are clipped to full scale and
// quantized; `saturations` counts clipped channels when provided.
inline ImuSample synthesizeImu(const TipDeformationState& prev, const TipDeformationState& curr,
                               const Vec3& gravity_dir, const ImuNoise& noise, Rng& rng,
                               TipSide tip, std::uint64_t* saturations = nullptr) {
  const double dt = curr.time_s - prev.time_s;
  ImuSample s;
  s.t_s = curr.time_s;
  s.tip = tip;

  Vec3 acc_g = (curr.lin_rate_um_s - prev.lin_rate_um_s) * (1e-6 / dt) / kGravityMs2;

  // Gravity through the deformed sensor orientation.
  const Vec3 theta_rad = curr.torsion_mrad * 1e-3;
  const double angle = theta_rad.norm();
  Vec3 g_tilted = gravity_dir;
  if (angle > 1e-15) {
    g_tilted = Eigen::AngleAxisd(angle, theta_rad / angle).toRotationMatrix().transpose() * gravity_dir;
  }
  acc_g += g_tilted;

  Vec3 gyro_dps = curr.ang_rate_mrad_s * 1e-3 * (180.0 / M_PI);

  for (int i = 0; i < 3; ++i) {
    double a = acc_g[i] + noise.sigma_acc_g * rng.gaussian();
    double w = gyro_dps[i] + noise.sigma_gyro_dps * rng.gaussian();
    if (std::abs(a) > kAccFullScaleG) {
      a = std::copysign(kAccFullScaleG, a);
      if (saturations) ++*saturations;
    }
    if (std::abs(w) > kGyroFullScaleDps) {
      w = std::copysign(kGyroFullScaleDps, w);
      if (saturations) ++*saturations;
    }
    s.acc_q[i] = quantize(a, kAccLsbG);
    s.gyro_q[i] = quantize(w, kGyroLsbDps);
  }
  return s;
}

// Convenience driver for the left+right tip chain: grasp wrench in world
// axes -> gripper frame -> split -> per-tip sensor frame -> dynamics ->
// IMU samples.
class TipPairSim {
 public:
  TipPairSim(const TipParams& left, const TipParams& right, const SplitGains& gains,
             const ImuNoise& noise, std::uint64_t seed)
      : left_params_(left),
        right_params_(right),
        gains_(gains),
        noise_(noise),
        rng_left_(deriveSeed(seed, 1)),
        rng_right_(deriveSeed(seed, 2)) {
    left_params_.validate();
    right_params_.validate();
    sensor_from_gripper_left_ = sensorFromGripper(TipSide::kLeft);
    sensor_from_gripper_right_ = sensorFromGripper(TipSide::kRight);
    gravity_left_ = sensor_from_gripper_left_ * Vec3(0.0, 0.0, -1.0);
    gravity_right_ = sensor_from_gripper_right_ * Vec3(0.0, 0.0, -1.0);
  }

  // Advances both tips by one substep under the grasp wrench (world
  // axes, moments about the grasp point) and returns (left, right)
  // samples.
  std::pair<ImuSample, ImuSample> step(const Wrench6& grasp_wrench_world, double dt) {
    const Mat3 r_gw = gripperFromWorld();
    Wrench6 grasp_g(r_gw * grasp_wrench_world.force, r_gw * grasp_wrench_world.torque,
                    WrenchFrame::kGrasp);
    auto [wl, wr] = splitWrench(grasp_g, left_params_, right_params_, gains_);

    Wrench6 wl_s(sensor_from_gripper_left_ * wl.force, sensor_from_gripper_left_ * wl.torque,
                 WrenchFrame::kGrasp);
    Wrench6 wr_s(sensor_from_gripper_right_ * wr.force, sensor_from_gripper_right_ * wr.torque,
                 WrenchFrame::kGrasp);

    const TipDeformationState prev_l = left_state_;
    const TipDeformationState prev_r = right_state_;
    left_state_ = stepTip(left_state_, wl_s, left_params_, dt);
    right_state_ = stepTip(right_state_, wr_s, right_params_, dt);

    ImuSample sl = synthesizeImu(prev_l, left_state_, gravity_left_, noise_, rng_left_,
                                 TipSide::kLeft, &saturation_count_);
    ImuSample sr = synthesizeImu(prev_r, right_state_, gravity_right_, noise_, rng_right_,
                                 TipSide::kRight, &saturation_count_);
    return {sl, sr};
  }

  const TipDeformationState& leftState() const { return left_state_; }
  const TipDeformationState& rightState() const { return right_state_; }
  std::uint64_t saturationCount() const { return saturation_count_; }

 private:
  TipParams left_params_;
  TipParams right_params_;
  SplitGains gains_;
  ImuNoise noise_;
  Rng rng_left_;
  Rng rng_right_;
  Mat3 sensor_from_gripper_left_;
  Mat3 sensor_from_gripper_right_;
  Vec3 gravity_left_;
  Vec3 gravity_right_;
  TipDeformationState left_state_;
  TipDeformationState right_state_;
  std::uint64_t saturation_count_ = 0;
};

}  // namespace tactsim
