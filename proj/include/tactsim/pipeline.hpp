// High-rate stream handling: per-tip ring buffers, 24 Hz window
// extraction with linear resampling onto a fixed 146-row grid, onset
// detection, and the rule-based edge-direction / contact-mode
// classifiers used by the scripted expert.
#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <vector>

#include "tactsim/common.hpp"
#include "tactsim/config.hpp"
#include "tactsim/tip.hpp"

namespace tactsim {

// Columns: acc x,y,z [g], gyro x,y,z [dps].
using WindowMatrix = Eigen::Matrix<double, kWindowRows, 6>;

struct TactileWindow {
  WindowMatrix samples{WindowMatrix::Zero()};
  double tick_time_s{0.0};
  TipSide tip{TipSide::kLeft};
};

enum class ContactEventKind { kOnset, kEdgeSlide, kEdgeDeparture, kInnerWall, kSeated };

inline const char* toString(ContactEventKind k) {
  switch (k) {
    case ContactEventKind::kOnset: return "onset";
    case ContactEventKind::kEdgeSlide: return "edge-slide";
    case ContactEventKind::kEdgeDeparture: return "edge-departure";
    case ContactEventKind::kInnerWall: return "inner-wall";
    case ContactEventKind::kSeated: return "seated";
  }
  return "?";
}

struct ContactEvent {
  ContactEventKind kind{ContactEventKind::kOnset};
  double t_s{0.0};
  double confidence{0.0};
};

// Single-producer / single-consumer circular sample store with one lane
// per tip. The write counter is published with release semantics so a
// reader never observes a partially written sample.
class RingBuffer {
 public:
  explicit RingBuffer(std::size_t capacity = static_cast<std::size_t>(2.0 * kImuRateHz))
      : capacity_(capacity) {
    for (auto& lane : lanes_) {
      lane.data.resize(capacity_);
      lane.count.store(0, std::memory_order_relaxed);
    }
  }

  std::size_t capacity() const { return capacity_; }

  void push(const ImuSample& s) {
    Lane& lane = lanes_[laneIndex(s.tip)];
    const std::uint64_t n = lane.count.load(std::memory_order_relaxed);
    if (n > 0) {
      const ImuSample& last = lane.data[(n - 1) % capacity_];
      if (s.t_s < last.t_s)
        throw StreamOrderError("out-of-order IMU sample: " + std::to_string(s.t_s) + " after " +
                               std::to_string(last.t_s));
    }
    lane.data[n % capacity_] = s;
    lane.count.store(n + 1, std::memory_order_release);
  }

  std::uint64_t totalPushed(TipSide tip) const {
    return lanes_[laneIndex(tip)].count.load(std::memory_order_acquire);
  }
  std::uint64_t evictions(TipSide tip) const {
    const std::uint64_t n = totalPushed(tip);
    return n > capacity_ ? n - capacity_ : 0;
  }
  std::size_t size(TipSide tip) const {
    return static_cast<std::size_t>(std::min<std::uint64_t>(totalPushed(tip), capacity_));
  }

  // Samples with t in [t_begin, t_end], oldest first.
  std::vector<ImuSample> range(TipSide tip, double t_begin, double t_end) const {
    const Lane& lane = lanes_[laneIndex(tip)];
    const std::uint64_t n = lane.count.load(std::memory_order_acquire);
    const std::uint64_t lo = n > capacity_ ? n - capacity_ : 0;
    std::vector<ImuSample> out;
    for (std::uint64_t i = lo; i < n; ++i) {
      const ImuSample& s = lane.data[i % capacity_];
      if (s.t_s > t_end) break;
      if (s.t_s >= t_begin) out.push_back(s);
    }
    return out;
  }

 private:
  struct Lane {
    std::vector<ImuSample> data;
    std::atomic<std::uint64_t> count{0};
  };
  static std::size_t laneIndex(TipSide tip) { return tip == TipSide::kLeft ? 0 : 1; }

  std::size_t capacity_;
  Lane lanes_[2];
};

// Resamples the raw samples in (tick - 1/24, tick] onto exactly 146
// uniform points (linear interpolation). Consecutive ticks tile the
// resampled stream with no gap or overlap.
inline TactileWindow extractWindow(const RingBuffer& buf, TipSide tip, double tick_time_s) {
  const double interval = 1.0 / kObsRateHz;
  const double t0 = tick_time_s - interval;
  // Margin on each side for interpolation; the trailing margin must
  // cover a tick that falls between substeps, where the first sample at
  // or after the tick lies a full substep past it.
  const auto raw = buf.range(tip, t0 - 2.0 / kImuRateHz, tick_time_s + 1.5 / kImuRateHz);
  if (raw.size() < 2 || raw.front().t_s > t0 + 1e-12 || raw.back().t_s < tick_time_s - 1e-9)
    throw BufferUnderflowError("insufficient history for window at t=" +
                               std::to_string(tick_time_s));

  TactileWindow w;
  w.tick_time_s = tick_time_s;
  w.tip = tip;

  std::size_t j = 0;
  for (int i = 0; i < kWindowRows; ++i) {
    const double t = t0 + (i + 1) * interval / kWindowRows;
    while (j + 2 < raw.size() && raw[j + 1].t_s < t) ++j;
    const ImuSample& a = raw[j];
    const ImuSample& b = raw[j + 1];
    const double span = b.t_s - a.t_s;
    double alpha = span > 1e-15 ? (t - a.t_s) / span : 0.0;
    alpha = std::clamp(alpha, 0.0, 1.0);
    const Vec3 acc = (1.0 - alpha) * a.accG() + alpha * b.accG();
    const Vec3 gyro = (1.0 - alpha) * a.gyroDps() + alpha * b.gyroDps();
    w.samples.row(i) << acc.transpose(), gyro.transpose();
  }
  return w;
}

// First time where any channel deviates from its running (cumulative)
// baseline by more than k*sigma for at least `persist` consecutive
// samples; nullopt when no crossing.
inline std::optional<double> detectOnset(const TactileWindow& window, const Vec6& baseline_sigma,
                                         double k, int persist = 3) {
  const double interval = 1.0 / kObsRateHz;
  const double t0 = window.tick_time_s - interval;
  Vec6 mean = window.samples.row(0).transpose();
  int run_start = -1;
  int run_len = 0;
  for (int i = 1; i < kWindowRows; ++i) {
    const Vec6 x = window.samples.row(i).transpose();
    bool crossed = false;
    for (int c = 0; c < 6; ++c) {
      if (std::abs(x[c] - mean[c]) > k * baseline_sigma[c]) {
        crossed = true;
        break;
      }
    }
    if (crossed) {
      if (run_len == 0) run_start = i;
      if (++run_len >= persist) return t0 + (run_start + 1) * interval / kWindowRows;
    } else {
      run_len = 0;
      // Update the baseline only while quiet so a step stays detectable.
      mean += (x - mean) / static_cast<double>(i + 1);
    }
  }
  return std::nullopt;
}

enum class EdgeDirection { kPlusX, kMinusX, kPlusY, kMinusY, kUncertain };

inline const char* toString(EdgeDirection d) {
  switch (d) {
    case EdgeDirection::kPlusX: return "+x";
    case EdgeDirection::kMinusX: return "-x";
    case EdgeDirection::kPlusY: return "+y";
    case EdgeDirection::kMinusY: return "-y";
    case EdgeDirection::kUncertain: return "uncertain";
  }
  return "?";
}

inline EdgeDirection parseEdgeDirection(const std::string& s) {
  if (s == "+x") return EdgeDirection::kPlusX;
  if (s == "-x") return EdgeDirection::kMinusX;
  if (s == "+y") return EdgeDirection::kPlusY;
  if (s == "-y") return EdgeDirection::kMinusY;
  if (s == "uncertain") return EdgeDirection::kUncertain;
  throw ConfigError("unknown edge direction: " + s);
}

inline Vec2 directionVector(EdgeDirection d) {
  switch (d) {
    case EdgeDirection::kPlusX: return {1.0, 0.0};
    case EdgeDirection::kMinusX: return {-1.0, 0.0};
    case EdgeDirection::kPlusY: return {0.0, 1.0};
    case EdgeDirection::kMinusY: return {0.0, -1.0};
    default: return {0.0, 0.0};
  }
}

struct DirectionThresholds {
  double tilt_floor_mrad{1.0};
  double dominance_ratio{1.5};
  double antiphase_corr_max{-0.5};

  static DirectionThresholds fromConfig(const Config& cfg) {
    DirectionThresholds t;
    t.tilt_floor_mrad = cfg.get<double>("pipeline.dir_tilt_floor_mrad");
    t.dominance_ratio = cfg.get<double>("pipeline.dir_dominance_ratio");
    t.antiphase_corr_max = cfg.get<double>("pipeline.antiphase_corr_max");
    return t;
  }
};

namespace detail {

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd da = a.array() - a.mean();
  const Eigen::VectorXd db = b.array() - b.mean();
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  if (denom < 1e-12) return 0.0;
  return da.dot(db) / denom;
}

// Sustained torsion estimates (gripper frame, mrad) from the gravity
// tilt visible in the lateral accelerometer means. With gravity on the
// sensor -y axis, sensor-x torsion shows up as an acc-z mean shift and
// sensor-z torsion as a negated acc-x mean shift; the mirrored left
// mounting flips both, so the differences below recover the common
// gripper-frame torsion.
struct TiltEstimate {
  double gripper_x_mrad;
  double gripper_y_mrad;
  double acc_y_rms_left;
  double acc_y_rms_right;
  double gyro_z_corr;
};

inline TiltEstimate estimateTilt(const TactileWindow& left, const TactileWindow& right) {
  auto colMean = [](const TactileWindow& w, int c) { return w.samples.col(c).mean(); };
  auto colRms = [](const TactileWindow& w, int c) {
    const Eigen::VectorXd v = w.samples.col(c).array() - w.samples.col(c).mean();
    return std::sqrt(v.squaredNorm() / v.size());
  };
  TiltEstimate e{};
  const double theta_sx_l = colMean(left, 2) * 1e3;   // sensor-x torsion, left
  const double theta_sx_r = colMean(right, 2) * 1e3;
  const double theta_sz_l = -colMean(left, 0) * 1e3;  // sensor-z torsion
  const double theta_sz_r = -colMean(right, 0) * 1e3;
  e.gripper_x_mrad = 0.5 * (theta_sx_r - theta_sx_l);
  e.gripper_y_mrad = 0.5 * (theta_sz_l - theta_sz_r);
  e.acc_y_rms_left = colRms(left, 1);
  e.acc_y_rms_right = colRms(right, 1);
  e.gyro_z_corr = pearson(left.samples.col(5), right.samples.col(5));
  return e;
}

}  // namespace detail

// Rule-based contact-side classifier. Output is the lateral offset
// direction of the peg relative to the slot, in world axes; the correct
// corrective slide is the opposite direction. Falls back to uncertain
// when the tilt evidence is weak or not dominant along one axis.
inline EdgeDirection classifyEdgeDirection(const TactileWindow& left, const TactileWindow& right,
                                           const DirectionThresholds& thr = {}) {
  const auto e = detail::estimateTilt(left, right);
  const double mx = std::abs(e.gripper_x_mrad);
  const double my = std::abs(e.gripper_y_mrad);
  if (std::max(mx, my) < thr.tilt_floor_mrad) return EdgeDirection::kUncertain;

  if (mx >= thr.dominance_ratio * my) {
    // World +-x offsets load the jaw-axis seesaw: gripper-x torque.
    // Positive world-x offset drives a negative gripper-x torque.
    return e.gripper_x_mrad < 0.0 ? EdgeDirection::kPlusX : EdgeDirection::kMinusX;
  }
  if (my >= thr.dominance_ratio * mx) {
    if (e.gyro_z_corr > thr.antiphase_corr_max &&
        my < 4.0 * thr.tilt_floor_mrad)  // weak and not anti-phase: distrust
      return EdgeDirection::kUncertain;
    return e.gripper_y_mrad < 0.0 ? EdgeDirection::kPlusY : EdgeDirection::kMinusY;
  }
  return EdgeDirection::kUncertain;
}

enum class ContactMode { kExternalEdge, kInnerWall, kSeated, kNone };

inline const char* toString(ContactMode m) {
  switch (m) {
    case ContactMode::kExternalEdge: return "external-edge";
    case ContactMode::kInnerWall: return "inner-wall";
    case ContactMode::kSeated: return "seated";
    case ContactMode::kNone: return "none";
  }
  return "?";
}

// Combines onset evidence with the peg-bottom depth relative to the
// slot plane: contact above the plane is an external edge, contact
// while inside the opening is an inner wall, sustained load at the
// seat depth is seated.
inline ContactMode classifyContactMode(const TactileWindow& left, const TactileWindow& right,
                                       double ee_depth_mm, const Vec6& baseline_sigma, double k,
                                       double seat_depth_mm, double tilt_floor_mrad = 1.0) {
  const auto onset_l = detectOnset(left, baseline_sigma, k);
  const auto onset_r = detectOnset(right, baseline_sigma, k);
  const bool onset = onset_l.has_value() || onset_r.has_value();
  const auto e = detail::estimateTilt(left, right);
  const bool loaded = std::max(std::abs(e.gripper_x_mrad), std::abs(e.gripper_y_mrad)) >
                      0.5 * tilt_floor_mrad;

  if (ee_depth_mm >= seat_depth_mm) return ContactMode::kSeated;
  if (onset) {
    return ee_depth_mm <= 0.0 ? ContactMode::kExternalEdge : ContactMode::kInnerWall;
  }
  if (loaded && ee_depth_mm <= 0.0) return ContactMode::kExternalEdge;
  if (loaded) return ContactMode::kInnerWall;
  return ContactMode::kNone;
}

}  // namespace tactsim
