// Quasi-static peg-in-slot world: collision candidates from the peg's
// bottom face against the slot plate, opening edges, inner walls and
// bottom, a linear penalty + Coulomb friction wrench about the grasp
// point, and substep integration of a commanded end-effector twist.
//
// The arm is modeled as a velocity-commanded servo with a linear force
// compliance, so a constant commanded descent settles at
// penetration = v / (compliance * stiffness).
#pragma once

#include <vector>

#include "tactsim/common.hpp"
#include "tactsim/config.hpp"
#include "tactsim/geometry.hpp"

namespace tactsim {

enum class ContactFeature {
  kSlotTopSurface,
  kSlotEdgePx,
  kSlotEdgeNx,
  kSlotEdgePy,
  kSlotEdgeNy,
  kInnerWallPx,
  kInnerWallNx,
  kInnerWallPy,
  kInnerWallNy,
  kSlotBottom,
};

inline const char* toString(ContactFeature f) {
  switch (f) {
    case ContactFeature::kSlotTopSurface: return "slot-top-surface";
    case ContactFeature::kSlotEdgePx: return "slot-edge(+x)";
    case ContactFeature::kSlotEdgeNx: return "slot-edge(-x)";
    case ContactFeature::kSlotEdgePy: return "slot-edge(+y)";
    case ContactFeature::kSlotEdgeNy: return "slot-edge(-y)";
    case ContactFeature::kInnerWallPx: return "inner-wall(+x)";
    case ContactFeature::kInnerWallNx: return "inner-wall(-x)";
    case ContactFeature::kInnerWallPy: return "inner-wall(+y)";
    case ContactFeature::kInnerWallNy: return "inner-wall(-y)";
    case ContactFeature::kSlotBottom: return "slot-bottom";
  }
  return "?";
}

inline bool isInnerWall(ContactFeature f) {
  return f == ContactFeature::kInnerWallPx || f == ContactFeature::kInnerWallNx ||
         f == ContactFeature::kInnerWallPy || f == ContactFeature::kInnerWallNy;
}
inline bool isSlotEdge(ContactFeature f) {
  return f == ContactFeature::kSlotEdgePx || f == ContactFeature::kSlotEdgeNx ||
         f == ContactFeature::kSlotEdgePy || f == ContactFeature::kSlotEdgeNy;
}

struct Contact {
  Vec3 point{Vec3::Zero()};   // world, mm
  Vec3 normal{Vec3::Zero()};  // unit, pointing out of the obstacle
  double penetration_mm{0.0};
  ContactFeature feature{ContactFeature::kSlotTopSurface};
};

struct WorldState {
  Pose6 ee_pose;             // grasp point pose in world
  bool peg_in_gripper{true};
  double time_s{0.0};
};

struct WorldParams {
  double stiffness_n_per_mm{50.0};
  double friction_coeff{0.3};
  double compliance_mm_per_ns{0.4};
  double substep_hz{kImuRateHz};
  double max_penetration_mm{2.0};
  double slip_reg_mm_per_s{0.5};
  double edge_band_mm{2.0};

  static WorldParams fromConfig(const Config& cfg) {
    WorldParams p;
    p.stiffness_n_per_mm = cfg.get<double>("world.stiffness_n_per_mm");
    p.friction_coeff = cfg.get<double>("world.friction_coeff");
    p.compliance_mm_per_ns = cfg.get<double>("world.compliance_mm_per_ns");
    p.substep_hz = cfg.get<double>("world.substep_hz");
    p.max_penetration_mm = cfg.get<double>("world.max_penetration_mm");
    p.slip_reg_mm_per_s = cfg.get<double>("world.slip_reg_mm_per_s");
    p.edge_band_mm = cfg.get<double>("world.edge_band_mm");
    return p;
  }
};

namespace detail {

// Candidate contact points on the peg's bottom face, in slot-local
// coordinates (slot center at origin, opening axis-aligned, plate top
// at z = 0): bottom vertices plus the intersections of bottom-face
// edges with the opening boundary so flat edge rests are captured even
// when no vertex lies on the supported side.
struct SlotLocal {
  std::vector<Vec3> points;
  Mat3 rot_slot_from_world;  // applied to vectors; inverse maps back
  Vec3 slot_origin_world;
};

inline SlotLocal pegBottomInSlotFrame(const WorldState& state, const PegGeometry& peg,
                                      const SlotGeometry& slot) {
  SlotLocal out;
  const Mat3 r_we = state.ee_pose.rotationMatrix();
  const double cy = std::cos(slot.yaw_rad), sy = std::sin(slot.yaw_rad);
  Mat3 r_sw;  // slot-from-world
  r_sw << cy, sy, 0.0, -sy, cy, 0.0, 0.0, 0.0, 1.0;
  out.rot_slot_from_world = r_sw;
  out.slot_origin_world = Vec3(slot.center_mm.x(), slot.center_mm.y(), 0.0);

  std::vector<Vec3> pts;
  pts.reserve(peg.cross_section.size());
  for (const auto& v : peg.cross_section) {
    const Vec3 local(v.x(), v.y(), -peg.grasp_height_mm);
    const Vec3 world = state.ee_pose.position + r_we * local;
    pts.push_back(r_sw * (world - out.slot_origin_world));
  }

  const double hw = 0.5 * slot.width_mm, hd = 0.5 * slot.depth_mm;
  const std::size_t n = pts.size();
  std::vector<Vec3> extra;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& a = pts[i];
    const Vec3& b = pts[(i + 1) % n];
    // Intersect segment ab with the four boundary lines of the opening.
    auto addCrossing = [&](double t) {
      if (t > 1e-9 && t < 1.0 - 1e-9) extra.push_back(a + t * (b - a));
    };
    if (std::abs(b.x() - a.x()) > 1e-12) {
      addCrossing((hw - a.x()) / (b.x() - a.x()));
      addCrossing((-hw - a.x()) / (b.x() - a.x()));
    }
    if (std::abs(b.y() - a.y()) > 1e-12) {
      addCrossing((hd - a.y()) / (b.y() - a.y()));
      addCrossing((-hd - a.y()) / (b.y() - a.y()));
    }
  }
  out.points = std::move(pts);
  out.points.insert(out.points.end(), extra.begin(), extra.end());
  return out;
}

}  // namespace detail

// All contacts between the peg and the slot plate/opening. Separated
// bodies yield an empty list. Points inside the plate solid resolve
// along the minimal translation: upward (plate/edge rest) or lateral
// (inner wall), whichever is shallower.
inline std::vector<Contact> detectContacts(const WorldState& state, const PegGeometry& peg,
                                           const SlotGeometry& slot,
                                           double edge_band_mm = 2.0) {
  std::vector<Contact> contacts;
  if (!state.peg_in_gripper) return contacts;

  const auto local = detail::pegBottomInSlotFrame(state, peg, slot);
  const double hw = 0.5 * slot.width_mm, hd = 0.5 * slot.depth_mm;
  const double h = slot.wall_height_mm;
  const Mat3 r_ws = local.rot_slot_from_world.transpose();

  for (const Vec3& p : local.points) {
    if (p.z() >= 0.0) continue;
    const double ex = std::max(std::abs(p.x()) - hw, 0.0);
    const double ey = std::max(std::abs(p.y()) - hd, 0.0);
    const bool inside_opening = (ex == 0.0 && ey == 0.0);

    Contact c;
    if (inside_opening) {
      if (p.z() >= -h) continue;  // free space inside the opening
      c.normal = Vec3::UnitZ();
      c.penetration_mm = -h - p.z();
      c.feature = ContactFeature::kSlotBottom;
    } else {
      const double lateral = std::hypot(ex, ey);
      const double lift = -p.z();
      if (lift <= lateral || p.z() < -h) {
        // Resting on the plate top (or overlapping beyond the wall depth).
        c.normal = Vec3::UnitZ();
        c.penetration_mm = lift;
        const double excess = std::max(ex, ey);
        if (excess > edge_band_mm) {
          c.feature = ContactFeature::kSlotTopSurface;
        } else if (ex >= ey) {
          c.feature = p.x() > 0.0 ? ContactFeature::kSlotEdgePx : ContactFeature::kSlotEdgeNx;
        } else {
          c.feature = p.y() > 0.0 ? ContactFeature::kSlotEdgePy : ContactFeature::kSlotEdgeNy;
        }
      } else {
        // Lateral overlap with an inner wall below the plate top.
        Vec3 n_slot;
        if (ex >= ey) {
          n_slot = Vec3(p.x() > 0.0 ? -1.0 : 1.0, 0.0, 0.0);
          c.penetration_mm = ex;
          c.feature = p.x() > 0.0 ? ContactFeature::kInnerWallPx : ContactFeature::kInnerWallNx;
        } else {
          n_slot = Vec3(0.0, p.y() > 0.0 ? -1.0 : 1.0, 0.0);
          c.penetration_mm = ey;
          c.feature = p.y() > 0.0 ? ContactFeature::kInnerWallPy : ContactFeature::kInnerWallNy;
        }
        c.normal = r_ws * n_slot;
      }
    }
    c.point = r_ws * p + local.slot_origin_world;
    contacts.push_back(c);
  }
  return contacts;
}

// Penalty + Coulomb wrench about the grasp point (world axes, moments
// taken about the grasp position). `twist` is the peg's commanded
// 6-vector (v_mm_s, w_rad_s) used to direct friction; pass zero for a
// purely normal wrench.
inline Wrench6 contactWrench(const std::vector<Contact>& contacts, double stiffness_n_per_mm,
                             double friction_coeff, const Pose6& grasp_pose,
                             const Vec6& twist = Vec6::Zero(),
                             double slip_reg_mm_per_s = 0.5) {
  Wrench6 w;
  w.frame = WrenchFrame::kGrasp;
  // Candidate points sharing a feature describe one physical patch and
  // share one spring, so the stiffness seen by the arm stays the
  // configured value regardless of how many sample points land on the
  // patch.
  int feature_count[10] = {0};
  for (const auto& c : contacts) ++feature_count[static_cast<int>(c.feature)];
  for (const auto& c : contacts) {
    const double share = 1.0 / feature_count[static_cast<int>(c.feature)];
    const Vec3 fn = share * stiffness_n_per_mm * c.penetration_mm * c.normal;
    Vec3 f = fn;
    if (friction_coeff > 0.0) {
      const Vec3 arm = c.point - grasp_pose.position;
      const Vec3 v = twist.head<3>() + twist.tail<3>().cross(arm);
      const Vec3 vt = v - v.dot(c.normal) * c.normal;
      const double speed = vt.norm();
      const double denom = std::max(speed, slip_reg_mm_per_s);
      f -= friction_coeff * fn.norm() * vt / denom;
    }
    w.force += f;
    w.torque += (c.point - grasp_pose.position).cross(f);
  }
  return w;
}

struct StepResult {
  WorldState state;
  Wrench6 wrench;
  std::vector<Contact> contacts;
};

// Integrates the commanded twist over dt at the world substep rate.
// The servo compliance feeds the previous substep's contact force back
// into the velocity, which is what keeps penetrations bounded.
inline StepResult stepWorld(const WorldState& state, const Vec6& twist, double dt,
                            const PegGeometry& peg, const SlotGeometry& slot,
                            const WorldParams& params) {
  if (!(dt > 0.0)) throw std::invalid_argument("stepWorld: dt must be positive");
  StepResult res;
  res.state = state;

  const double sub_dt = 1.0 / params.substep_hz;
  int n_sub = static_cast<int>(std::ceil(dt / sub_dt - 1e-9));
  n_sub = std::max(n_sub, 1);
  const double step_dt = dt / n_sub;

  Vec3 prev_force = Vec3::Zero();
  {
    auto c0 = detectContacts(state, peg, slot, params.edge_band_mm);
    prev_force = contactWrench(c0, params.stiffness_n_per_mm, params.friction_coeff,
                               state.ee_pose, twist, params.slip_reg_mm_per_s)
                     .force;
  }

  for (int i = 0; i < n_sub; ++i) {
    res.state.ee_pose.position +=
        (twist.head<3>() + params.compliance_mm_per_ns * prev_force) * step_dt;
    res.state.ee_pose.rotation += twist.tail<3>() * step_dt;
    res.state.time_s += step_dt;

    res.contacts = detectContacts(res.state, peg, slot, params.edge_band_mm);
    res.wrench = contactWrench(res.contacts, params.stiffness_n_per_mm, params.friction_coeff,
                               res.state.ee_pose, twist, params.slip_reg_mm_per_s);
    prev_force = res.wrench.force;
    for (const auto& c : res.contacts) {
      if (c.penetration_mm > params.max_penetration_mm)
        throw SimulationBlowupError("penetration " + std::to_string(c.penetration_mm) +
                                    " mm exceeds limit at " + std::string(toString(c.feature)));
    }
  }
  return res;
}

// Peg bottom depth below the slot plate top (positive once inside).
inline double pegDepth(const WorldState& state, const PegGeometry& peg) {
  const Mat3 r = state.ee_pose.rotationMatrix();
  const Vec3 bottom = state.ee_pose.position + r * Vec3(0.0, 0.0, -peg.grasp_height_mm);
  return -bottom.z();
}

}  // namespace tactsim
