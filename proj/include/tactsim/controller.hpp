// Insertion control: PI admittance force limiting, the four-stage
// scripted expert that generates demonstrations, and the episode
// executor that runs either the expert or a learned diffusion policy
// against the simulated world on a shared substep clock.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tactsim/contact.hpp"
#include "tactsim/pipeline.hpp"
#include "tactsim/policy.hpp"
#include "tactsim/render.hpp"

namespace tactsim {

// --- PI admittance ---------------------------------------------------

struct AdmittanceState {
  double kp_mm_per_s_per_n{10.0};
  double ki_mm_per_s_per_ns{50.0};
  double force_limit_n{5.0};
  double antiwindup_ns{3.0};
  Vec3 integral_ns{Vec3::Zero()};

  static AdmittanceState fromConfig(const Config& cfg) {
    AdmittanceState a;
    a.kp_mm_per_s_per_n = cfg.get<double>("controller.kp_mm_per_s_per_n");
    a.ki_mm_per_s_per_ns = cfg.get<double>("controller.ki_mm_per_s_per_ns");
    a.force_limit_n = cfg.get<double>("controller.force_limit_n");
    a.antiwindup_ns = cfg.get<double>("controller.antiwindup_ns");
    a.validate();
    return a;
  }

  void validate() const {
    if (kp_mm_per_s_per_n <= 0.0 || ki_mm_per_s_per_ns <= 0.0 || force_limit_n <= 0.0 ||
        antiwindup_ns <= 0.0)
      throw ConfigError("admittance gains and limits must be positive");
  }
};

// Velocity correction from the force the robot applies to the
// environment (the negated contact reaction). Only the magnitude beyond
// the limit envelope acts, so contact forces at or under the limit pass
// through untouched. The integral unwinds while the force is inside the
// envelope so no retreat bias lingers after the overload clears.
inline Vec3 piAdmittance(AdmittanceState& adm, const Wrench6& applied_wrench, double dt) {
  const Vec3 f = applied_wrench.force;
  const double mag = f.norm();
  Vec3 excess = Vec3::Zero();
  if (mag > adm.force_limit_n) {
    excess = f * ((mag - adm.force_limit_n) / mag);
    adm.integral_ns += excess * dt;
    const double in = adm.integral_ns.norm();
    if (in > adm.antiwindup_ns) adm.integral_ns *= adm.antiwindup_ns / in;
  } else if (adm.integral_ns.squaredNorm() > 0.0) {
    adm.integral_ns *= std::exp(-dt / 0.05);
    if (adm.integral_ns.norm() < 1e-9) adm.integral_ns.setZero();
  }
  return -adm.kp_mm_per_s_per_n * excess - adm.ki_mm_per_s_per_ns * adm.integral_ns;
}

// --- scripted expert ---------------------------------------------------

enum class Stage { kDescend, kLocalizeSlide, kWallDetect, kSeat };

inline const char* toString(Stage s) {
  switch (s) {
    case Stage::kDescend: return "descend";
    case Stage::kLocalizeSlide: return "localize-slide";
    case Stage::kWallDetect: return "wall-detect";
    case Stage::kSeat: return "seat";
  }
  return "?";
}

struct StageState {
  Stage stage{Stage::kDescend};
  double entered_at_s{0.0};
  std::optional<Vec2> slide_direction;  // unit, world xy
  double onset_at_s{-1.0};              // first onset in the current stage
  double uncertain_since_s{-1.0};
  int probe_parity{0};
  int wall_seat_alternations{0};
};

struct ExpertParams {
  double descend_mm_per_s{6.0};
  double slide_mm_per_s{4.0};
  double slide_down_bias_mm_per_s{1.0};
  double contact_dwell_s{0.15};
  double uncertain_probe_s{0.5};
  double seat_depth_mm{10.0};
  double enter_depth_mm{0.3};  // depth treated as "inside the opening"

  static ExpertParams fromConfig(const Config& cfg) {
    ExpertParams p;
    p.descend_mm_per_s = cfg.get<double>("controller.descend_mm_per_s");
    p.slide_mm_per_s = cfg.get<double>("controller.slide_mm_per_s");
    p.slide_down_bias_mm_per_s = cfg.get<double>("controller.slide_down_bias_mm_per_s");
    p.contact_dwell_s = cfg.get<double>("controller.contact_dwell_s");
    p.uncertain_probe_s = cfg.get<double>("controller.uncertain_probe_s");
    p.seat_depth_mm = cfg.get<double>("world.seat_depth_mm");
    return p;
  }
};

namespace detail {

inline bool hasEvent(const std::vector<ContactEvent>& events, ContactEventKind kind) {
  for (const auto& e : events)
    if (e.kind == kind) return true;
  return false;
}

}  // namespace detail

// One 24 Hz expert decision. `direction` is the classified lateral
// offset of the peg relative to the slot; the corrective slide runs the
// opposite way while resting on an outer edge. During inner-wall
// contact the torque sign flips (the wall pushes sideways below the
// grasp instead of the edge pushing up), so the same classifier output
// then names the wall on the opposite side and the correction follows
// the classified direction instead of opposing it.
inline std::pair<Vec6, StageState> scriptedExpertStep(const StageState& prev,
                                                      const std::vector<ContactEvent>& events,
                                                      EdgeDirection direction, double depth_mm,
                                                      double time_s, const ExpertParams& p) {
  StageState st = prev;
  Vec6 twist = Vec6::Zero();

  auto enter = [&](Stage s) {
    st.stage = s;
    st.entered_at_s = time_s;
    st.onset_at_s = -1.0;
    st.uncertain_since_s = -1.0;
  };

  const bool onset = detail::hasEvent(events, ContactEventKind::kOnset);
  const bool inner_wall = detail::hasEvent(events, ContactEventKind::kInnerWall);
  const bool departed = detail::hasEvent(events, ContactEventKind::kEdgeDeparture);

  switch (st.stage) {
    case Stage::kDescend: {
      twist[2] = -p.descend_mm_per_s;
      if (depth_mm > p.enter_depth_mm) {
        enter(Stage::kWallDetect);
        break;
      }
      if (onset && st.onset_at_s < 0.0) st.onset_at_s = time_s;
      if (st.onset_at_s >= 0.0 && time_s - st.onset_at_s >= p.contact_dwell_s) {
        enter(Stage::kLocalizeSlide);
        st.slide_direction.reset();
      }
      break;
    }
    case Stage::kLocalizeSlide: {
      if (depth_mm > p.enter_depth_mm || departed) {
        enter(Stage::kWallDetect);
        twist[2] = -p.descend_mm_per_s;
        break;
      }
      if (direction != EdgeDirection::kUncertain) {
        const Vec2 d = -directionVector(direction);
        st.slide_direction = d;
        st.uncertain_since_s = -1.0;
      }
      if (st.slide_direction) {
        twist[0] = p.slide_mm_per_s * st.slide_direction->x();
        twist[1] = p.slide_mm_per_s * st.slide_direction->y();
        twist[2] = -p.slide_down_bias_mm_per_s;
      } else {
        // No confident direction yet: hold light downward pressure; after
        // the probe deadline, alternate a small lateral excursion to
        // excite a fresh, classifiable transient.
        if (st.uncertain_since_s < 0.0) st.uncertain_since_s = time_s;
        twist[2] = -p.slide_down_bias_mm_per_s;
        if (time_s - st.uncertain_since_s >= p.uncertain_probe_s) {
          const double probe = 0.5 * p.slide_mm_per_s;
          twist[0] = (st.probe_parity % 2 == 0) ? probe : -probe;
          if (time_s - st.uncertain_since_s >= 2.0 * p.uncertain_probe_s) {
            ++st.probe_parity;
            st.uncertain_since_s = time_s;
          }
        }
      }
      break;
    }
    case Stage::kWallDetect: {
      twist[2] = -p.descend_mm_per_s;
      if (inner_wall && direction != EdgeDirection::kUncertain) {
        const Vec2 away = directionVector(direction);  // sign-flipped classifier, see above
        twist[0] += 0.5 * p.slide_mm_per_s * away.x();
        twist[1] += 0.5 * p.slide_mm_per_s * away.y();
      }
      if (depth_mm >= 0.8 * p.seat_depth_mm && !inner_wall) enter(Stage::kSeat);
      break;
    }
    case Stage::kSeat: {
      twist[2] = -p.descend_mm_per_s;
      if (inner_wall && st.wall_seat_alternations < 5) {
        ++st.wall_seat_alternations;
        enter(Stage::kWallDetect);
      }
      break;
    }
  }
  return {twist, st};
}

// --- stream classification per observation tick --------------------------

struct StreamClassifierParams {
  Vec6 baseline_sigma{Vec6::Zero()};
  double onset_k{6.0};
  int onset_persist{3};
  DirectionThresholds dir;
  double seat_depth_mm{10.0};

  static StreamClassifierParams fromConfig(const Config& cfg) {
    StreamClassifierParams p;
    p.baseline_sigma << Vec3::Constant(cfg.get<double>("pipeline.calib_sigma_acc_g")),
        Vec3::Constant(cfg.get<double>("pipeline.calib_sigma_gyro_dps"));
    p.onset_k = cfg.get<double>("pipeline.onset_k");
    p.onset_persist = cfg.get<int>("pipeline.onset_persist");
    p.dir = DirectionThresholds::fromConfig(cfg);
    p.seat_depth_mm = cfg.get<double>("world.seat_depth_mm");
    return p;
  }
};

struct StreamTickOutput {
  std::vector<ContactEvent> events;
  EdgeDirection direction{EdgeDirection::kUncertain};
  ContactMode mode{ContactMode::kNone};
};

// Events and classifications for one tick window pair, derivable both
// live and from a stored trace (the replay path).
inline StreamTickOutput classifyStreamTick(const TactileWindow& wl, const TactileWindow& wr,
                                           double depth_mm, double tick_t, ContactMode prev_mode,
                                           const StreamClassifierParams& p) {
  StreamTickOutput out;
  const auto onset_l = detectOnset(wl, p.baseline_sigma, p.onset_k, p.onset_persist);
  const auto onset_r = detectOnset(wr, p.baseline_sigma, p.onset_k, p.onset_persist);
  if (onset_l || onset_r)
    out.events.push_back({ContactEventKind::kOnset, onset_l ? *onset_l : *onset_r, 1.0});
  out.mode = classifyContactMode(wl, wr, depth_mm, p.baseline_sigma, p.onset_k, p.seat_depth_mm,
                                 p.dir.tilt_floor_mrad);
  if (out.mode == ContactMode::kExternalEdge && prev_mode == ContactMode::kExternalEdge)
    out.events.push_back({ContactEventKind::kEdgeSlide, tick_t, 1.0});
  if (prev_mode == ContactMode::kExternalEdge && out.mode != ContactMode::kExternalEdge)
    out.events.push_back({ContactEventKind::kEdgeDeparture, tick_t, 1.0});
  if (out.mode == ContactMode::kInnerWall)
    out.events.push_back({ContactEventKind::kInnerWall, tick_t, 1.0});
  if (out.mode == ContactMode::kSeated)
    out.events.push_back({ContactEventKind::kSeated, tick_t, 1.0});
  out.direction = classifyEdgeDirection(wl, wr, p.dir);
  return out;
}

// --- episode execution --------------------------------------------------

enum class EpisodeOutcome { kSuccess, kTimeout, kBlowup };

inline const char* toString(EpisodeOutcome o) {
  switch (o) {
    case EpisodeOutcome::kSuccess: return "success";
    case EpisodeOutcome::kTimeout: return "timeout";
    case EpisodeOutcome::kBlowup: return "blowup";
  }
  return "?";
}

struct TickRecord {
  double t_s{0.0};
  Pose6 commanded;
  Pose6 actual;
  Wrench6 grasp_wrench;  // contact reaction on the peg, world axes
  double depth_mm{0.0};
  Stage stage{Stage::kDescend};
  std::vector<ContactEvent> events;
};

struct EpisodeMeta {
  std::string object{"prism40"};
  double delta_mm{0.0};
  EdgeDirection direction{EdgeDirection::kPlusX};
  std::uint64_t seed{0};
  std::string agent{"expert"};  // "expert" or a policy variant name
};

struct EpisodeTrace {
  EpisodeMeta meta;
  std::vector<TickRecord> ticks;                // 24 Hz
  std::vector<ImuSample> imu_left, imu_right;   // 3500 Hz
  std::vector<RasterU8> rasters;                // one per tick
  EpisodeOutcome outcome{EpisodeOutcome::kTimeout};
  double duration_s{0.0};
};

struct EpisodeProtocol {
  std::string object{"prism40"};
  double delta_mm{1.0};
  EdgeDirection direction{EdgeDirection::kPlusX};
  std::uint64_t seed{0};
  double timeout_s{30.0};
};

namespace detail {

struct EpisodeSetup {
  PegGeometry peg;
  SlotGeometry slot;
  WorldParams world;
  WorldState state;
  CameraConfig camera;
  double seat_depth_mm{10.0};
};

// Builds the world for one episode: catalog object, slot plate with a
// seeded center jitter (so absolute workspace coordinates carry no
// information), and the peg hovering 1 mm above the plate, offset by
// delta along the protocol direction plus a small transverse jitter.
inline EpisodeSetup setupEpisode(const Config& cfg, const EpisodeProtocol& proto) {
  EpisodeSetup s;
  const CatalogEntry entry = catalogObject(proto.object);
  s.peg = entry.peg;
  s.slot.width_mm = entry.slot_width_mm;
  s.slot.depth_mm = entry.slot_depth_mm;
  s.slot.wall_height_mm = cfg.get<double>("world.slot.wall_height_mm");
  s.slot.validateAgainst(s.peg);
  s.world = WorldParams::fromConfig(cfg);
  s.camera = CameraConfig::fromConfig(cfg);
  s.seat_depth_mm = cfg.get<double>("world.seat_depth_mm");

  Rng rng(deriveSeed(proto.seed, 0x5e70));
  const double slot_jitter = cfg.get<double>("eval.slot_jitter_mm");
  const double trans_jitter = cfg.get<double>("eval.transverse_jitter_mm");
  s.slot.center_mm = Vec2(rng.uniform(-slot_jitter, slot_jitter),
                          rng.uniform(-slot_jitter, slot_jitter));

  const Vec2 dir = directionVector(proto.direction);
  const Vec2 perp(-dir.y(), dir.x());
  const Vec2 offset = proto.delta_mm * dir + rng.uniform(-trans_jitter, trans_jitter) * perp;
  s.state.ee_pose.position = Vec3(s.slot.center_mm.x() + offset.x(),
                                  s.slot.center_mm.y() + offset.y(),
                                  s.peg.grasp_height_mm + 1.0);
  return s;
}

}  // namespace detail

// Runs one episode on the shared 3500 Hz substep clock with 24 Hz
// observation ticks. The expert decides every observation tick; a
// learned policy (non-null `policy`) samples an action chunk every
// second tick (12 Hz) and the per-tick target comes from the temporal
// ensemble over live chunks. PI admittance is active in both modes.
// Deterministic given the protocol seed.
inline EpisodeTrace runEpisode(const Config& cfg, const EpisodeProtocol& proto,
                               PolicyNet* policy = nullptr) {
  EpisodeTrace trace;
  trace.meta.object = proto.object;
  trace.meta.delta_mm = proto.delta_mm;
  trace.meta.direction = proto.direction;
  trace.meta.seed = proto.seed;
  trace.meta.agent = policy ? toString(policy->variant()) : "expert";

  auto setup = detail::setupEpisode(cfg, proto);
  AdmittanceState adm = AdmittanceState::fromConfig(cfg);
  const ExpertParams expert_params = ExpertParams::fromConfig(cfg);

  TipPairSim tips(TipParams::fromConfig(cfg, TipSide::kLeft),
                  TipParams::fromConfig(cfg, TipSide::kRight),
                  SplitGains{cfg.get<double>("tip.torsion_share"),
                             cfg.get<double>("tip.force_couple_gain")},
                  ImuNoise{cfg.get<double>("tip.noise_sigma_acc_g"),
                           cfg.get<double>("tip.noise_sigma_gyro_dps")},
                  deriveSeed(proto.seed, 0x1147));
  RingBuffer ring;

  const StreamClassifierParams stream_params = StreamClassifierParams::fromConfig(cfg);

  PolicyConfig pol_cfg = policy ? policy->config() : PolicyConfig{};
  const double force_noise = pol_cfg.force_noise_sigma_n;
  Rng force_rng(deriveSeed(proto.seed, 0xf0ce));
  std::vector<std::pair<long, ActionChunk>> chunk_history;
  ObsStep obs_steps[2];  // trailing two ticks, oldest first
  int obs_filled = 0;
  const Pose6 anchor = setup.state.ee_pose;

  const double sub_dt = 1.0 / kImuRateHz;
  const long max_substeps = static_cast<long>(proto.timeout_s * kImuRateHz);
  // Ticks start at index 2 so the first extracted window has a full
  // 1/24 s of samples behind it (the stream begins at t = 1/3500).
  long tick_index = 1;
  long substeps_since_policy_tick = 0;
  bool policy_started = false;

  StageState stage;
  ContactMode prev_mode = ContactMode::kNone;
  Vec6 base_twist = Vec6::Zero();
  Pose6 commanded = setup.state.ee_pose;
  Wrench6 last_wrench;
  trace.outcome = EpisodeOutcome::kTimeout;

  for (long i = 0; i < max_substeps; ++i) {
    const Vec3 corr = piAdmittance(
        adm, Wrench6(-last_wrench.force, -last_wrench.torque, WrenchFrame::kGrasp), sub_dt);
    Vec6 twist = base_twist;
    twist.head<3>() += corr;

    StepResult step;
    try {
      step = stepWorld(setup.state, twist, sub_dt, setup.peg, setup.slot, setup.world);
    } catch (const SimulationBlowupError&) {
      trace.outcome = EpisodeOutcome::kBlowup;
      break;
    }
    setup.state = step.state;
    last_wrench = step.wrench;
    ++substeps_since_policy_tick;

    auto [sl, sr] = tips.step(step.wrench, sub_dt);
    ring.push(sl);
    ring.push(sr);
    trace.imu_left.push_back(sl);
    trace.imu_right.push_back(sr);

    // First window needs a full 1/24 s of history, so ticks start at 1.
    const double next_tick_t = static_cast<double>(tick_index + 1) / kObsRateHz;
    if (setup.state.time_s + 1e-12 < next_tick_t) continue;
    ++tick_index;
    const double tick_t = next_tick_t;

    const TactileWindow wl = extractWindow(ring, TipSide::kLeft, tick_t);
    const TactileWindow wr = extractWindow(ring, TipSide::kRight, tick_t);
    const double depth = pegDepth(setup.state, setup.peg);

    const StreamTickOutput stream =
        classifyStreamTick(wl, wr, depth, tick_t, prev_mode, stream_params);
    prev_mode = stream.mode;
    const std::vector<ContactEvent>& events = stream.events;
    const EdgeDirection direction = stream.direction;

    const RasterF raster = renderVision(setup.state, setup.peg, setup.slot, setup.camera);
    trace.rasters.push_back(quantizeRaster(raster));

    TickRecord rec;
    rec.t_s = tick_t;
    rec.actual = setup.state.ee_pose;
    rec.grasp_wrench = last_wrench;
    rec.depth_mm = depth;
    rec.events = events;

    if (!policy) {
      auto [twist_cmd, next_stage] =
          scriptedExpertStep(stage, events, direction, depth, tick_t, expert_params);
      stage = next_stage;
      base_twist = twist_cmd;
      commanded = setup.state.ee_pose;
      commanded.position += twist_cmd.head<3>() / kObsRateHz;
      commanded.rotation += twist_cmd.tail<3>() / kObsRateHz;
    } else {
      // Assemble the masked observation step for the policy variant.
      ObsStep obs;
      if (usesVision(policy->variant())) obs.vision = raster;
      if (usesTactile(policy->variant())) {
        obs.left = wl.samples;
        obs.right = wr.samples;
      }
      if (usesWrench(policy->variant())) {
        Vec6 w;
        w << last_wrench.force, last_wrench.torque;
        for (int c = 0; c < 3; ++c) w[c] += force_noise * force_rng.gaussian();
        obs.wrench = w;
      }
      obs.proprio = setup.state.ee_pose;
      if (obs_filled == 0) {
        obs_steps[0] = obs;
        obs_steps[1] = obs;
        obs_filled = 1;
      } else {
        obs_steps[0] = obs_steps[1];
        obs_steps[1] = obs;
        obs_filled = 2;
      }

      // 12 Hz decision rate: a fresh chunk every second observation tick.
      if (obs_filled == 2 && tick_index % 2 == 0) {
        if (policy_started && !(substeps_since_policy_tick == 291 ||
                                substeps_since_policy_tick == 292))
          throw PolicyError("rate hierarchy violated: " +
                            std::to_string(substeps_since_policy_tick) +
                            " substeps per policy tick");
        substeps_since_policy_tick = 0;
        policy_started = true;
        ObservationBundle bundle;
        bundle.steps[0] = obs_steps[0];
        bundle.steps[1] = obs_steps[1];
        bundle.anchor = anchor;
        const ActionChunk chunk =
            policy->sample(bundle, deriveSeed(proto.seed, 0xac70, static_cast<std::uint64_t>(
                                                                      tick_index)));
        chunk_history.emplace_back(tick_index, chunk);
        if (chunk_history.size() > 20)
          chunk_history.erase(chunk_history.begin(), chunk_history.end() - 20);
      }

      if (!chunk_history.empty() && tick_index > chunk_history.front().first) {
        const Pose6 target =
            temporalEnsemble(chunk_history, tick_index, pol_cfg.ensemble_decay);
        commanded = target;
        Vec3 dv = (target.position - setup.state.ee_pose.position) * kObsRateHz;
        Vec3 dw = (target.rotation - setup.state.ee_pose.rotation) * kObsRateHz;
        const double vmax = 20.0, wmax = 0.5;
        if (dv.norm() > vmax) dv *= vmax / dv.norm();
        if (dw.norm() > wmax) dw *= wmax / dw.norm();
        base_twist.head<3>() = dv;
        base_twist.tail<3>() = dw;
      } else {
        base_twist.setZero();
        commanded = setup.state.ee_pose;
      }
    }

    rec.commanded = commanded;
    rec.stage = stage.stage;
    trace.ticks.push_back(std::move(rec));

    if (depth >= setup.seat_depth_mm) {
      trace.outcome = EpisodeOutcome::kSuccess;
      break;
    }
  }

  trace.duration_s = setup.state.time_s;
  return trace;
}

}  // namespace tactsim
