// Experiment harness: trace replay through the stream pipeline,
// training-pair extraction from stored demonstrations, scripted-expert
// demo collection, protocol-grid evaluation, and byte-stable report
// emission.
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "tactsim/dataset.hpp"

namespace tactsim {

// --- trace replay ---------------------------------------------------------

struct ReplayTick {
  double t_s{0.0};
  TactileWindow left, right;
  StreamTickOutput stream;
};

// Re-runs the stream pipeline (windowing, onset detection, direction and
// mode classification) over the stored IMU lanes of a trace, pushing
// samples in the same order as the live loop so results match it.
inline std::vector<ReplayTick> replayTrace(const Config& cfg, const EpisodeTrace& e) {
  if (e.imu_left.size() != e.imu_right.size())
    throw DataFormatError("trace IMU lanes are unbalanced");
  const StreamClassifierParams params = StreamClassifierParams::fromConfig(cfg);

  RingBuffer ring;
  std::vector<ReplayTick> out;
  out.reserve(e.ticks.size());
  std::size_t cursor = 0;
  ContactMode prev_mode = ContactMode::kNone;
  for (const auto& tick : e.ticks) {
    // Push substeps up to and including the one that crossed the tick
    // boundary, mirroring the live execution order.
    while (cursor < e.imu_left.size()) {
      ring.push(e.imu_left[cursor]);
      ring.push(e.imu_right[cursor]);
      const double t = e.imu_left[cursor].t_s;
      ++cursor;
      if (t + 1e-12 >= tick.t_s) break;
    }
    ReplayTick rt;
    rt.t_s = tick.t_s;
    rt.left = extractWindow(ring, TipSide::kLeft, tick.t_s);
    rt.right = extractWindow(ring, TipSide::kRight, tick.t_s);
    rt.stream = classifyStreamTick(rt.left, rt.right, tick.depth_mm, tick.t_s, prev_mode, params);
    prev_mode = rt.stream.mode;
    out.push_back(std::move(rt));
  }
  return out;
}

// --- training pairs from demonstrations ------------------------------------

// Slices one stored episode into (observation bundle, normalized action
// chunk) pairs at the policy decision stride. Windows are rebuilt from
// the stored IMU lanes; actions are the expert's commanded poses for the
// next 16 ticks, padded with the final command near the episode end.
inline std::vector<std::pair<ObservationBundle, ChunkMatrix>> slicePairs(
    const Config& cfg, const EpisodeTrace& e, const PolicyConfig& pol) {
  std::vector<std::pair<ObservationBundle, ChunkMatrix>> pairs;
  if (e.ticks.size() < 2) return pairs;
  const auto replay = replayTrace(cfg, e);
  Rng wrench_rng(deriveSeed(e.meta.seed, 0x51ce));

  // Until the first tick no command has been applied, so the recorded
  // first-tick pose equals the episode anchor used live.
  const Pose6 anchor = e.ticks.front().actual;
  const int last = static_cast<int>(e.ticks.size()) - 1;
  const int stride = std::max(1, pol.slice_stride);

  auto makeObs = [&](int idx) {
    ObsStep obs;
    obs.vision = dequantizeRaster(e.rasters[static_cast<std::size_t>(idx)]);
    obs.left = replay[static_cast<std::size_t>(idx)].left.samples;
    obs.right = replay[static_cast<std::size_t>(idx)].right.samples;
    obs.proprio = e.ticks[static_cast<std::size_t>(idx)].actual;
    Vec6 w;
    w << e.ticks[static_cast<std::size_t>(idx)].grasp_wrench.force,
        e.ticks[static_cast<std::size_t>(idx)].grasp_wrench.torque;
    for (int c = 0; c < 3; ++c) w[c] += pol.force_noise_sigma_n * wrench_rng.gaussian();
    obs.wrench = w;
    return obs;
  };

  for (int idx = 1; idx <= last; idx += stride) {
    ObservationBundle bundle;
    bundle.steps[0] = makeObs(idx - 1);
    bundle.steps[1] = makeObs(idx);
    bundle.anchor = anchor;

    ActionChunk chunk;
    for (int i = 0; i < kChunkSteps; ++i) {
      const int src = std::min(idx + 1 + i, last);
      const Pose6& cmd = e.ticks[static_cast<std::size_t>(src)].commanded;
      chunk.poses.row(i).head<3>() = cmd.position.transpose();
      chunk.poses.row(i).tail<3>() = cmd.rotation.transpose();
    }
    pairs.emplace_back(std::move(bundle),
                       normalizeChunk(chunk, e.ticks[static_cast<std::size_t>(idx)].actual, pol));
  }
  return pairs;
}

inline std::vector<std::pair<ObservationBundle, ChunkMatrix>> slicePairs(
    const Config& cfg, const Dataset& ds, const PolicyConfig& pol) {
  std::vector<std::pair<ObservationBundle, ChunkMatrix>> pairs;
  for (const auto& e : ds.episodes) {
    auto p = slicePairs(cfg, e, pol);
    pairs.insert(pairs.end(), std::make_move_iterator(p.begin()),
                 std::make_move_iterator(p.end()));
  }
  return pairs;
}

// --- demonstration collection -----------------------------------------------

inline const EdgeDirection kAllDirections[4] = {EdgeDirection::kPlusX, EdgeDirection::kMinusX,
                                                EdgeDirection::kPlusY, EdgeDirection::kMinusY};

// Runs the scripted expert over random offsets (uniform over the
// configured range along each quota edge) and keeps only successful
// episodes until the per-edge quota is met. A sustained success rate
// under 50% signals a misconfigured world or controller and aborts.
inline Dataset collectDemos(const Config& cfg, std::uint64_t root_seed) {
  Dataset ds;
  ds.config_hash = cfg.hash();
  const int quota = cfg.get<int>("demos.per_edge");
  const double dmin = cfg.get<double>("demos.delta_min_mm");
  const double dmax = cfg.get<double>("demos.delta_max_mm");
  const std::string object = cfg.get<std::string>("eval.object");
  const double timeout_s = cfg.get<double>("eval.timeout_s");

  int attempts = 0, successes = 0;
  for (int d = 0; d < 4; ++d) {
    int kept = 0;
    for (std::uint64_t attempt = 0; kept < quota; ++attempt) {
      Rng rng(deriveSeed(root_seed, 0xde30, static_cast<std::uint64_t>(d), attempt));
      EpisodeProtocol proto;
      proto.object = object;
      proto.delta_mm = rng.uniform(dmin, dmax);
      proto.direction = kAllDirections[d];
      proto.seed = deriveSeed(root_seed, 0xe915, static_cast<std::uint64_t>(d), attempt);
      proto.timeout_s = timeout_s;
      EpisodeTrace trace = runEpisode(cfg, proto);
      ++attempts;
      if (trace.outcome == EpisodeOutcome::kSuccess) {
        ++successes;
        ++kept;
        ds.episodes.push_back(std::move(trace));
      }
      if (attempts >= std::max(8, 2 * quota) && 2 * successes < attempts)
        throw ConfigError("expert success rate below 50% during demo collection (" +
                          std::to_string(successes) + "/" + std::to_string(attempts) +
                          "); world or controller is misconfigured");
    }
  }
  return ds;
}

// --- protocol-grid evaluation ------------------------------------------------

struct EvalCell {
  std::string object;
  double delta_mm{0.0};
  EdgeDirection direction{EdgeDirection::kPlusX};
  int successes{0};
  int rollouts{0};
};

struct EvalReport {
  std::string policy_id{"expert"};
  std::uint64_t root_seed{0};
  std::vector<EvalCell> cells;  // deterministic order: object, delta, direction

  Json toJson() const {
    Json j;
    j["policy_id"] = policy_id;
    j["root_seed"] = root_seed;
    j["cells"] = Json::array();
    for (const auto& c : cells) {
      Json cj;
      cj["object"] = c.object;
      cj["delta_mm"] = c.delta_mm;
      cj["direction"] = toString(c.direction);
      cj["successes"] = c.successes;
      cj["rollouts"] = c.rollouts;
      j["cells"].push_back(cj);
    }
    return j;
  }

  static EvalReport fromJson(const Json& j) {
    EvalReport r;
    r.policy_id = j.at("policy_id").get<std::string>();
    r.root_seed = j.at("root_seed").get<std::uint64_t>();
    for (const auto& cj : j.at("cells")) {
      EvalCell c;
      c.object = cj.at("object").get<std::string>();
      c.delta_mm = cj.at("delta_mm").get<double>();
      c.direction = parseEdgeDirection(cj.at("direction").get<std::string>());
      c.successes = cj.at("successes").get<int>();
      c.rollouts = cj.at("rollouts").get<int>();
      r.cells.push_back(std::move(c));
    }
    return r;
  }
};

// Executes the full grid (objects x deltas x 4 directions x N rollouts).
// A null policy evaluates the scripted expert. Cells run on a worker
// pool (each worker owns its world instance; the policy is only read);
// aggregation into the report is by fixed cell index, so the result is
// independent of scheduling.
inline EvalReport evaluate(const Config& cfg, const std::vector<std::string>& objects,
                           PolicyNet* policy, std::uint64_t root_seed) {
  const std::vector<double> deltas = cfg.get<std::vector<double>>("eval.deltas_mm");
  const int per_cell = policy ? cfg.get<int>("eval.rollouts_per_direction")
                              : cfg.get<int>("eval.expert_seeds_per_cell");
  const double timeout_s = cfg.get<double>("eval.timeout_s");

  EvalReport report;
  report.policy_id = policy ? toString(policy->variant()) : "expert";
  report.root_seed = root_seed;
  for (const auto& object : objects)
    for (double delta : deltas)
      for (int d = 0; d < 4; ++d)
        report.cells.push_back({object, delta, kAllDirections[d], 0, 0});

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= report.cells.size()) return;
      EvalCell& cell = report.cells[i];
      for (int r = 0; r < per_cell; ++r) {
        EpisodeProtocol proto;
        proto.object = cell.object;
        proto.delta_mm = cell.delta_mm;
        proto.direction = cell.direction;
        proto.seed = deriveSeed(root_seed, fnv1a(cell.object),
                                static_cast<std::uint64_t>(cell.delta_mm * 1000.0) * 8 +
                                    static_cast<std::uint64_t>(cell.direction),
                                static_cast<std::uint64_t>(r));
        proto.timeout_s = timeout_s;
        const EpisodeTrace trace = runEpisode(cfg, proto, policy);
        ++cell.rollouts;
        if (trace.outcome == EpisodeOutcome::kSuccess) ++cell.successes;
      }
    }
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned n_workers =
      static_cast<unsigned>(std::min<std::size_t>(hw, report.cells.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return report;
}

// --- reports -----------------------------------------------------------------

namespace detail {

inline std::string formatFraction(int successes, int rollouts) {
  if (rollouts == 0) return "n/a";  // missing protocol cell, not a zero
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", static_cast<double>(successes) / rollouts);
  return buf;
}

inline std::string formatDelta(double delta_mm) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "delta_%gmm", delta_mm);
  return buf;
}

}  // namespace detail

// Per-policy, per-object success-rate table: one column per offset level
// plus an average column. Fractions are recomputed from the raw
// success/rollout counts; byte-stable given identical inputs.
inline std::string reportCsv(const std::vector<EvalReport>& reports) {
  std::vector<double> deltas;
  for (const auto& rep : reports)
    for (const auto& c : rep.cells)
      if (std::find(deltas.begin(), deltas.end(), c.delta_mm) == deltas.end())
        deltas.push_back(c.delta_mm);
  std::sort(deltas.begin(), deltas.end());

  std::string csv = "policy,object";
  for (double d : deltas) csv += "," + detail::formatDelta(d);
  csv += ",average\n";

  for (const auto& rep : reports) {
    std::vector<std::string> objects;
    for (const auto& c : rep.cells)
      if (std::find(objects.begin(), objects.end(), c.object) == objects.end())
        objects.push_back(c.object);
    for (const auto& object : objects) {
      csv += rep.policy_id + "," + object;
      int total_s = 0, total_r = 0;
      for (double d : deltas) {
        int s = 0, r = 0;
        for (const auto& c : rep.cells)
          if (c.object == object && std::abs(c.delta_mm - d) < 1e-9) {
            s += c.successes;
            r += c.rollouts;
          }
        csv += "," + detail::formatFraction(s, r);
        total_s += s;
        total_r += r;
      }
      csv += "," + detail::formatFraction(total_s, total_r) + "\n";
    }
  }
  return csv;
}

// Raw physical-unit IMU traces of one episode for signal plots: both
// tips' accelerometer and gyro lanes on the shared substep clock.
inline std::string signalTraceCsv(const EpisodeTrace& e) {
  if (e.imu_left.size() != e.imu_right.size())
    throw DataFormatError("trace IMU lanes are unbalanced");
  std::string csv =
      "t_s,left_acc_x_g,left_acc_y_g,left_acc_z_g,left_gyro_x_dps,left_gyro_y_dps,"
      "left_gyro_z_dps,right_acc_x_g,right_acc_y_g,right_acc_z_g,right_gyro_x_dps,"
      "right_gyro_y_dps,right_gyro_z_dps\n";
  char buf[64];
  auto append = [&](double v) {
    std::snprintf(buf, sizeof(buf), ",%.9g", v);
    csv += buf;
  };
  for (std::size_t i = 0; i < e.imu_left.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g", e.imu_left[i].t_s);
    csv += buf;
    const Vec3 la = e.imu_left[i].accG(), lg = e.imu_left[i].gyroDps();
    const Vec3 ra = e.imu_right[i].accG(), rg = e.imu_right[i].gyroDps();
    for (int c = 0; c < 3; ++c) append(la[c]);
    for (int c = 0; c < 3; ++c) append(lg[c]);
    for (int c = 0; c < 3; ++c) append(ra[c]);
    for (int c = 0; c < 3; ++c) append(rg[c]);
    csv += "\n";
  }
  return csv;
}

}  // namespace tactsim
