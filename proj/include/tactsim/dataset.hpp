// Single-file episode container ("TSDS"): little-endian, self-describing
// JSON header, per-episode chunked streams. IMU lanes store the 16-bit
// register codes and rasters the 8-bit shade codes, so a round trip is
// bit-exact and the on-disk stream honors the sensor data-rate budget.
#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tactsim/controller.hpp"

namespace tactsim {

struct Dataset {
  std::uint32_t version{1};
  std::uint64_t config_hash{0};
  std::vector<EpisodeTrace> episodes;

  // Episodes matching a protocol cell; delta_mm < 0 matches any offset.
  std::vector<const EpisodeTrace*> select(const std::string& object, double delta_mm,
                                          EdgeDirection direction) const {
    std::vector<const EpisodeTrace*> out;
    for (const auto& e : episodes) {
      if (e.meta.object != object) continue;
      if (delta_mm >= 0.0 && std::abs(e.meta.delta_mm - delta_mm) > 1e-9) continue;
      if (e.meta.direction != direction) continue;
      out.push_back(&e);
    }
    return out;
  }
};

namespace detail {

inline void writeU16(std::ostream& out, std::uint16_t v) {
  out.write(reinterpret_cast<const char*>(&v), 2);
}
inline void writeU32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}
inline void writeU64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}
inline void writeF64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}
inline void writeStr(std::ostream& out, const std::string& s) {
  writeU64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void writeVec3(std::ostream& out, const Vec3& v) {
  for (int i = 0; i < 3; ++i) writeF64(out, v[i]);
}
inline void writePose(std::ostream& out, const Pose6& p) {
  writeVec3(out, p.position);
  writeVec3(out, p.rotation);
}
inline void writeWrench(std::ostream& out, const Wrench6& w) {
  writeVec3(out, w.force);
  writeVec3(out, w.torque);
  writeU32(out, static_cast<std::uint32_t>(w.frame));
}

inline std::uint16_t readU16(std::istream& in) {
  std::uint16_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 2);
  return v;
}
inline std::uint32_t readU32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline std::uint64_t readU64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
inline double readF64(std::istream& in) {
  double v = 0.0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
inline std::string readStr(std::istream& in) {
  const std::uint64_t n = readU64(in);
  if (n > (1ull << 32)) throw DataFormatError("implausible string length in dataset");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}
inline Vec3 readVec3(std::istream& in) {
  Vec3 v;
  for (int i = 0; i < 3; ++i) v[i] = readF64(in);
  return v;
}
inline Pose6 readPose(std::istream& in) {
  Pose6 p;
  p.position = readVec3(in);
  p.rotation = readVec3(in);
  return p;
}
inline Wrench6 readWrench(std::istream& in) {
  Wrench6 w;
  w.force = readVec3(in);
  w.torque = readVec3(in);
  w.frame = static_cast<WrenchFrame>(readU32(in));
  return w;
}

inline void writeImuLane(std::ostream& out, const std::vector<ImuSample>& lane) {
  writeU64(out, lane.size());
  for (const auto& s : lane) {
    writeF64(out, s.t_s);
    for (int i = 0; i < 3; ++i) writeU16(out, static_cast<std::uint16_t>(s.acc_q[i]));
    for (int i = 0; i < 3; ++i) writeU16(out, static_cast<std::uint16_t>(s.gyro_q[i]));
  }
}

inline std::vector<ImuSample> readImuLane(std::istream& in, TipSide tip) {
  std::vector<ImuSample> lane(readU64(in));
  for (auto& s : lane) {
    s.t_s = readF64(in);
    for (int i = 0; i < 3; ++i) s.acc_q[i] = static_cast<std::int16_t>(readU16(in));
    for (int i = 0; i < 3; ++i) s.gyro_q[i] = static_cast<std::int16_t>(readU16(in));
    s.tip = tip;
  }
  return lane;
}

}  // namespace detail

inline void writeEpisode(std::ostream& out, const EpisodeTrace& e) {
  using namespace detail;
  writeStr(out, e.meta.object);
  writeF64(out, e.meta.delta_mm);
  writeU32(out, static_cast<std::uint32_t>(e.meta.direction));
  writeU64(out, e.meta.seed);
  writeStr(out, e.meta.agent);
  writeU32(out, static_cast<std::uint32_t>(e.outcome));
  writeF64(out, e.duration_s);

  writeU64(out, e.ticks.size());
  for (const auto& t : e.ticks) {
    writeF64(out, t.t_s);
    writePose(out, t.commanded);
    writePose(out, t.actual);
    writeWrench(out, t.grasp_wrench);
    writeF64(out, t.depth_mm);
    writeU32(out, static_cast<std::uint32_t>(t.stage));
    writeU64(out, t.events.size());
    for (const auto& ev : t.events) {
      writeU32(out, static_cast<std::uint32_t>(ev.kind));
      writeF64(out, ev.t_s);
      writeF64(out, ev.confidence);
    }
  }

  writeImuLane(out, e.imu_left);
  writeImuLane(out, e.imu_right);

  writeU64(out, e.rasters.size());
  for (const auto& r : e.rasters)
    out.write(reinterpret_cast<const char*>(r.data()),
              static_cast<std::streamsize>(kRasterSide * kRasterSide));
}

inline EpisodeTrace readEpisode(std::istream& in) {
  using namespace detail;
  EpisodeTrace e;
  e.meta.object = readStr(in);
  e.meta.delta_mm = readF64(in);
  e.meta.direction = static_cast<EdgeDirection>(readU32(in));
  e.meta.seed = readU64(in);
  e.meta.agent = readStr(in);
  e.outcome = static_cast<EpisodeOutcome>(readU32(in));
  e.duration_s = readF64(in);

  e.ticks.resize(readU64(in));
  for (auto& t : e.ticks) {
    t.t_s = readF64(in);
    t.commanded = readPose(in);
    t.actual = readPose(in);
    t.grasp_wrench = readWrench(in);
    t.depth_mm = readF64(in);
    t.stage = static_cast<Stage>(readU32(in));
    t.events.resize(readU64(in));
    for (auto& ev : t.events) {
      ev.kind = static_cast<ContactEventKind>(readU32(in));
      ev.t_s = readF64(in);
      ev.confidence = readF64(in);
    }
  }

  e.imu_left = readImuLane(in, TipSide::kLeft);
  e.imu_right = readImuLane(in, TipSide::kRight);

  e.rasters.resize(readU64(in));
  for (auto& r : e.rasters)
    in.read(reinterpret_cast<char*>(r.data()),
            static_cast<std::streamsize>(kRasterSide * kRasterSide));
  if (!in) throw DataFormatError("truncated episode record");
  return e;
}

inline void saveDataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot open dataset for writing: " + path);
  const char magic[4] = {'T', 'S', 'D', 'S'};
  out.write(magic, 4);
  detail::writeU32(out, ds.version);
  detail::writeU64(out, ds.config_hash);
  Json header;
  header["objects"] = catalogNames();
  header["raster_side"] = kRasterSide;
  header["imu_rate_hz"] = kImuRateHz;
  header["obs_rate_hz"] = kObsRateHz;
  detail::writeStr(out, header.dump());
  detail::writeU64(out, ds.episodes.size());
  for (const auto& e : ds.episodes) writeEpisode(out, e);
  if (!out) throw DataFormatError("dataset write failed: " + path);
}

inline Dataset loadDataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open dataset: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TSDS", 4) != 0)
    throw DataFormatError("not a dataset file: " + path);
  Dataset ds;
  ds.version = detail::readU32(in);
  if (ds.version != 1) throw DataFormatError("unsupported dataset version");
  ds.config_hash = detail::readU64(in);
  detail::readStr(in);  // header JSON, informational
  ds.episodes.resize(detail::readU64(in));
  for (auto& e : ds.episodes) e = readEpisode(in);
  return ds;
}

}  // namespace tactsim
