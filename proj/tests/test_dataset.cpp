#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "tactsim/dataset.hpp"

using namespace tactsim;

namespace {

std::string fileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/tactsim_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

Dataset makeDataset() {
  Config cfg;
  Dataset ds;
  ds.config_hash = cfg.hash();
  EpisodeProtocol proto;
  proto.object = "prism40";
  proto.timeout_s = 8.0;
  proto.delta_mm = 2.0;
  proto.direction = EdgeDirection::kPlusX;
  proto.seed = 11;
  ds.episodes.push_back(runEpisode(cfg, proto));
  proto.direction = EdgeDirection::kMinusY;
  proto.delta_mm = 1.0;
  proto.seed = 12;
  ds.episodes.push_back(runEpisode(cfg, proto));
  return ds;
}

}  // namespace

TEST_CASE("dataset round trip reproduces every episode bit-exactly") {
  const Dataset ds = makeDataset();
  TempFile f("roundtrip.tsds");
  saveDataset(ds, f.path);
  const Dataset back = loadDataset(f.path);

  CHECK(back.config_hash == ds.config_hash);
  REQUIRE(back.episodes.size() == ds.episodes.size());
  for (std::size_t k = 0; k < ds.episodes.size(); ++k) {
    const auto& a = ds.episodes[k];
    const auto& b = back.episodes[k];
    CHECK(b.meta.object == a.meta.object);
    CHECK(b.meta.delta_mm == a.meta.delta_mm);
    CHECK(static_cast<int>(b.meta.direction) == static_cast<int>(a.meta.direction));
    CHECK(b.meta.seed == a.meta.seed);
    CHECK(b.meta.agent == a.meta.agent);
    CHECK(static_cast<int>(b.outcome) == static_cast<int>(a.outcome));
    CHECK(b.duration_s == a.duration_s);

    REQUIRE(b.ticks.size() == a.ticks.size());
    for (std::size_t i = 0; i < a.ticks.size(); ++i) {
      CHECK(b.ticks[i].t_s == a.ticks[i].t_s);
      CHECK((b.ticks[i].commanded.position - a.ticks[i].commanded.position).norm() == 0.0);
      CHECK((b.ticks[i].actual.position - a.ticks[i].actual.position).norm() == 0.0);
      CHECK((b.ticks[i].actual.rotation - a.ticks[i].actual.rotation).norm() == 0.0);
      CHECK((b.ticks[i].grasp_wrench.force - a.ticks[i].grasp_wrench.force).norm() == 0.0);
      CHECK((b.ticks[i].grasp_wrench.torque - a.ticks[i].grasp_wrench.torque).norm() == 0.0);
      CHECK(b.ticks[i].depth_mm == a.ticks[i].depth_mm);
      CHECK(static_cast<int>(b.ticks[i].stage) == static_cast<int>(a.ticks[i].stage));
      REQUIRE(b.ticks[i].events.size() == a.ticks[i].events.size());
      for (std::size_t j = 0; j < a.ticks[i].events.size(); ++j) {
        CHECK(static_cast<int>(b.ticks[i].events[j].kind) ==
              static_cast<int>(a.ticks[i].events[j].kind));
        CHECK(b.ticks[i].events[j].t_s == a.ticks[i].events[j].t_s);
        CHECK(b.ticks[i].events[j].confidence == a.ticks[i].events[j].confidence);
      }
    }

    REQUIRE(b.imu_left.size() == a.imu_left.size());
    REQUIRE(b.imu_right.size() == a.imu_right.size());
    for (std::size_t i = 0; i < a.imu_left.size(); ++i) {
      CHECK(b.imu_left[i].t_s == a.imu_left[i].t_s);
      CHECK(std::memcmp(b.imu_left[i].acc_q, a.imu_left[i].acc_q,
                        sizeof(a.imu_left[i].acc_q)) == 0);
      CHECK(std::memcmp(b.imu_right[i].gyro_q, a.imu_right[i].gyro_q,
                        sizeof(a.imu_right[i].gyro_q)) == 0);
    }
    CHECK(b.imu_left.front().tip == TipSide::kLeft);
    CHECK(b.imu_right.front().tip == TipSide::kRight);

    REQUIRE(b.rasters.size() == a.rasters.size());
    for (std::size_t i = 0; i < a.rasters.size(); ++i)
      CHECK(std::memcmp(b.rasters[i].data(), a.rasters[i].data(),
                        kRasterSide * kRasterSide) == 0);
  }
}

TEST_CASE("writing the same dataset twice yields identical bytes") {
  const Dataset ds = makeDataset();
  TempFile f1("bytes_a.tsds"), f2("bytes_b.tsds");
  saveDataset(ds, f1.path);
  saveDataset(ds, f2.path);
  CHECK(fileBytes(f1.path) == fileBytes(f2.path));

  // A load-save cycle must also be byte-stable.
  TempFile f3("bytes_c.tsds");
  saveDataset(loadDataset(f1.path), f3.path);
  CHECK(fileBytes(f1.path) == fileBytes(f3.path));
}

TEST_CASE("empty dataset has a valid self-describing header") {
  Dataset ds;
  ds.config_hash = 42;
  TempFile f("empty.tsds");
  saveDataset(ds, f.path);
  const Dataset back = loadDataset(f.path);
  CHECK(back.config_hash == 42);
  CHECK(back.episodes.empty());
}

TEST_CASE("selection filters by object, offset, and direction") {
  const Dataset ds = makeDataset();
  CHECK(ds.select("prism40", 2.0, EdgeDirection::kPlusX).size() == 1);
  CHECK(ds.select("prism40", 1.0, EdgeDirection::kPlusX).empty());
  CHECK(ds.select("prism40", -1.0, EdgeDirection::kMinusY).size() == 1);
  CHECK(ds.select("hex30", -1.0, EdgeDirection::kPlusX).empty());
}

TEST_CASE("loading a non-dataset file fails cleanly") {
  TempFile f("garbage.bin");
  {
    std::ofstream out(f.path, std::ios::binary);
    out << "not a dataset at all";
  }
  CHECK_THROWS_AS(loadDataset(f.path), DataFormatError);
  CHECK_THROWS_AS(loadDataset("/nonexistent/nowhere.tsds"), DataFormatError);
}
