#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <numbers>
#include <set>

#include "lionxa/error.hpp"
#include "lionxa/lidar_io.hpp"

using namespace lionxa;

namespace {

// Independent little-endian writer for float32 quadruples.
std::vector<std::uint8_t> encode_points(const std::vector<std::array<float, 4>>& pts) {
  std::vector<std::uint8_t> out;
  for (const auto& p : pts) {
    for (float f : p) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_u32(const std::vector<std::uint32_t>& v) {
  std::vector<std::uint8_t> out;
  for (auto x : v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(x >> (8 * b)));
  }
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIoError;
}

ClassMapping poss_kitti() { return load_class_mapping(builtin_mapping_text("kitti_poss"), "semantickitti"); }

}  // namespace

TEST(ParseScan, EmptyBytesGiveEmptyCloud) {
  EXPECT_EQ(parse_scan({}).size(), 0u);
}

TEST(ParseScan, SinglePointRoundTrip) {
  const auto bytes = encode_points({{1.0f, 2.0f, 3.0f, 0.5f}});
  ASSERT_EQ(bytes.size(), 16u);
  const PointCloud c = parse_scan(bytes);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.points[0].x, 1.0);
  EXPECT_EQ(c.points[0].y, 2.0);
  EXPECT_EQ(c.points[0].z, 3.0);
  EXPECT_EQ(c.points[0].remission, 0.5);
  EXPECT_EQ(write_scan(c), bytes);
}

TEST(ParseScan, MisalignedLengthIsMalformed) {
  const std::vector<std::uint8_t> bytes(17, 0);
  EXPECT_EQ(code_of([&] { parse_scan(bytes); }), ErrorCode::kMalformedScan);
}

TEST(ParseLabels, BicycleMapsToBike) {
  const ClassMapping m = poss_kitti();
  const std::uint32_t id = m.raw_ids.at("bicycle");
  const LabelArray l = parse_labels(encode_u32({id}), m, 1);
  EXPECT_EQ(l.labels[0], m.class_index("bike"));
}

TEST(ParseLabels, OtherStructureIsIgnored) {
  const ClassMapping m = poss_kitti();
  const LabelArray l = parse_labels(encode_u32({m.raw_ids.at("other-structure")}), m, 1);
  EXPECT_EQ(l.labels[0], kIgnoreLabel);
}

TEST(ParseLabels, InstanceBitsAreDropped) {
  const ClassMapping m = poss_kitti();
  const std::uint32_t id = m.raw_ids.at("car") | (7u << 16);
  EXPECT_EQ(parse_labels(encode_u32({id}), m, 1).labels[0], m.class_index("car"));
}

TEST(ParseLabels, CountMismatch) {
  const std::vector<std::uint8_t> bytes(8, 0);
  EXPECT_EQ(code_of([&] { parse_labels(bytes, poss_kitti(), 3); }), ErrorCode::kLabelCountMismatch);
}

TEST(ClassMapping, ParkingIsDriveableSurface) {
  const ClassMapping m = load_class_mapping(builtin_mapping_text("kitti_nuscenes"), "semantickitti");
  EXPECT_EQ(m.map_name("parking"), m.class_index("driveable-surface"));
}

TEST(ClassMapping, PossHasTwelveClasses) {
  EXPECT_EQ(poss_kitti().num_classes(), 12);
}

TEST(ClassMapping, DuplicateEntryRejected) {
  const std::string text = "[classes]\nvehicle\n\n[semantickitti]\ncar = vehicle\ncar = vehicle\n";
  EXPECT_EQ(code_of([&] { load_class_mapping(text, "semantickitti"); }), ErrorCode::kDuplicateMapping);
}

TEST(ClassMapping, UnknownTargetClassRejected) {
  const std::string text = "[classes]\nvehicle\n\n[semantickitti]\ncar = spaceship\n";
  EXPECT_THROW(load_class_mapping(text, "semantickitti"), Error);
}

TEST(SynthScene, SameSeedSameScene) {
  EXPECT_EQ(synth_scene(11, SceneParams{}), synth_scene(11, SceneParams{}));
  EXPECT_FALSE(synth_scene(11, SceneParams{}) == synth_scene(12, SceneParams{}));
}

TEST(SynthScene, GroundOnlyHasOnePrimitive) {
  SceneParams p;
  p.street = false;
  EXPECT_EQ(synth_scene(3, p).primitives.size(), 1u);
}

TEST(SynthScene, ZeroWidthBoxRejected) {
  SceneParams p;
  p.car_width = {0.0, 0.0};
  EXPECT_EQ(code_of([&] { synth_scene(1, p); }), ErrorCode::kInvalidScene);
}

TEST(SimulateScan, PlaneOnlySceneIsAllGround) {
  SceneParams p;
  p.street = false;
  p.ground_label = 40;  // road
  const ClassMapping m = poss_kitti();
  const auto [cloud, labels] =
      simulate_scan(synth_scene(2, p), SensorSpec::uniform(16, 256, 2.0, -24.8, 80.0), 5, m);
  ASSERT_GT(cloud.size(), 0u);
  for (auto y : labels.labels) EXPECT_EQ(y, m.class_index("ground"));
}

TEST(SimulateScan, AtMost64ElevationsFor64Beams) {
  SceneParams p;
  p.street = false;
  const SimulatedScan s = simulate_raw(synth_scene(2, p), SensorSpec::uniform(64, 512, 2.0, -24.8, 120.0), 1);
  std::set<long> elevations;
  for (const auto& q : s.cloud.points) {
    const double el = std::atan2(q.z, std::hypot(q.x, q.y));
    elevations.insert(std::lround(el * 1e6));
  }
  EXPECT_LE(elevations.size(), 64u);
  EXPECT_GT(elevations.size(), 0u);
}

TEST(SimulateScan, PointCountMatchesAnalyticPlaneHits) {
  SceneParams p;
  p.street = false;
  p.ground_z = -1.8;
  p.extent = 30.0;
  const SensorSpec sensor = SensorSpec::uniform(32, 360, 10.0, -30.0, 50.0);
  const SimulatedScan s = simulate_raw(synth_scene(4, p), sensor, 9);
  std::size_t expected = 0;
  for (double el : sensor.beam_elevations) {
    if (el >= 0) continue;
    const double t = p.ground_z / std::sin(el);
    if (t > sensor.max_range) continue;
    for (int c = 0; c < sensor.horizontal_resolution; ++c) {
      const double az = std::numbers::pi * (1.0 - 2.0 * (c + 0.5) / sensor.horizontal_resolution);
      const double x = t * std::cos(el) * std::cos(az), y = t * std::cos(el) * std::sin(az);
      if (std::abs(x) <= p.extent && std::abs(y) <= p.extent) ++expected;
    }
  }
  EXPECT_EQ(s.cloud.size(), expected);
}

TEST(SimulateScan, Deterministic) {
  const Scene scene = synth_scene(8, SceneParams{});
  const SensorSpec sensor = SensorSpec::uniform(16, 256, 2.0, -24.8, 80.0);
  EXPECT_EQ(write_scan(simulate_raw(scene, sensor, 3).cloud), write_scan(simulate_raw(scene, sensor, 3).cloud));
}

TEST(SensorSpec, UnorderedElevationsRejected) {
  SensorSpec s = SensorSpec::uniform(4, 64, 2.0, -20.0, 50.0);
  std::swap(s.beam_elevations[0], s.beam_elevations[1]);
  EXPECT_THROW(s.validate(), Error);
}
