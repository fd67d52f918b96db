#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace lionxa {

// Reserved label outside [0, C); every loss and metric skips it.
inline constexpr std::int32_t kIgnoreLabel = -1;

struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double remission = 0.0;
};

struct PointCloud {
  std::vector<Point> points;
  std::int64_t frame_id = 0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct LabelArray {
  std::vector<std::int32_t> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
};

struct ClassMapping {
  std::string name;  // dataset the raw ids belong to
  std::vector<std::string> class_names;
  std::map<std::uint32_t, std::int32_t> entries;  // raw id -> class or kIgnoreLabel
  std::map<std::string, std::uint32_t> raw_ids;   // raw name -> raw id

  int num_classes() const { return static_cast<int>(class_names.size()); }
  // Unknown raw ids map to kIgnoreLabel.
  std::int32_t map(std::uint32_t raw_id) const;
  std::int32_t map_name(std::string_view raw_name) const;
  std::int32_t class_index(std::string_view class_name) const;
};

struct SensorSpec {
  std::vector<double> beam_elevations;  // radians, strictly descending
  int horizontal_resolution = 0;        // columns per revolution
  double fov_up = 0.0;                  // radians
  double fov_down = 0.0;                // radians
  double max_range = 0.0;               // meters

  int beams() const { return static_cast<int>(beam_elevations.size()); }
  // Evenly spaced beams over [fov_down, fov_up].
  static SensorSpec uniform(int beams, int columns, double fov_up_deg, double fov_down_deg,
                            double max_range);
  // Throws ConfigError when the elevations are not strictly descending or
  // fall outside the field of view.
  void validate() const;
};

bool operator==(const SensorSpec& a, const SensorSpec& b);

// ---- binary record formats ----

// Little-endian float32 quadruples (x, y, z, remission).
PointCloud parse_scan(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_scan(const PointCloud& cloud);

// Little-endian uint32 per point; low 16 bits carry the semantic id.
LabelArray parse_labels(std::span<const std::uint8_t> bytes, const ClassMapping& mapping,
                        std::size_t n);
std::vector<std::uint32_t> parse_raw_labels(std::span<const std::uint8_t> bytes, std::size_t n);
std::vector<std::uint8_t> write_raw_labels(std::span<const std::uint32_t> raw);

LabelArray map_labels(std::span<const std::uint32_t> raw, const ClassMapping& mapping);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

// ---- class mapping configs ----

// Raw semantic ids of the datasets known to the mapping loader.
const std::map<std::string, std::uint32_t>& dataset_raw_ids(std::string_view dataset);

// Parses a mapping config and returns the mapping for one dataset section.
ClassMapping load_class_mapping(std::string_view config_text, std::string_view dataset);
// Dataset sections present in a mapping config, in file order.
std::vector<std::string> mapping_datasets(std::string_view config_text);

// Names of the shipped mapping configs and their text.
std::vector<std::string> builtin_mapping_names();
std::string_view builtin_mapping_text(std::string_view name);

// ---- procedural scenes ----

template <typename T>
struct Range {
  T lo{};
  T hi{};
};

struct GroundPatch {
  double x_min, x_max, y_min, y_max, z;
};

struct Box {
  double cx, cy, yaw;
  double length, width, height;
  double z_base;
};

struct Cylinder {
  double cx, cy, radius, z_min, z_max;
};

using Shape3D = std::variant<GroundPatch, Box, Cylinder>;

struct Primitive {
  Shape3D shape;
  std::uint32_t raw_label = 0;
};

struct Scene {
  std::vector<Primitive> primitives;
  double remission_scale = 1.0;
};

bool operator==(const Scene& a, const Scene& b);

struct SceneParams {
  bool street = true;  // false: a single ground plane and nothing else
  double ground_z = -1.73;
  double extent = 40.0;  // half-size of the ground area, meters
  std::uint32_t ground_label = 40;  // raw id of the plane when street == false
  Range<double> road_width{6.0, 9.0};
  Range<double> sidewalk_width{1.5, 3.0};
  double curb_height = 0.12;
  Range<int> cars{3, 8};
  Range<double> car_length{3.8, 4.8};
  Range<double> car_width{1.6, 1.9};
  Range<double> car_height{1.4, 1.7};
  Range<int> buildings{4, 8};
  Range<double> building_length{8.0, 20.0};
  Range<double> building_depth{6.0, 12.0};
  Range<double> building_height{5.0, 14.0};
  Range<int> poles{3, 8};
  Range<double> pole_radius{0.08, 0.15};
  Range<double> pole_height{4.0, 7.0};
  Range<int> trees{3, 8};
  Range<double> trunk_radius{0.15, 0.3};
  Range<double> crown_radius{1.2, 2.5};
  Range<int> fences{0, 3};
  double remission_scale = 1.0;
};

bool operator==(const SceneParams& a, const SceneParams& b);

Scene synth_scene(std::uint64_t seed, const SceneParams& params);

// Signed distance from p to a primitive's surface (zero on the surface).
double surface_distance(const Primitive& prim, double x, double y, double z);

// Ray from the origin along unit direction d; nearest hit distance if any.
std::optional<double> intersect(const Primitive& prim, double dx, double dy, double dz);

struct SimulatedScan {
  PointCloud cloud;
  std::vector<std::uint32_t> raw_labels;
};

// One ray per (beam, column); nearest hit within max_range becomes a point.
SimulatedScan simulate_raw(const Scene& scene, const SensorSpec& sensor, std::uint64_t seed);
std::pair<PointCloud, LabelArray> simulate_scan(const Scene& scene, const SensorSpec& sensor,
                                                std::uint64_t seed, const ClassMapping& mapping);

// Mean remission of a raw class before jitter and domain scaling.
double class_remission(std::uint32_t raw_label);

// Column of azimuth `az` (radians) in a W-column image; azimuth 0 maps to W/2.
int azimuth_to_column(double az, int width);
double column_to_azimuth(int col, int width);

}  // namespace lionxa
