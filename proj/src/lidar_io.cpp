#include "lionxa/lidar_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "lionxa/detail/builtin_files.hpp"
#include "lionxa/error.hpp"
#include "lionxa/text_util.hpp"

namespace lionxa {

namespace {

std::uint32_t load_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32_le(std::uint32_t v, std::vector<std::uint8_t>& out) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

}  // namespace

// ---------------------------------------------------------------------------
// ClassMapping / SensorSpec

std::int32_t ClassMapping::map(std::uint32_t raw_id) const {
  auto it = entries.find(raw_id);
  return it == entries.end() ? kIgnoreLabel : it->second;
}

std::int32_t ClassMapping::map_name(std::string_view raw_name) const {
  auto it = raw_ids.find(std::string(raw_name));
  return it == raw_ids.end() ? kIgnoreLabel : map(it->second);
}

std::int32_t ClassMapping::class_index(std::string_view class_name) const {
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (class_names[i] == class_name) return static_cast<std::int32_t>(i);
  }
  return kIgnoreLabel;
}

SensorSpec SensorSpec::uniform(int beams, int columns, double fov_up_deg, double fov_down_deg,
                               double max_range) {
  SensorSpec s;
  s.horizontal_resolution = columns;
  s.fov_up = fov_up_deg * std::numbers::pi / 180.0;
  s.fov_down = fov_down_deg * std::numbers::pi / 180.0;
  s.max_range = max_range;
  for (int b = 0; b < beams; ++b) {
    const double t = beams > 1 ? static_cast<double>(b) / (beams - 1) : 0.0;
    s.beam_elevations.push_back(s.fov_up - t * (s.fov_up - s.fov_down));
  }
  return s;
}

void SensorSpec::validate() const {
  if (beam_elevations.empty()) throw Error(ErrorCode::kConfigError, "sensor has no beams");
  if (horizontal_resolution < 1) {
    throw Error(ErrorCode::kConfigError, "horizontal resolution must be >= 1");
  }
  if (!(max_range > 0.0)) throw Error(ErrorCode::kConfigError, "max_range must be positive");
  if (!(fov_up > fov_down)) throw Error(ErrorCode::kConfigError, "fov_up must exceed fov_down");
  for (std::size_t i = 1; i < beam_elevations.size(); ++i) {
    if (!(beam_elevations[i] < beam_elevations[i - 1])) {
      throw Error(ErrorCode::kConfigError, "beam elevations must be strictly descending");
    }
  }
  constexpr double kTol = 1e-9;
  if (beam_elevations.front() > fov_up + kTol || beam_elevations.back() < fov_down - kTol) {
    throw Error(ErrorCode::kConfigError, "beam elevations exceed the field of view");
  }
}

bool operator==(const SensorSpec& a, const SensorSpec& b) {
  return a.beam_elevations == b.beam_elevations &&
         a.horizontal_resolution == b.horizontal_resolution && a.fov_up == b.fov_up &&
         a.fov_down == b.fov_down && a.max_range == b.max_range;
}

// ---------------------------------------------------------------------------
// binary formats

PointCloud parse_scan(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 16 != 0) {
    throw Error(ErrorCode::kMalformedScan,
                "scan length " + std::to_string(bytes.size()) + " is not a multiple of 16");
  }
  PointCloud cloud;
  cloud.points.reserve(bytes.size() / 16);
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    float f[4];
    for (int k = 0; k < 4; ++k) {
      f[k] = std::bit_cast<float>(load_u32_le(bytes.data() + off + 4 * k));
      if (!std::isfinite(f[k])) {
        throw Error(ErrorCode::kMalformedScan,
                    "non-finite value in point " + std::to_string(off / 16));
      }
    }
    cloud.points.push_back({f[0], f[1], f[2], f[3]});
  }
  return cloud;
}

std::vector<std::uint8_t> write_scan(const PointCloud& cloud) {
  std::vector<std::uint8_t> out;
  out.reserve(cloud.size() * 16);
  for (const auto& p : cloud.points) {
    for (double v : {p.x, p.y, p.z, p.remission}) {
      store_u32_le(std::bit_cast<std::uint32_t>(static_cast<float>(v)), out);
    }
  }
  return out;
}

std::vector<std::uint32_t> parse_raw_labels(std::span<const std::uint8_t> bytes, std::size_t n) {
  if (bytes.size() != 4 * n) {
    throw Error(ErrorCode::kLabelCountMismatch, "label file holds " + std::to_string(bytes.size()) +
                                                    " bytes, expected " + std::to_string(4 * n));
  }
  std::vector<std::uint32_t> raw(n);
  for (std::size_t i = 0; i < n; ++i) raw[i] = load_u32_le(bytes.data() + 4 * i) & 0xFFFFu;
  return raw;
}

LabelArray parse_labels(std::span<const std::uint8_t> bytes, const ClassMapping& mapping,
                        std::size_t n) {
  return map_labels(parse_raw_labels(bytes, n), mapping);
}

std::vector<std::uint8_t> write_raw_labels(std::span<const std::uint32_t> raw) {
  std::vector<std::uint8_t> out;
  out.reserve(raw.size() * 4);
  for (auto v : raw) store_u32_le(v, out);
  return out;
}

LabelArray map_labels(std::span<const std::uint32_t> raw, const ClassMapping& mapping) {
  LabelArray out;
  out.num_classes = mapping.num_classes();
  out.labels.reserve(raw.size());
  for (auto r : raw) out.labels.push_back(mapping.map(r & 0xFFFFu));
  return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path);
}

// ---------------------------------------------------------------------------
// mapping configs

const std::map<std::string, std::uint32_t>& dataset_raw_ids(std::string_view dataset) {
  static const std::map<std::string, std::uint32_t> kKitti = {
      {"unlabeled", 0},        {"outlier", 1},
      {"car", 10},             {"bicycle", 11},
      {"bus", 13},             {"motorcycle", 15},
      {"on-rails", 16},        {"truck", 18},
      {"other-vehicle", 20},   {"person", 30},
      {"bicyclist", 31},       {"motorcyclist", 32},
      {"road", 40},            {"parking", 44},
      {"sidewalk", 48},        {"other-ground", 49},
      {"building", 50},        {"fence", 51},
      {"other-structure", 52}, {"lane-marking", 60},
      {"vegetation", 70},      {"trunk", 71},
      {"terrain", 72},         {"pole", 80},
      {"traffic-sign", 81},    {"other-object", 99},
      {"moving-car", 252},     {"moving-bicyclist", 253},
      {"moving-person", 254},  {"moving-motorcyclist", 255},
      {"moving-on-rails", 256}, {"moving-bus", 257},
      {"moving-truck", 258},   {"moving-other-vehicle", 259},
  };
  static const std::map<std::string, std::uint32_t> kNuscenes = {
      {"ignore", 0},         {"barrier", 1},           {"bicycle", 2},
      {"bus", 3},            {"car", 4},               {"construction-vehicle", 5},
      {"motorcycle", 6},     {"pedestrian", 7},        {"traffic-cone", 8},
      {"trailer", 9},        {"truck", 10},            {"driveable-surface", 11},
      {"other-flat", 12},    {"sidewalk", 13},         {"terrain", 14},
      {"manmade", 15},       {"vegetation", 16},
  };
  static const std::map<std::string, std::uint32_t> kPoss = {
      {"unlabeled", 0},       {"1 person", 4},        {"2+ person", 5},
      {"rider", 6},           {"car", 7},             {"trunk", 8},
      {"plants", 9},          {"traffic sign 1", 10}, {"traffic sign 2", 11},
      {"traffic sign 3", 12}, {"pole", 13},           {"trashcan", 14},
      {"building", 15},       {"cone/stone", 16},     {"fence", 17},
      {"bike", 21},           {"ground", 22},
  };
  static const std::map<std::string, std::uint32_t> kEmpty;
  if (dataset == "semantickitti") return kKitti;
  if (dataset == "nuscenes-lidarseg") return kNuscenes;
  if (dataset == "semanticposs") return kPoss;
  return kEmpty;
}

namespace {

struct MappingSections {
  std::vector<std::string> classes;
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> datasets;
  std::map<std::string, std::map<std::string, std::uint32_t>> ids;
};

MappingSections parse_mapping_sections(std::string_view text) {
  MappingSections out;
  enum class Where { kNone, kClasses, kDataset, kIds } where = Where::kNone;
  std::vector<std::pair<std::size_t, std::string>> indexed_classes;
  bool any_index = false;
  std::string ids_dataset;
  std::size_t line_no = 0;
  for (const auto& raw_line : text::split_lines(text)) {
    ++line_no;
    const std::string line = text::trim(text::strip_comment(raw_line));
    if (line.empty()) continue;
    const auto where_msg = [&] { return " (line " + std::to_string(line_no) + ")"; };
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::kInvalidMapping, "bad section" + where_msg());
      const std::string name = text::trim(line.substr(1, line.size() - 2));
      if (name == "classes") {
        where = Where::kClasses;
      } else if (name.rfind("ids ", 0) == 0) {
        where = Where::kIds;
        ids_dataset = text::trim(name.substr(4));
      } else {
        where = Where::kDataset;
        for (const auto& d : out.datasets) {
          if (d.first == name) {
            throw Error(ErrorCode::kDuplicateMapping, "section [" + name + "] repeated");
          }
        }
        out.datasets.push_back({name, {}});
      }
      continue;
    }
    const auto eq = line.find('=');
    switch (where) {
      case Where::kNone:
        throw Error(ErrorCode::kInvalidMapping, "entry outside a section" + where_msg());
      case Where::kClasses:
        if (eq == std::string::npos) {
          indexed_classes.push_back({indexed_classes.size(), line});
        } else {
          any_index = true;
          const std::string idx = text::trim(line.substr(0, eq));
          std::size_t pos = 0;
          std::size_t value = 0;
          try {
            value = std::stoul(idx, &pos);
          } catch (const std::exception&) {
            pos = 0;
          }
          if (pos != idx.size() || idx.empty()) {
            throw Error(ErrorCode::kInvalidMapping, "class index '" + idx + "'" + where_msg());
          }
          indexed_classes.push_back({value, text::trim(line.substr(eq + 1))});
        }
        break;
      case Where::kDataset:
      case Where::kIds: {
        if (eq == std::string::npos) {
          throw Error(ErrorCode::kInvalidMapping, "expected 'raw = target'" + where_msg());
        }
        const std::string lhs = text::trim(line.substr(0, eq));
        const std::string rhs = text::trim(line.substr(eq + 1));
        if (where == Where::kDataset) {
          out.datasets.back().second.push_back({lhs, rhs});
        } else {
          out.ids[ids_dataset][lhs] = static_cast<std::uint32_t>(std::stoul(rhs));
        }
        break;
      }
    }
  }
  // Indices must be a dense 0..C-1 permutation.
  std::vector<std::string> classes(indexed_classes.size());
  std::vector<bool> filled(indexed_classes.size(), false);
  for (const auto& [idx, name] : indexed_classes) {
    if (idx >= classes.size() || filled[idx]) {
      throw Error(ErrorCode::kInvalidMapping,
                  "class indices are not dense: index " + std::to_string(idx) + " for '" + name + "'");
    }
    classes[idx] = name;
    filled[idx] = true;
  }
  (void)any_index;
  std::set<std::string> unique(classes.begin(), classes.end());
  if (unique.size() != classes.size()) {
    throw Error(ErrorCode::kInvalidMapping, "class listed twice in [classes]");
  }
  if (classes.empty()) throw Error(ErrorCode::kInvalidMapping, "no [classes] block");
  out.classes = std::move(classes);
  return out;
}

}  // namespace

std::vector<std::string> mapping_datasets(std::string_view config_text) {
  std::vector<std::string> names;
  for (const auto& d : parse_mapping_sections(config_text).datasets) names.push_back(d.first);
  return names;
}

ClassMapping load_class_mapping(std::string_view config_text, std::string_view dataset) {
  const MappingSections sections = parse_mapping_sections(config_text);
  ClassMapping mapping;
  mapping.name = std::string(dataset);
  mapping.class_names = sections.classes;

  const std::vector<std::pair<std::string, std::string>>* lines = nullptr;
  for (const auto& d : sections.datasets) {
    if (d.first == dataset) lines = &d.second;
  }
  if (!lines) {
    throw Error(ErrorCode::kInvalidMapping, "no section [" + std::string(dataset) + "]");
  }
  std::map<std::string, std::uint32_t> ids = dataset_raw_ids(dataset);
  if (auto it = sections.ids.find(std::string(dataset)); it != sections.ids.end()) {
    for (const auto& [name, id] : it->second) ids[name] = id;
  }

  for (const auto& [raw_name, target] : *lines) {
    auto id_it = ids.find(raw_name);
    if (id_it == ids.end()) {
      throw Error(ErrorCode::kInvalidMapping,
                  "unknown raw class '" + raw_name + "' for dataset " + std::string(dataset));
    }
    if (mapping.raw_ids.count(raw_name) || mapping.entries.count(id_it->second)) {
      throw Error(ErrorCode::kDuplicateMapping, "raw class '" + raw_name + "' mapped twice");
    }
    std::int32_t cls = kIgnoreLabel;
    if (target != "ignore") {
      cls = mapping.class_index(target);
      if (cls == kIgnoreLabel) {
        throw Error(ErrorCode::kInvalidMapping, "target '" + target + "' not in [classes]");
      }
    }
    mapping.raw_ids[raw_name] = id_it->second;
    mapping.entries[id_it->second] = cls;
  }
  return mapping;
}

std::vector<std::string> builtin_mapping_names() {
  std::vector<std::string> names;
  for (const auto& f : detail::builtin_files()) {
    if (f.category == "mappings") names.emplace_back(f.name);
  }
  return names;
}

std::string_view builtin_mapping_text(std::string_view name) {
  for (const auto& f : detail::builtin_files()) {
    if (f.category == "mappings" && f.name == name) return f.text;
  }
  throw Error(ErrorCode::kInvalidMapping, "no built-in mapping '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// scenes

namespace {

constexpr std::uint32_t kRoad = 40;
constexpr std::uint32_t kSidewalk = 48;
constexpr std::uint32_t kTerrain = 72;
constexpr std::uint32_t kCar = 10;
constexpr std::uint32_t kBuilding = 50;
constexpr std::uint32_t kFence = 51;
constexpr std::uint32_t kPole = 80;
constexpr std::uint32_t kTrunk = 71;
constexpr std::uint32_t kVegetation = 70;

void check_size(const Range<double>& r, const char* what) {
  if (!(r.lo > 0.0) || !(r.hi >= r.lo) || !std::isfinite(r.hi)) {
    throw Error(ErrorCode::kInvalidScene, std::string(what) + " range must be positive and ordered");
  }
}

void check_count(const Range<int>& r, const char* what) {
  if (r.lo < 0 || r.hi < r.lo) {
    throw Error(ErrorCode::kInvalidScene, std::string(what) + " count range must be ordered, >= 0");
  }
}

class SceneRng {
 public:
  explicit SceneRng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  double uniform(const Range<double>& r) { return r.lo == r.hi ? r.lo : uniform(r.lo, r.hi); }
  int count(const Range<int>& r) { return std::uniform_int_distribution<int>(r.lo, r.hi)(gen_); }
  bool coin() { return uniform(0.0, 1.0) < 0.5; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace

bool operator==(const Scene& a, const Scene& b) {
  if (a.remission_scale != b.remission_scale || a.primitives.size() != b.primitives.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.primitives.size(); ++i) {
    const auto& pa = a.primitives[i];
    const auto& pb = b.primitives[i];
    if (pa.raw_label != pb.raw_label || pa.shape.index() != pb.shape.index()) return false;
    const bool same = std::visit(
        [&](const auto& sa) {
          using T = std::decay_t<decltype(sa)>;
          const auto& sb = std::get<T>(pb.shape);
          return std::memcmp(&sa, &sb, sizeof(T)) == 0;
        },
        pa.shape);
    if (!same) return false;
  }
  return true;
}

bool operator==(const SceneParams& a, const SceneParams& b) {
  auto eq = [](const auto& x, const auto& y) { return x.lo == y.lo && x.hi == y.hi; };
  return a.street == b.street && a.ground_z == b.ground_z && a.extent == b.extent &&
         a.ground_label == b.ground_label && eq(a.road_width, b.road_width) &&
         eq(a.sidewalk_width, b.sidewalk_width) && a.curb_height == b.curb_height &&
         eq(a.cars, b.cars) && eq(a.car_length, b.car_length) && eq(a.car_width, b.car_width) &&
         eq(a.car_height, b.car_height) && eq(a.buildings, b.buildings) &&
         eq(a.building_length, b.building_length) && eq(a.building_depth, b.building_depth) &&
         eq(a.building_height, b.building_height) && eq(a.poles, b.poles) &&
         eq(a.pole_radius, b.pole_radius) && eq(a.pole_height, b.pole_height) &&
         eq(a.trees, b.trees) && eq(a.trunk_radius, b.trunk_radius) &&
         eq(a.crown_radius, b.crown_radius) && eq(a.fences, b.fences) &&
         a.remission_scale == b.remission_scale;
}

Scene synth_scene(std::uint64_t seed, const SceneParams& params) {
  if (!(params.extent > 0.0)) throw Error(ErrorCode::kInvalidScene, "extent must be positive");
  if (!(params.remission_scale > 0.0)) {
    throw Error(ErrorCode::kInvalidScene, "remission scale must be positive");
  }
  Scene scene;
  scene.remission_scale = params.remission_scale;
  const double e = params.extent;
  const double gz = params.ground_z;
  if (!params.street) {
    scene.primitives.push_back({GroundPatch{-e, e, -e, e, gz}, params.ground_label});
    return scene;
  }

  check_size(params.road_width, "road width");
  check_size(params.sidewalk_width, "sidewalk width");
  check_size(params.car_length, "car length");
  check_size(params.car_width, "car width");
  check_size(params.car_height, "car height");
  check_size(params.building_length, "building length");
  check_size(params.building_depth, "building depth");
  check_size(params.building_height, "building height");
  check_size(params.pole_radius, "pole radius");
  check_size(params.pole_height, "pole height");
  check_size(params.trunk_radius, "trunk radius");
  check_size(params.crown_radius, "crown radius");
  check_count(params.cars, "car");
  check_count(params.buildings, "building");
  check_count(params.poles, "pole");
  check_count(params.trees, "tree");
  check_count(params.fences, "fence");
  if (!(params.curb_height >= 0.0)) throw Error(ErrorCode::kInvalidScene, "negative curb height");

  SceneRng rng(seed);
  const double road_half = 0.5 * rng.uniform(params.road_width);
  const double offset = rng.uniform(-0.3, 0.3) * road_half;
  const double walk = rng.uniform(params.sidewalk_width);
  const double walk_z = gz + params.curb_height;
  const double y_left = offset + road_half;    // road edge, +y side
  const double y_right = offset - road_half;   // road edge, -y side
  auto& prims = scene.primitives;

  prims.push_back({GroundPatch{-e, e, y_right, y_left, gz}, kRoad});
  prims.push_back({GroundPatch{-e, e, y_left, y_left + walk, walk_z}, kSidewalk});
  prims.push_back({GroundPatch{-e, e, y_right - walk, y_right, walk_z}, kSidewalk});
  prims.push_back({GroundPatch{-e, e, y_left + walk, e, gz}, kTerrain});
  prims.push_back({GroundPatch{-e, e, -e, y_right - walk, gz}, kTerrain});

  // side = +1 for the +y side of the street.
  auto outer_edge = [&](int side) { return side > 0 ? y_left + walk : y_right - walk; };

  const int cars = rng.count(params.cars);
  for (int i = 0; i < cars; ++i) {
    const double len = rng.uniform(params.car_length);
    const double wid = rng.uniform(params.car_width);
    const double hgt = rng.uniform(params.car_height);
    const bool left_lane = rng.coin();
    const double lane_y = offset + (left_lane ? 0.5 : -0.5) * road_half;
    double cx = rng.uniform(-0.8 * e, 0.8 * e);
    const double cy = lane_y + rng.uniform(-0.3, 0.3);
    if (std::abs(cx) < 0.5 * len + 2.0 && std::abs(cy) < 0.5 * wid + 1.0) {
      cx += (cx < 0 ? -1.0 : 1.0) * (len + 3.0);
    }
    const double yaw = (left_lane ? 0.0 : std::numbers::pi) + rng.uniform(-0.08, 0.08);
    prims.push_back({Box{cx, cy, yaw, len, wid, hgt, gz}, kCar});
  }

  const int buildings = rng.count(params.buildings);
  for (int i = 0; i < buildings; ++i) {
    const int side = rng.coin() ? 1 : -1;
    const double len = rng.uniform(params.building_length);
    const double depth = rng.uniform(params.building_depth);
    const double hgt = rng.uniform(params.building_height);
    const double setback = rng.uniform(2.0, 7.0);
    const double cx = rng.uniform(-0.9 * e, 0.9 * e);
    const double cy = outer_edge(side) + side * (setback + 0.5 * depth);
    prims.push_back({Box{cx, cy, 0.0, len, depth, hgt, gz}, kBuilding});
  }

  const int poles = rng.count(params.poles);
  for (int i = 0; i < poles; ++i) {
    const int side = rng.coin() ? 1 : -1;
    const double r = rng.uniform(params.pole_radius);
    const double cx = rng.uniform(-0.9 * e, 0.9 * e);
    const double cy = (side > 0 ? y_left : y_right) + side * rng.uniform(0.3, 0.7) * walk;
    prims.push_back({Cylinder{cx, cy, r, walk_z, walk_z + rng.uniform(params.pole_height)}, kPole});
  }

  const int trees = rng.count(params.trees);
  for (int i = 0; i < trees; ++i) {
    const int side = rng.coin() ? 1 : -1;
    const double cx = rng.uniform(-0.9 * e, 0.9 * e);
    const double cy = outer_edge(side) + side * rng.uniform(0.8, 2.0);
    const double tr = rng.uniform(params.trunk_radius);
    const double trunk_top = gz + rng.uniform(2.0, 3.0);
    const double cr = rng.uniform(params.crown_radius);
    prims.push_back({Cylinder{cx, cy, tr, gz, trunk_top}, kTrunk});
    prims.push_back({Cylinder{cx, cy, cr, trunk_top - 0.2, trunk_top + rng.uniform(2.0, 3.5)},
                     kVegetation});
  }

  const int fences = rng.count(params.fences);
  for (int i = 0; i < fences; ++i) {
    const int side = rng.coin() ? 1 : -1;
    const double len = rng.uniform(5.0, 15.0);
    const double cx = rng.uniform(-0.8 * e, 0.8 * e);
    const double cy = outer_edge(side) + side * 0.4;
    prims.push_back({Box{cx, cy, 0.0, len, 0.1, rng.uniform(1.0, 1.6), gz}, kFence});
  }
  return scene;
}

double class_remission(std::uint32_t raw_label) {
  switch (raw_label) {
    case kRoad: return 0.18;
    case kSidewalk: return 0.32;
    case kTerrain: return 0.46;
    case kCar: return 0.85;
    case kBuilding: return 0.55;
    case kFence: return 0.38;
    case kPole: return 0.72;
    case kTrunk: return 0.42;
    case kVegetation: return 0.62;
    default: return 0.5;
  }
}

// ---------------------------------------------------------------------------
// geometry

namespace {

constexpr double kHitEps = 1e-9;

struct Local {
  double x, y, z;
};

Local to_box_frame(const Box& b, double x, double y, double z) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double px = x - b.cx, py = y - b.cy;
  return {c * px + s * py, -s * px + c * py, z - (b.z_base + 0.5 * b.height)};
}

}  // namespace

double surface_distance(const Primitive& prim, double x, double y, double z) {
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GroundPatch>) {
          const double ox = std::max({s.x_min - x, 0.0, x - s.x_max});
          const double oy = std::max({s.y_min - y, 0.0, y - s.y_max});
          return std::sqrt(ox * ox + oy * oy + (z - s.z) * (z - s.z));
        } else if constexpr (std::is_same_v<T, Box>) {
          const Local p = to_box_frame(s, x, y, z);
          const double qx = std::abs(p.x) - 0.5 * s.length;
          const double qy = std::abs(p.y) - 0.5 * s.width;
          const double qz = std::abs(p.z) - 0.5 * s.height;
          const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0), oz = std::max(qz, 0.0);
          return std::sqrt(ox * ox + oy * oy + oz * oz) + std::min(std::max({qx, qy, qz}), 0.0);
        } else {
          const double zc = 0.5 * (s.z_min + s.z_max);
          const double dr = std::hypot(x - s.cx, y - s.cy) - s.radius;
          const double dz = std::abs(z - zc) - 0.5 * (s.z_max - s.z_min);
          const double ox = std::max(dr, 0.0), oz = std::max(dz, 0.0);
          return std::min(std::max(dr, dz), 0.0) + std::sqrt(ox * ox + oz * oz);
        }
      },
      prim.shape);
}

std::optional<double> intersect(const Primitive& prim, double dx, double dy, double dz) {
  return std::visit(
      [&](const auto& s) -> std::optional<double> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GroundPatch>) {
          if (std::abs(dz) < 1e-12) return std::nullopt;
          const double t = s.z / dz;
          if (t <= kHitEps) return std::nullopt;
          const double x = t * dx, y = t * dy;
          if (x < s.x_min || x > s.x_max || y < s.y_min || y > s.y_max) return std::nullopt;
          return t;
        } else if constexpr (std::is_same_v<T, Box>) {
          const double c = std::cos(s.yaw), sn = std::sin(s.yaw);
          const Local o = to_box_frame(s, 0.0, 0.0, 0.0);
          const double d[3] = {c * dx + sn * dy, -sn * dx + c * dy, dz};
          const double org[3] = {o.x, o.y, o.z};
          const double half[3] = {0.5 * s.length, 0.5 * s.width, 0.5 * s.height};
          double t0 = -std::numeric_limits<double>::infinity();
          double t1 = std::numeric_limits<double>::infinity();
          for (int a = 0; a < 3; ++a) {
            if (std::abs(d[a]) < 1e-15) {
              if (org[a] < -half[a] || org[a] > half[a]) return std::nullopt;
              continue;
            }
            double ta = (-half[a] - org[a]) / d[a];
            double tb = (half[a] - org[a]) / d[a];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
          }
          if (t1 < t0 || t0 <= kHitEps) return std::nullopt;
          return t0;
        } else {
          std::optional<double> best;
          auto consider = [&](double t) {
            if (t > kHitEps && (!best || t < *best)) best = t;
          };
          const double a = dx * dx + dy * dy;
          if (a > 1e-15) {
            const double b = -2.0 * (s.cx * dx + s.cy * dy);
            const double cc = s.cx * s.cx + s.cy * s.cy - s.radius * s.radius;
            const double disc = b * b - 4.0 * a * cc;
            if (disc >= 0.0 && cc > 0.0) {
              const double t = (-b - std::sqrt(disc)) / (2.0 * a);
              const double z = t * dz;
              if (z >= s.z_min && z <= s.z_max) consider(t);
            }
          }
          if (std::abs(dz) > 1e-12) {
            for (double zc : {s.z_min, s.z_max}) {
              const double t = zc / dz;
              const double x = t * dx - s.cx, y = t * dy - s.cy;
              if (x * x + y * y <= s.radius * s.radius) consider(t);
            }
          }
          return best;
        }
      },
      prim.shape);
}

int azimuth_to_column(double az, int width) {
  const double u = 0.5 * (1.0 - az / std::numbers::pi) * width;
  long col = static_cast<long>(std::floor(u));
  col %= width;
  if (col < 0) col += width;
  return static_cast<int>(col);
}

double column_to_azimuth(int col, int width) {
  return std::numbers::pi * (1.0 - 2.0 * (col + 0.5) / width);
}

SimulatedScan simulate_raw(const Scene& scene, const SensorSpec& sensor, std::uint64_t seed) {
  if (sensor.beams() < 2) throw Error(ErrorCode::kConfigError, "sensor needs at least 2 beams");
  sensor.validate();
  SimulatedScan out;
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> jitter(0.0, 0.04);
  const int w = sensor.horizontal_resolution;
  std::vector<std::pair<double, double>> az(w);
  for (int c = 0; c < w; ++c) {
    const double a = column_to_azimuth(c, w);
    az[c] = {std::cos(a), std::sin(a)};
  }
  for (double el : sensor.beam_elevations) {
    const double ce = std::cos(el), se = std::sin(el);
    for (int c = 0; c < w; ++c) {
      const double dx = ce * az[c].first, dy = ce * az[c].second, dz = se;
      double best = sensor.max_range;
      const Primitive* hit = nullptr;
      for (const auto& prim : scene.primitives) {
        if (auto t = intersect(prim, dx, dy, dz); t && *t <= best) {
          if (!hit || *t < best) {
            best = *t;
            hit = &prim;
          }
        }
      }
      if (!hit) continue;
      const double rem = std::clamp(
          scene.remission_scale * class_remission(hit->raw_label) + jitter(gen), 0.0, 1.0);
      out.cloud.points.push_back({best * dx, best * dy, best * dz, rem});
      out.raw_labels.push_back(hit->raw_label);
    }
  }
  return out;
}

std::pair<PointCloud, LabelArray> simulate_scan(const Scene& scene, const SensorSpec& sensor,
                                                std::uint64_t seed, const ClassMapping& mapping) {
  SimulatedScan raw = simulate_raw(scene, sensor, seed);
  LabelArray labels = map_labels(raw.raw_labels, mapping);
  return {std::move(raw.cloud), std::move(labels)};
}

}  // namespace lionxa
