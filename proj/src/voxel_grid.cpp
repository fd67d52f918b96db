#include "lionxa/voxel_grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <unordered_map>

#include "lionxa/error.hpp"

namespace lionxa {

namespace {

struct KeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = 1469598103934665603ull;
    for (auto v : k) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

VoxelKey voxel_key(const Point& p, double voxel_size) {
  return {static_cast<std::int64_t>(std::floor(p.x / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.y / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.z / voxel_size))};
}

VoxelSet voxelize(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
    throw Error(ErrorCode::kInvalidVoxelSize, "voxel size must be positive");
  }
  VoxelSet set;
  set.voxel_size = voxel_size;
  set.point_to_voxel.resize(cloud.size());
  std::unordered_map<VoxelKey, std::int64_t, KeyHash> index;
  index.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const VoxelKey key = voxel_key(cloud.points[i], voxel_size);
    auto [it, inserted] = index.try_emplace(key, static_cast<std::int64_t>(set.keys.size()));
    if (inserted) {
      set.keys.push_back(key);
      set.representative.push_back(static_cast<std::int64_t>(i));
    }
    set.point_to_voxel[i] = it->second;
  }
  return set;
}

std::vector<std::vector<std::int64_t>> VoxelSet::face_neighbors() const {
  std::unordered_map<VoxelKey, std::int64_t, KeyHash> index;
  index.reserve(keys.size());
  for (std::size_t v = 0; v < keys.size(); ++v) index.emplace(keys[v], static_cast<std::int64_t>(v));
  std::vector<std::vector<std::int64_t>> out(keys.size());
  static constexpr int kOffsets[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                         {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (std::size_t v = 0; v < keys.size(); ++v) {
    for (const auto& o : kOffsets) {
      const VoxelKey k{keys[v][0] + o[0], keys[v][1] + o[1], keys[v][2] + o[2]};
      if (auto it = index.find(k); it != index.end()) out[v].push_back(it->second);
    }
    std::sort(out[v].begin(), out[v].end());
  }
  return out;
}

PointCloud augment3d(const PointCloud& cloud, std::mt19937_64& rng, const Augment3dSpec& spec) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double angle = (2.0 * u01(rng) - 1.0) * spec.max_rotation;
  const double tx = (2.0 * u01(rng) - 1.0) * spec.max_translation;
  const double ty = (2.0 * u01(rng) - 1.0) * spec.max_translation;
  const double fx = u01(rng) < spec.p_flip_x ? -1.0 : 1.0;
  const double fy = u01(rng) < spec.p_flip_y ? -1.0 : 1.0;
  const double c = std::cos(angle), s = std::sin(angle);
  PointCloud out = cloud;
  for (auto& p : out.points) {
    const double x = fx * p.x, y = fy * p.y;
    p.x = c * x - s * y + tx;
    p.y = s * x + c * y + ty;
  }
  return out;
}

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xFF));
}

}  // namespace

std::vector<std::uint8_t> serialize_voxel_set(const VoxelSet& voxels) {
  std::vector<std::uint8_t> out{'L', 'X', 'V', 'X', 1, 0, 0, 0};
  put_u64(out, std::bit_cast<std::uint64_t>(voxels.voxel_size));
  put_u64(out, voxels.size());
  for (std::size_t v = 0; v < voxels.size(); ++v) {
    for (auto k : voxels.keys[v]) put_u64(out, static_cast<std::uint64_t>(k));
    put_u64(out, static_cast<std::uint64_t>(voxels.representative[v]));
  }
  put_u64(out, voxels.point_to_voxel.size());
  for (auto p : voxels.point_to_voxel) put_u64(out, static_cast<std::uint64_t>(p));
  return out;
}

VoxelSet deserialize_voxel_set(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto u = [&](int width) {
    if (pos + static_cast<std::size_t>(width) > bytes.size()) {
      throw Error(ErrorCode::kMalformedScan, "truncated voxel set file");
    }
    std::uint64_t v = 0;
    for (int k = 0; k < width; ++k) v |= static_cast<std::uint64_t>(bytes[pos + k]) << (8 * k);
    pos += static_cast<std::size_t>(width);
    return v;
  };
  if (bytes.size() < 8 || bytes[0] != 'L' || bytes[1] != 'X' || bytes[2] != 'V' || bytes[3] != 'X') {
    throw Error(ErrorCode::kMalformedScan, "not a voxel set file");
  }
  pos = 4;
  if (u(4) != 1) throw Error(ErrorCode::kMalformedScan, "unsupported voxel set version");
  VoxelSet out;
  out.voxel_size = std::bit_cast<double>(u(8));
  const auto count = u(8);
  if (count > bytes.size()) throw Error(ErrorCode::kMalformedScan, "voxel count exceeds file size");
  for (std::uint64_t v = 0; v < count; ++v) {
    VoxelKey key;
    for (auto& k : key) k = static_cast<std::int64_t>(u(8));
    out.keys.push_back(key);
    out.representative.push_back(static_cast<std::int64_t>(u(8)));
  }
  const auto n = u(8);
  if (n > bytes.size()) throw Error(ErrorCode::kMalformedScan, "point count exceeds file size");
  for (std::uint64_t i = 0; i < n; ++i) out.point_to_voxel.push_back(static_cast<std::int64_t>(u(8)));
  if (pos != bytes.size()) throw Error(ErrorCode::kMalformedScan, "trailing bytes in voxel set file");
  return out;
}

}  // namespace lionxa
