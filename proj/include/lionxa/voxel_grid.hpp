#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lionxa/lidar_io.hpp"

namespace lionxa {

using VoxelKey = std::array<std::int64_t, 3>;

struct VoxelSet {
  double voxel_size = 0.05;
  std::vector<VoxelKey> keys;                 // in order of first appearance
  std::vector<std::int64_t> representative;   // lowest point index per voxel
  std::vector<std::int64_t> point_to_voxel;   // length N

  std::size_t size() const { return keys.size(); }
  bool empty() const { return keys.empty(); }
  // For each voxel, the indices of its occupied 6-neighbours (ascending).
  std::vector<std::vector<std::int64_t>> face_neighbors() const;
};

VoxelKey voxel_key(const Point& p, double voxel_size);

VoxelSet voxelize(const PointCloud& cloud, double voxel_size = 0.05);

struct Augment3dSpec {
  double max_rotation = 0.0;     // radians, symmetric about 0, vertical axis
  double max_translation = 0.0;  // meters per horizontal axis
  double p_flip_x = 0.0;
  double p_flip_y = 0.0;
};

// Binary file: "LXVX", uint32 version, float64 voxel size, uint64 voxel
// count, per voxel three int64 key components and the int64 representative,
// then uint64 point count and int64 point_to_voxel. Little-endian.
std::vector<std::uint8_t> serialize_voxel_set(const VoxelSet& voxels);
VoxelSet deserialize_voxel_set(std::span<const std::uint8_t> bytes);

// Rigid transform of the coordinates; remission untouched.
PointCloud augment3d(const PointCloud& cloud, std::mt19937_64& rng, const Augment3dSpec& spec);

}  // namespace lionxa
