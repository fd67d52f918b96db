#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "lionxa/lidar_io.hpp"

namespace lionxa {

enum RangeChannel : int { kRange = 0, kRemission = 1, kNormalX = 2, kNormalY = 3, kNormalZ = 4 };
inline constexpr int kRangeChannels = 5;
inline constexpr double kInvalidRange = -1.0;

// Dense H x W x 5 image, stored channel-major ([5][H][W]).
struct RangeImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;
  std::vector<std::uint8_t> valid;
  std::vector<std::int64_t> point_index;  // representative point per pixel, or -1
  // Reconstructed position of the representative point, [3][H][W]. Used for
  // normal estimation only; never fed to the networks.
  std::vector<double> xyz;

  static RangeImage empty(int height, int width);

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  std::size_t flat(int row, int col) const { return static_cast<std::size_t>(row) * width + col; }
  double& at(int channel, int row, int col) { return data[channel * pixels() + flat(row, col)]; }
  double at(int channel, int row, int col) const {
    return data[channel * pixels() + flat(row, col)];
  }
  bool is_valid(int row, int col) const { return valid[flat(row, col)] != 0; }
};

struct PixelIndexMap {
  int height = 0;
  int width = 0;
  std::vector<std::int64_t> point_to_pixel;  // flat pixel (row * W + col), or -1 if unprojected
  std::vector<std::vector<std::int64_t>> pixel_to_points;

  std::pair<int, int> pixel_of(std::size_t point) const {
    const auto f = point_to_pixel.at(point);
    if (f < 0) return {-1, -1};
    return {static_cast<int>(f / width), static_cast<int>(f % width)};
  }
  std::vector<std::int64_t> unprojected() const;
};

struct ChannelStats {
  std::array<double, kRangeChannels> mean{};
  std::array<double, kRangeChannels> stddev{};
};

// Row of the beam whose elevation is nearest to `elevation`.
int nearest_beam(const SensorSpec& sensor, double elevation);

// Spherical projection. Pixel keeps its minimum-range point (ties: lowest
// index). Points outside the vertical field of view stay unprojected.
std::pair<RangeImage, PixelIndexMap> project(const PointCloud& cloud, const SensorSpec& sensor,
                                             int width);

RangeImage compute_normals(RangeImage img);

RangeImage normalize_channels(RangeImage img, const ChannelStats& stats);
ChannelStats compute_channel_stats(std::span<const RangeImage> images);

std::pair<RangeImage, PixelIndexMap> cutout_at(const RangeImage& img, const PixelIndexMap& map,
                                               int first_col, int width);
std::pair<RangeImage, PixelIndexMap> cutout(const RangeImage& img, const PixelIndexMap& map,
                                            int width, std::mt19937_64& rng);

struct DropoutSpec {
  int max_patches = 0;
  int max_height = 0;
  int max_width = 0;
};

std::pair<RangeImage, PixelIndexMap> flip_horizontal(const RangeImage& img,
                                                     const PixelIndexMap& map);
std::pair<RangeImage, PixelIndexMap> augment2d(const RangeImage& img, const PixelIndexMap& map,
                                               std::mt19937_64& rng, double p_flip,
                                               const DropoutSpec& dropout);

// Gathers per-pixel features onto points. `features` is channel-major
// [F][H][W]; result is [N][F] row-major with zeros for unprojected points.
std::vector<double> lift_features(std::span<const double> features, std::size_t channels,
                                  const PixelIndexMap& map);

// Per-pixel class of the representative point; kIgnoreLabel on invalid pixels.
std::vector<std::int32_t> label_image(const RangeImage& img, const LabelArray& labels);

// Flat tensor file: 16-byte header ("LXRI", H, W, C as uint32 LE) then
// float64 LE values, channel-major.
std::vector<std::uint8_t> serialize_range_image(const RangeImage& img);
RangeImage deserialize_range_image(std::span<const std::uint8_t> bytes);

}  // namespace lionxa
