#include "lionxa/range_projection.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>

#include "lionxa/error.hpp"

namespace lionxa {

RangeImage RangeImage::empty(int height, int width) {
  RangeImage img;
  img.height = height;
  img.width = width;
  const std::size_t n = img.pixels();
  img.data.assign(kRangeChannels * n, 0.0);
  std::fill(img.data.begin(), img.data.begin() + static_cast<long>(n), kInvalidRange);
  img.valid.assign(n, 0);
  img.point_index.assign(n, -1);
  img.xyz.assign(3 * n, 0.0);
  return img;
}

std::vector<std::int64_t> PixelIndexMap::unprojected() const {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < point_to_pixel.size(); ++i) {
    if (point_to_pixel[i] < 0) out.push_back(static_cast<std::int64_t>(i));
  }
  return out;
}

int nearest_beam(const SensorSpec& sensor, double elevation) {
  const auto& el = sensor.beam_elevations;
  auto it = std::lower_bound(el.begin(), el.end(), elevation, std::greater<double>());
  if (it == el.begin()) return 0;
  if (it == el.end()) return static_cast<int>(el.size()) - 1;
  const auto hi = static_cast<int>(it - el.begin());
  const int lo = hi - 1;
  // el[lo] > elevation >= el[hi]
  return (el[lo] - elevation) <= (elevation - el[hi]) ? lo : hi;
}

std::pair<RangeImage, PixelIndexMap> project(const PointCloud& cloud, const SensorSpec& sensor,
                                             int width) {
  if (cloud.empty()) throw Error(ErrorCode::kEmptyCloud, "cannot project an empty cloud");
  if (width < 1) throw Error(ErrorCode::kShapeError, "projection width must be >= 1");
  const int h = sensor.beams();
  RangeImage img = RangeImage::empty(h, width);
  PixelIndexMap map;
  map.height = h;
  map.width = width;
  map.point_to_pixel.assign(cloud.size(), -1);
  map.pixel_to_points.assign(img.pixels(), {});
  const std::size_t n_pix = img.pixels();

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    const double r = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    if (!(r > 0.0)) continue;
    const double elevation = std::asin(std::clamp(p.z / r, -1.0, 1.0));
    if (elevation > sensor.fov_up || elevation < sensor.fov_down) continue;
    const int row = nearest_beam(sensor, elevation);
    const int col = azimuth_to_column(std::atan2(p.y, p.x), width);
    const std::size_t f = img.flat(row, col);
    map.point_to_pixel[i] = static_cast<std::int64_t>(f);
    map.pixel_to_points[f].push_back(static_cast<std::int64_t>(i));
    if (!img.valid[f] || r < img.data[f]) {
      img.valid[f] = 1;
      img.point_index[f] = static_cast<std::int64_t>(i);
      img.data[kRange * n_pix + f] = r;
      img.data[kRemission * n_pix + f] = p.remission;
      img.xyz[f] = p.x;
      img.xyz[n_pix + f] = p.y;
      img.xyz[2 * n_pix + f] = p.z;
    }
  }
  return {std::move(img), std::move(map)};
}

RangeImage compute_normals(RangeImage img) {
  const int h = img.height, w = img.width;
  const std::size_t n = img.pixels();
  std::vector<double> normals(3 * n, 0.0);
  auto pos = [&](int r, int c, int k) { return img.xyz[k * n + img.flat(r, c)]; };
  for (int r = 1; r + 1 < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!img.is_valid(r, c)) continue;
      const int cl = (c + w - 1) % w, cr = (c + 1) % w;
      if (w < 3 || !img.is_valid(r, cl) || !img.is_valid(r, cr) || !img.is_valid(r - 1, c) ||
          !img.is_valid(r + 1, c)) {
        continue;
      }
      double a[3], b[3];
      for (int k = 0; k < 3; ++k) {
        a[k] = pos(r, cr, k) - pos(r, cl, k);
        b[k] = pos(r + 1, c, k) - pos(r - 1, c, k);
      }
      double nx = a[1] * b[2] - a[2] * b[1];
      double ny = a[2] * b[0] - a[0] * b[2];
      double nz = a[0] * b[1] - a[1] * b[0];
      const double len = std::sqrt(nx * nx + ny * ny + nz * nz);
      if (!(len > 1e-12)) continue;
      nx /= len;
      ny /= len;
      nz /= len;
      // Face the sensor at the origin.
      if (nx * pos(r, c, 0) + ny * pos(r, c, 1) + nz * pos(r, c, 2) > 0.0) {
        nx = -nx;
        ny = -ny;
        nz = -nz;
      }
      const std::size_t f = img.flat(r, c);
      normals[f] = nx;
      normals[n + f] = ny;
      normals[2 * n + f] = nz;
    }
  }
  std::copy(normals.begin(), normals.end(), img.data.begin() + static_cast<long>(kNormalX * n));
  return img;
}

RangeImage normalize_channels(RangeImage img, const ChannelStats& stats) {
  for (int ch = 0; ch < kRangeChannels; ++ch) {
    if (!(stats.stddev[ch] > 0.0)) {
      throw Error(ErrorCode::kDegenerateStats,
                  "channel " + std::to_string(ch) + " has non-positive standard deviation");
    }
  }
  const std::size_t n = img.pixels();
  for (int ch = 0; ch < kRangeChannels; ++ch) {
    double* d = img.data.data() + ch * n;
    for (std::size_t f = 0; f < n; ++f) {
      if (img.valid[f]) d[f] = (d[f] - stats.mean[ch]) / stats.stddev[ch];
    }
  }
  return img;
}

ChannelStats compute_channel_stats(std::span<const RangeImage> images) {
  ChannelStats stats;
  std::array<double, kRangeChannels> sum{}, sum_sq{};
  double count = 0.0;
  for (const auto& img : images) {
    const std::size_t n = img.pixels();
    for (std::size_t f = 0; f < n; ++f) {
      if (!img.valid[f]) continue;
      count += 1.0;
      for (int ch = 0; ch < kRangeChannels; ++ch) {
        const double v = img.data[ch * n + f];
        sum[ch] += v;
        sum_sq[ch] += v * v;
      }
    }
  }
  if (count == 0.0) throw Error(ErrorCode::kDegenerateStats, "no valid pixels");
  for (int ch = 0; ch < kRangeChannels; ++ch) {
    stats.mean[ch] = sum[ch] / count;
    stats.stddev[ch] = std::sqrt(std::max(0.0, sum_sq[ch] / count - stats.mean[ch] * stats.mean[ch]));
  }
  return stats;
}

namespace {

// Rebuilds image and map under a column permutation/selection. new_col[c]
// is the destination column of source column c, or -1 to drop it.
std::pair<RangeImage, PixelIndexMap> remap_columns(const RangeImage& img, const PixelIndexMap& map,
                                                   const std::vector<int>& new_col, int new_width) {
  RangeImage out = RangeImage::empty(img.height, new_width);
  const std::size_t n_src = img.pixels();
  const std::size_t n_dst = out.pixels();
  PixelIndexMap m;
  m.height = img.height;
  m.width = new_width;
  m.point_to_pixel.assign(map.point_to_pixel.size(), -1);
  m.pixel_to_points.assign(n_dst, {});
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const int nc = new_col[c];
      if (nc < 0) continue;
      const std::size_t fs = img.flat(r, c);
      const std::size_t fd = out.flat(r, nc);
      for (int ch = 0; ch < kRangeChannels; ++ch) out.data[ch * n_dst + fd] = img.data[ch * n_src + fs];
      for (int k = 0; k < 3; ++k) out.xyz[k * n_dst + fd] = img.xyz[k * n_src + fs];
      out.valid[fd] = img.valid[fs];
      out.point_index[fd] = img.point_index[fs];
      if (fs < map.pixel_to_points.size()) {
        m.pixel_to_points[fd] = map.pixel_to_points[fs];
        for (auto p : map.pixel_to_points[fs]) m.point_to_pixel[p] = static_cast<std::int64_t>(fd);
      }
    }
  }
  return {std::move(out), std::move(m)};
}

}  // namespace

std::pair<RangeImage, PixelIndexMap> cutout_at(const RangeImage& img, const PixelIndexMap& map,
                                               int first_col, int width) {
  if (width < 1 || width > img.width) {
    throw Error(ErrorCode::kInvalidCutout, "cutout width " + std::to_string(width) +
                                               " outside [1, " + std::to_string(img.width) + "]");
  }
  std::vector<int> new_col(img.width, -1);
  for (int j = 0; j < width; ++j) new_col[(first_col + j) % img.width] = j;
  return remap_columns(img, map, new_col, width);
}

std::pair<RangeImage, PixelIndexMap> cutout(const RangeImage& img, const PixelIndexMap& map,
                                            int width, std::mt19937_64& rng) {
  if (width < 1 || width > img.width) {
    throw Error(ErrorCode::kInvalidCutout, "cutout width " + std::to_string(width) +
                                               " outside [1, " + std::to_string(img.width) + "]");
  }
  const int first = std::uniform_int_distribution<int>(0, img.width - 1)(rng);
  return cutout_at(img, map, first, width);
}

std::pair<RangeImage, PixelIndexMap> flip_horizontal(const RangeImage& img,
                                                     const PixelIndexMap& map) {
  std::vector<int> new_col(img.width);
  for (int c = 0; c < img.width; ++c) new_col[c] = img.width - 1 - c;
  return remap_columns(img, map, new_col, img.width);
}

std::pair<RangeImage, PixelIndexMap> augment2d(const RangeImage& img, const PixelIndexMap& map,
                                               std::mt19937_64& rng, double p_flip,
                                               const DropoutSpec& dropout) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::pair<RangeImage, PixelIndexMap> out{img, map};
  if (u01(rng) < p_flip) out = flip_horizontal(img, map);
  if (dropout.max_patches <= 0 || dropout.max_height <= 0 || dropout.max_width <= 0) return out;
  RangeImage& im = out.first;
  const std::size_t n = im.pixels();
  const int patches = std::uniform_int_distribution<int>(0, dropout.max_patches)(rng);
  for (int k = 0; k < patches; ++k) {
    const int ph = std::uniform_int_distribution<int>(1, std::min(dropout.max_height, im.height))(rng);
    const int pw = std::uniform_int_distribution<int>(1, std::min(dropout.max_width, im.width))(rng);
    const int r0 = std::uniform_int_distribution<int>(0, im.height - ph)(rng);
    const int c0 = std::uniform_int_distribution<int>(0, im.width - pw)(rng);
    for (int r = r0; r < r0 + ph; ++r) {
      for (int c = c0; c < c0 + pw; ++c) {
        const std::size_t f = im.flat(r, c);
        im.valid[f] = 0;
        im.data[kRange * n + f] = kInvalidRange;
        for (int ch = 1; ch < kRangeChannels; ++ch) im.data[ch * n + f] = 0.0;
      }
    }
  }
  return out;
}

std::vector<double> lift_features(std::span<const double> features, std::size_t channels,
                                  const PixelIndexMap& map) {
  const std::size_t n_pix = static_cast<std::size_t>(map.height) * map.width;
  if (features.size() != channels * n_pix) {
    throw Error(ErrorCode::kShapeError,
                "feature map holds " + std::to_string(features.size()) + " values, expected " +
                    std::to_string(channels) + "x" + std::to_string(map.height) + "x" +
                    std::to_string(map.width));
  }
  std::vector<double> out(map.point_to_pixel.size() * channels, 0.0);
  for (std::size_t i = 0; i < map.point_to_pixel.size(); ++i) {
    const auto f = map.point_to_pixel[i];
    if (f < 0) continue;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      out[i * channels + ch] = features[ch * n_pix + static_cast<std::size_t>(f)];
    }
  }
  return out;
}

std::vector<std::int32_t> label_image(const RangeImage& img, const LabelArray& labels) {
  std::vector<std::int32_t> out(img.pixels(), kIgnoreLabel);
  for (std::size_t f = 0; f < out.size(); ++f) {
    if (img.valid[f] && img.point_index[f] >= 0) {
      out[f] = labels.labels.at(static_cast<std::size_t>(img.point_index[f]));
    }
  }
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>((v >> (8 * k)) & 0xFF));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> serialize_range_image(const RangeImage& img) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + img.data.size() * 8);
  for (char c : {'L', 'X', 'R', 'I'}) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, static_cast<std::uint32_t>(img.height));
  put_u32(out, static_cast<std::uint32_t>(img.width));
  put_u32(out, kRangeChannels);
  for (double v : img.data) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>((bits >> (8 * k)) & 0xFF));
  }
  return out;
}

RangeImage deserialize_range_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || bytes[0] != 'L' || bytes[1] != 'X' || bytes[2] != 'R' || bytes[3] != 'I') {
    throw Error(ErrorCode::kMalformedScan, "not a range image file");
  }
  const int h = static_cast<int>(get_u32(bytes.data() + 4));
  const int w = static_cast<int>(get_u32(bytes.data() + 8));
  const auto c = get_u32(bytes.data() + 12);
  RangeImage img = RangeImage::empty(h, w);
  if (c != kRangeChannels || bytes.size() != 16 + img.data.size() * 8) {
    throw Error(ErrorCode::kMalformedScan, "range image payload size mismatch");
  }
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[16 + 8 * i + k]) << (8 * k);
    img.data[i] = std::bit_cast<double>(bits);
  }
  for (std::size_t f = 0; f < img.pixels(); ++f) img.valid[f] = img.data[f] != kInvalidRange;
  return img;
}

}  // namespace lionxa
