#include "lionxa/target_like.hpp"

#include <algorithm>
#include <cmath>

#include "lionxa/error.hpp"

namespace lionxa {

std::vector<int> retained_source_rows(const SensorSpec& source, const SensorSpec& target) {
  if (target.beams() > source.beams()) {
    throw Error(ErrorCode::kUnsupportedUpsampling,
                "target has " + std::to_string(target.beams()) + " beams, source only " +
                    std::to_string(source.beams()));
  }
  std::vector<int> rows;
  for (double el : target.beam_elevations) rows.push_back(nearest_beam(source, el));
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

TargetLikeScan resample_beams(const PointCloud& cloud, const LabelArray& labels,
                              const SensorSpec& source, const SensorSpec& target) {
  if (labels.size() != cloud.size()) {
    throw Error(ErrorCode::kLabelCountMismatch, "labels do not match the cloud");
  }
  const std::vector<int> rows = retained_source_rows(source, target);
  std::vector<std::uint8_t> keep_row(source.beams(), 0);
  for (int r : rows) keep_row[r] = 1;

  TargetLikeScan out;
  out.source_frame = cloud.frame_id;
  out.cloud.frame_id = cloud.frame_id;
  out.labels.num_classes = labels.num_classes;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    const double r = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    if (!(r > 0.0)) continue;
    const int row = nearest_beam(source, std::asin(std::clamp(p.z / r, -1.0, 1.0)));
    if (!keep_row[row]) continue;
    out.cloud.points.push_back(p);
    out.labels.labels.push_back(labels.labels[i]);
    out.source_index.push_back(static_cast<std::int64_t>(i));
  }
  return out;
}

RangeImage align_dims(const RangeImage& img, int target_height, int target_width) {
  if (img.height != target_height) {
    throw Error(ErrorCode::kHeightMismatch, "image height " + std::to_string(img.height) +
                                                " != target height " + std::to_string(target_height));
  }
  if (target_width < 1) throw Error(ErrorCode::kShapeError, "target width must be >= 1");
  RangeImage out = RangeImage::empty(img.height, target_width);
  const std::size_t ns = img.pixels(), nd = out.pixels();
  for (int r = 0; r < img.height; ++r) {
    for (int j = 0; j < target_width; ++j) {
      const int c = static_cast<int>((static_cast<long>(j) * img.width) / target_width);
      const std::size_t fs = img.flat(r, c), fd = out.flat(r, j);
      for (int ch = 0; ch < kRangeChannels; ++ch) out.data[ch * nd + fd] = img.data[ch * ns + fs];
      for (int k = 0; k < 3; ++k) out.xyz[k * nd + fd] = img.xyz[k * ns + fs];
      out.valid[fd] = img.valid[fs];
      out.point_index[fd] = img.point_index[fs];
    }
  }
  return out;
}

}  // namespace lionxa
