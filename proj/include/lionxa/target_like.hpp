#pragma once

#include <vector>

#include "lionxa/lidar_io.hpp"
#include "lionxa/range_projection.hpp"

namespace lionxa {

struct TargetLikeScan {
  PointCloud cloud;
  LabelArray labels;
  std::int64_t source_frame = 0;
  std::vector<std::int64_t> source_index;  // index of each kept point in the source scan
};

// Source rows nearest to some target beam elevation; ascending, unique.
std::vector<int> retained_source_rows(const SensorSpec& source, const SensorSpec& target);

// Drops every point whose nearest source beam is not retained.
TargetLikeScan resample_beams(const PointCloud& cloud, const LabelArray& labels,
                              const SensorSpec& source, const SensorSpec& target);

// Nearest-column width resampling: output column j reads source column
// floor(j * W / target_width).
RangeImage align_dims(const RangeImage& img, int target_height, int target_width);

}  // namespace lionxa
