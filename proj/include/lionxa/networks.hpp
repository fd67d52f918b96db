#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lionxa/lidar_io.hpp"
#include "lionxa/range_projection.hpp"
#include "lionxa/tensor.hpp"
#include "lionxa/voxel_grid.hpp"

namespace lionxa {

struct NamedParameter {
  std::string name;
  ad::Tensor tensor;
};

// Ordered, named parameter registry shared by optimizers and checkpoints.
class ParameterSet {
 public:
  ad::Tensor add(std::string name, ad::Shape shape, std::vector<double> values);

  std::vector<NamedParameter>& items() { return items_; }
  const std::vector<NamedParameter>& items() const { return items_; }
  std::vector<ad::Tensor> tensors() const;
  const ad::Tensor& get(std::string_view name) const;

  std::size_t scalar_count() const;
  void zero_grad();
  void set_requires_grad(bool on);
  // FNV-1a over the raw value bits.
  std::uint64_t hash() const;

  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);
  // Deep copy of the values into a fresh, independent registry.
  ParameterSet clone() const;

 private:
  std::vector<NamedParameter> items_;
};

struct Seg2DOutput {
  ad::Tensor features;        // [F,H,W]
  ad::Tensor main_logits;     // [C,H,W]
  ad::Tensor mimicry_logits;  // [C,H,W]
};

// Encoder-decoder over range images: three conv/instance-norm/leaky-relu/pool
// stages (5->16->32->64), a mirrored nearest-upsample decoder with additive
// skips, and two parameter-disjoint 1x1 heads.
class Seg2DNet {
 public:
  static constexpr int kFeatureChannels = 16;

  Seg2DNet(int num_classes, std::uint64_t seed);

  // Image [5,H,W], H and W divisible by 8.
  Seg2DOutput forward(const ad::Tensor& image) const;

  int num_classes() const { return num_classes_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  Seg2DNet clone() const;

 private:
  Seg2DNet() = default;
  int num_classes_ = 0;
  ParameterSet params_;
};

struct Seg3DOutput {
  ad::Tensor features;        // [V,F]
  ad::Tensor main_logits;     // [V,C]
  ad::Tensor mimicry_logits;  // [V,C]
};

// Per-point MLP over voxel representatives (xyz + remission) with mean
// aggregation over occupied face-adjacent voxels.
class Seg3DNet {
 public:
  static constexpr int kFeatureChannels = 16;
  static constexpr double kCoordScale = 0.1;  // meters -> network units

  Seg3DNet(int num_classes, std::uint64_t seed);

  Seg3DOutput forward(const VoxelSet& voxels, const PointCloud& cloud) const;
  // Same as above with precomputed neighbour lists (voxels.face_neighbors()).
  Seg3DOutput forward(const VoxelSet& voxels, const PointCloud& cloud,
                      const std::vector<std::vector<std::int64_t>>& neighbors) const;

  int num_classes() const { return num_classes_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  Seg3DNet clone() const;

 private:
  Seg3DNet() = default;
  int num_classes_ = 0;
  ParameterSet params_;
};

// Mean over occupied neighbours; voxels without neighbours get zeros.
ad::Tensor neighbor_mean(const ad::Tensor& rows,
                         const std::vector<std::vector<std::int64_t>>& neighbors);

// Conv stack over [F,H,W] feature maps, global mean, sigmoid.
class FeatureDiscriminator {
 public:
  FeatureDiscriminator(int feature_channels, std::uint64_t seed, ParameterSet& registry,
                       const std::string& prefix);
  ad::Tensor forward(const ad::Tensor& features) const;  // -> [1] in (0,1)

 private:
  ad::Tensor w1_, b1_, w2_, b2_;
  int channels_;
};

// Per-point MLP over softmax rows, mean pool, sigmoid.
class PredictionDiscriminator {
 public:
  PredictionDiscriminator(int num_classes, std::uint64_t seed, ParameterSet& registry,
                          const std::string& prefix);
  ad::Tensor forward(const ad::Tensor& probabilities) const;  // [N,C] -> [1] in (0,1)

 private:
  ad::Tensor w1_, b1_, w2_, b2_;
  int classes_;
};

enum class DiscriminatorKind { kFeature2D, kSource3DTarget2D, kSource2DTarget3D };

class DiscriminatorSet {
 public:
  DiscriminatorSet(int num_classes, std::uint64_t seed);
  DiscriminatorSet(const DiscriminatorSet&) = delete;
  DiscriminatorSet& operator=(const DiscriminatorSet&) = delete;

  ad::Tensor forward(DiscriminatorKind kind, const ad::Tensor& input) const;

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

 private:
  ParameterSet params_;
  FeatureDiscriminator feature_;
  PredictionDiscriminator s3d_t2d_;
  PredictionDiscriminator s2d_t3d_;
};

// [C,H,W] -> [H*W, C]
ad::Tensor pixels_as_rows(const ad::Tensor& chw);

// Differentiable feature lifting: rows of a [C,H,W] map at the given flat
// pixel indices (-1 gives zeros).
ad::Tensor lift_rows(const ad::Tensor& chw, std::span<const std::int64_t> pixel_index);

// Network input from a range image: channels with invalid pixels zeroed.
ad::Tensor image_tensor(const RangeImage& img);

// Voxel-representative input rows (scaled xyz, remission) -> [V,4].
std::vector<double> voxel_inputs(const VoxelSet& voxels, const PointCloud& cloud);

// Binary checkpoint: "LXCK", version, then named float64 tensors.
std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet& params);
void load_checkpoint(ParameterSet& params, std::span<const std::uint8_t> bytes);

}  // namespace lionxa
