#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lionxa/losses.hpp"
#include "lionxa/metrics.hpp"
#include "lionxa/networks.hpp"
#include "lionxa/optim.hpp"
#include "lionxa/range_projection.hpp"
#include "lionxa/scenario.hpp"
#include "lionxa/voxel_grid.hpp"

namespace lionxa {

// Derives an independent 64-bit seed for (stream, index) from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0);

// A scan with its full-width projection (normals computed, channels
// normalized with the statistics of the domain it is fed as).
struct ProjectedScan {
  PointCloud cloud;
  LabelArray labels;
  RangeImage image;
  PixelIndexMap map;
};

struct DataPools {
  int num_classes = 0;
  std::vector<std::string> class_names;
  ChannelStats source_stats;
  ChannelStats target_stats;
  ClassWeights weights;  // from the supervised pool's point labels
  std::vector<ProjectedScan> supervised;   // S (or labeled target for oracle runs)
  std::vector<ProjectedScan> target_like;  // empty when disabled
  std::vector<ProjectedScan> target;       // unlabeled use only
  std::vector<ProjectedScan> val;
  std::vector<ProjectedScan> test;
};

// Synthetic scans of one split with raw dataset label ids.
std::vector<SimulatedScan> synth_raw_split(const ScenarioConfig& config, bool target_domain,
                                           std::string_view split, int count);

// Raw (unnormalized) synthetic scans of one split.
std::vector<std::pair<PointCloud, LabelArray>> synth_split(const ScenarioConfig& config,
                                                           bool target_domain,
                                                           std::string_view split, int count);

ProjectedScan project_scan(PointCloud cloud, LabelArray labels, const SensorSpec& sensor,
                           int width);

DataPools build_pools(const ScenarioConfig& config);

// Normalization statistics of the target training split.
ChannelStats target_channel_stats(const ScenarioConfig& config);

// Loads every <name>.bin / <name>.label pair of a directory (sorted by name),
// projected with the target sensor and normalized with `stats`.
std::vector<ProjectedScan> load_scan_dir(const std::string& dir, const ScenarioConfig& config,
                                         const ChannelStats& stats);

// One cutout sample ready for both networks.
struct PreparedSample {
  ad::Tensor image;                       // [5,H,w]
  std::vector<std::int32_t> label_image;  // H*w
  PointCloud cloud;                       // points inside the cutout, 3D-augmented
  VoxelSet voxels;
  std::vector<std::vector<std::int64_t>> neighbors;
  std::vector<std::int64_t> voxel_pixel;  // flat cutout pixel of each representative
  std::vector<std::int32_t> voxel_labels;
};

PreparedSample prepare_sample(const ProjectedScan& scan, int cutout_width,
                              const TrainingConfig& training, std::mt19937_64& rng);

struct Batch {
  std::vector<PreparedSample> samples;
};

struct SampleOutputs {
  Seg2DOutput out2d;
  Seg3DOutput out3d;
  // Softmax rows over voxel representatives.
  ad::Tensor p2d_main, p2d_mimicry, p3d_main, p3d_mimicry;
};

SampleOutputs forward_sample(const Seg2DNet& net2d, const Seg3DNet& net3d,
                             const PreparedSample& sample);

SegTerms seg_terms(const SampleOutputs& out, const PreparedSample& sample);

struct StepStats {
  std::int64_t iter = 0;
  double total = 0.0;
  double supervised = 0.0;
  double xm_source = 0.0;
  double xm_target_like = 0.0;
  double xm_target = 0.0;
  double generator = 0.0;
  double discriminator = 0.0;
  double lr_2d = 0.0;
  double lr_3d = 0.0;
  double lr_disc = 0.0;
};

class Trainer {
 public:
  Trainer(const ScenarioConfig& config, int num_classes, ClassWeights weights);

  // Three-fold update: (1) supervised + cross-modal on both networks,
  // (2) generator terms against frozen discriminators, (3) discriminators on
  // detached outputs. Loss values are those computed at the start of each
  // phase's parameters.
  StepStats train_step(const Batch& source, const Batch* target_like, const Batch* target);

  std::int64_t iteration() const { return iter_; }
  Seg2DNet& net2d() { return net2d_; }
  Seg3DNet& net3d() { return net3d_; }
  const Seg2DNet& net2d() const { return net2d_; }
  const Seg3DNet& net3d() const { return net3d_; }
  DiscriminatorSet& discriminators() { return discs_; }
  const LossWeights& weights() const { return weights_; }
  const ClassWeights& class_weights() const { return class_weights_; }

 private:
  ScenarioConfig config_;
  LossWeights weights_;
  ClassWeights class_weights_;
  Seg2DNet net2d_;
  Seg3DNet net3d_;
  DiscriminatorSet discs_;
  SgdState sgd_;
  AdamState adam_;
  AdamState adam_disc_;
  Schedule sched_2d_, sched_3d_, sched_disc_;
  std::int64_t iter_ = 0;
};

struct EvalResult {
  ConfusionMatrix cm_2d, cm_3d, cm_ensemble;
  IouResult iou_2d, iou_3d, iou_ensemble;
};

EvalResult evaluate(const Seg2DNet& net2d, const Seg3DNet& net3d,
                    std::span<const ProjectedScan> scans, double voxel_size);

struct ValRecord {
  std::int64_t iter = 0;
  double miou_2d = 0.0;
  double miou_3d = 0.0;
  double miou_ensemble = 0.0;
};

struct CheckpointChoice {
  std::int64_t best_2d_iter = 0;
  std::int64_t best_3d_iter = 0;
};

// Independent argmax per modality; ties go to the earliest iteration.
CheckpointChoice select_checkpoint(std::span<const ValRecord> history);

struct RunOptions {
  std::string out_dir;  // empty: keep everything in memory
  std::function<void(const StepStats&)> on_step;
  std::function<void(const ValRecord&)> on_validation;
};

struct RunResult {
  std::vector<StepStats> steps;
  std::vector<ValRecord> validation;
  CheckpointChoice best;
  EvalResult test;
  std::vector<std::string> class_names;
  std::string run_log;  // JSON lines, one per iteration
};

RunResult run_training(const ScenarioConfig& config, const RunOptions& options = {});
RunResult run_training(const ScenarioConfig& config, const DataPools& pools,
                       const RunOptions& options = {});

std::string step_json(const StepStats& s);
std::string validation_json(const ValRecord& r);
// Evaluation report as JSON text and as CSV rows (modality,class,iou).
std::string report_json(const std::string& scenario, const EvalResult& result,
                        const std::vector<std::string>& class_names,
                        const CheckpointChoice* best = nullptr);
std::string report_csv(const EvalResult& result, const std::vector<std::string>& class_names);

}  // namespace lionxa
