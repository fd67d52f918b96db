#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lionxa/lidar_io.hpp"
#include "lionxa/losses.hpp"
#include "lionxa/range_projection.hpp"
#include "lionxa/voxel_grid.hpp"

namespace lionxa {

struct OptimizerConfig {
  double sgd_lr = 2.5e-3;
  double sgd_momentum = 0.9;
  double adam_lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double disc_lr = 1e-4;
  double disc_beta1 = 0.9;
  double disc_beta2 = 0.99;
  double disc_power = 0.9;
  double lr_gamma = 0.1;
  std::vector<std::int64_t> milestones{1600, 1800};

  bool operator==(const OptimizerConfig&) const = default;
};

enum class Supervision { kSource, kTarget };

struct TrainingConfig {
  std::int64_t max_iter = 2000;
  int batch_size = 2;
  std::int64_t val_every = 200;
  std::uint64_t seed = 1;
  bool enable_targetlike = true;
  bool enable_discriminators = true;
  Supervision supervision = Supervision::kSource;
  int cutout_width_source = 32;
  int cutout_width_target = 32;
  double voxel_size = 0.05;
  double p_flip_2d = 0.5;
  DropoutSpec dropout{};
  Augment3dSpec augment_3d{0.3, 0.0, 0.0, 0.5};

  bool operator==(const TrainingConfig& o) const;
};

struct DataConfig {
  int source_train = 16;
  int target_train = 16;
  int target_val = 4;
  int target_test = 8;

  bool operator==(const DataConfig&) const = default;
};

struct DomainConfig {
  SensorSpec sensor;
  int width = 0;  // range image columns
  SceneParams scene;

  bool operator==(const DomainConfig&) const = default;
};

struct ScenarioConfig {
  std::string name;
  std::string mapping = "kitti_nuscenes";
  std::string dataset = "semantickitti";  // raw-id namespace of both domains' labels
  DomainConfig source;
  DomainConfig target;
  LossWeights weights;
  OptimizerConfig optimizer;
  TrainingConfig training;
  DataConfig data;

  bool operator==(const ScenarioConfig&) const;

  // Throws ConfigError.
  void validate() const;
  ClassMapping class_mapping() const;
  // Adversarial weights honoured only when discriminators are enabled, and
  // lambda_tl only with target-like data.
  LossWeights effective_weights() const;
};

ScenarioConfig load_scenario(std::string_view text);
std::string render_scenario(const ScenarioConfig& config);

std::vector<std::string> builtin_scenario_names();
ScenarioConfig builtin_scenario(std::string_view name);
std::string_view builtin_scenario_text(std::string_view name);
// A built-in name or a path to a config file.
ScenarioConfig resolve_scenario(const std::string& name_or_path);

struct NamedVariant {
  std::string name;
  ScenarioConfig config;
};

// full, no-discriminator, no-targetlike, no-dis-no-tgl.
std::vector<NamedVariant> ablation_variants(const ScenarioConfig& config);
// Source-only training: every adaptation weight zero, both flags off.
ScenarioConfig baseline_variant(const ScenarioConfig& config);
// Supervised on labeled target data, no adaptation.
ScenarioConfig oracle_variant(const ScenarioConfig& config);
// Shortened or lengthened run; decay milestones keep their relative position.
ScenarioConfig with_max_iter(const ScenarioConfig& config, std::int64_t max_iter);

}  // namespace lionxa
