#include "lionxa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "lionxa/error.hpp"
#include "lionxa/target_like.hpp"
#include "lionxa/text_util.hpp"

namespace lionxa {

using ad::Tensor;

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(master);
  for (char c : stream) h = mix(h ^ static_cast<unsigned char>(c));
  return mix(h ^ mix(index));
}

// ---------------------------------------------------------------------------
// data

std::vector<SimulatedScan> synth_raw_split(const ScenarioConfig& config, bool target_domain,
                                           std::string_view split, int count) {
  const DomainConfig& dom = target_domain ? config.target : config.source;
  const std::string stream = std::string(target_domain ? "target/" : "source/") + std::string(split);
  std::vector<SimulatedScan> out;
  for (int i = 0; i < count; ++i) {
    const Scene scene = synth_scene(derive_seed(config.training.seed, stream + "/scene", i), dom.scene);
    SimulatedScan scan =
        simulate_raw(scene, dom.sensor, derive_seed(config.training.seed, stream + "/scan", i));
    scan.cloud.frame_id = i;
    out.push_back(std::move(scan));
  }
  return out;
}

std::vector<std::pair<PointCloud, LabelArray>> synth_split(const ScenarioConfig& config,
                                                           bool target_domain,
                                                           std::string_view split, int count) {
  const ClassMapping mapping = config.class_mapping();
  std::vector<std::pair<PointCloud, LabelArray>> out;
  for (auto& raw : synth_raw_split(config, target_domain, split, count)) {
    LabelArray labels = map_labels(raw.raw_labels, mapping);
    out.emplace_back(std::move(raw.cloud), std::move(labels));
  }
  return out;
}

ProjectedScan project_scan(PointCloud cloud, LabelArray labels, const SensorSpec& sensor,
                           int width) {
  auto [img, map] = project(cloud, sensor, width);
  return {std::move(cloud), std::move(labels), compute_normals(std::move(img)), std::move(map)};
}

namespace {

std::vector<ProjectedScan> project_all(std::vector<std::pair<PointCloud, LabelArray>> raw,
                                       const DomainConfig& dom) {
  std::vector<ProjectedScan> out;
  out.reserve(raw.size());
  for (auto& [cloud, labels] : raw) {
    out.push_back(project_scan(std::move(cloud), std::move(labels), dom.sensor, dom.width));
  }
  return out;
}

ChannelStats stats_of(const std::vector<ProjectedScan>& scans) {
  std::vector<RangeImage> images;
  for (const auto& s : scans) images.push_back(s.image);
  return compute_channel_stats(images);
}

void normalize_all(std::vector<ProjectedScan>& scans, const ChannelStats& stats) {
  for (auto& s : scans) s.image = normalize_channels(std::move(s.image), stats);
}

}  // namespace

DataPools build_pools(const ScenarioConfig& config) {
  const ClassMapping mapping = config.class_mapping();
  DataPools pools;
  pools.num_classes = mapping.num_classes();
  pools.class_names = mapping.class_names;

  auto source_raw = synth_split(config, false, "train", config.data.source_train);
  std::vector<ProjectedScan> target_like;
  if (config.training.enable_targetlike && config.training.supervision == Supervision::kSource) {
    for (const auto& [cloud, labels] : source_raw) {
      TargetLikeScan tl = resample_beams(cloud, labels, config.source.sensor, config.target.sensor);
      target_like.push_back(project_scan(std::move(tl.cloud), std::move(tl.labels),
                                         config.target.sensor, config.target.width));
    }
  }
  std::vector<ProjectedScan> source = project_all(std::move(source_raw), config.source);
  std::vector<ProjectedScan> target =
      project_all(synth_split(config, true, "train", config.data.target_train), config.target);
  std::vector<ProjectedScan> val =
      project_all(synth_split(config, true, "val", config.data.target_val), config.target);
  std::vector<ProjectedScan> test =
      project_all(synth_split(config, true, "test", config.data.target_test), config.target);

  pools.source_stats = stats_of(source);
  pools.target_stats = stats_of(target);
  normalize_all(source, pools.source_stats);
  normalize_all(target_like, pools.target_stats);
  normalize_all(target, pools.target_stats);
  normalize_all(val, pools.target_stats);
  normalize_all(test, pools.target_stats);

  pools.supervised = config.training.supervision == Supervision::kSource ? std::move(source) : target;
  pools.target_like = std::move(target_like);
  pools.target = std::move(target);
  pools.val = std::move(val);
  pools.test = std::move(test);

  std::vector<std::int64_t> hist(static_cast<std::size_t>(pools.num_classes), 0);
  for (const auto& s : pools.supervised) {
    for (auto y : s.labels.labels) {
      if (y != kIgnoreLabel) ++hist[static_cast<std::size_t>(y)];
    }
  }
  pools.weights = class_weights(hist);
  return pools;
}

PreparedSample prepare_sample(const ProjectedScan& scan, int cutout_width,
                              const TrainingConfig& training, std::mt19937_64& rng) {
  auto [img, map] = cutout(scan.image, scan.map, cutout_width, rng);
  std::tie(img, map) = augment2d(img, map, rng, training.p_flip_2d, training.dropout);

  PreparedSample s;
  PointCloud sub;
  std::vector<std::int64_t> sub_pixel;
  std::vector<std::int32_t> sub_labels;
  for (std::size_t i = 0; i < scan.cloud.size(); ++i) {
    const auto f = map.point_to_pixel[i];
    if (f < 0) continue;
    sub.points.push_back(scan.cloud.points[i]);
    sub_pixel.push_back(f);
    sub_labels.push_back(scan.labels.labels.empty() ? kIgnoreLabel : scan.labels.labels[i]);
  }
  sub.frame_id = scan.cloud.frame_id;
  s.cloud = augment3d(sub, rng, training.augment_3d);
  s.voxels = voxelize(s.cloud, training.voxel_size);
  s.neighbors = s.voxels.face_neighbors();
  for (auto rep : s.voxels.representative) {
    s.voxel_pixel.push_back(sub_pixel[static_cast<std::size_t>(rep)]);
    s.voxel_labels.push_back(sub_labels[static_cast<std::size_t>(rep)]);
  }
  s.label_image = scan.labels.labels.empty()
                      ? std::vector<std::int32_t>(img.pixels(), kIgnoreLabel)
                      : label_image(img, scan.labels);
  s.image = image_tensor(img);
  return s;
}

namespace {

bool has_label(const std::vector<std::int32_t>& v) {
  return std::any_of(v.begin(), v.end(), [](auto y) { return y != kIgnoreLabel; });
}

// Redraws cutouts that contain no points (or, for supervised streams, no
// labeled voxel or pixel).
PreparedSample draw_sample(const std::vector<ProjectedScan>& pool, int cutout_width,
                           const TrainingConfig& training, std::mt19937_64& rng, bool labeled) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const auto idx = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
    PreparedSample s = prepare_sample(pool[idx], cutout_width, training, rng);
    if (s.voxels.empty()) continue;
    if (labeled && (!has_label(s.voxel_labels) || !has_label(s.label_image))) continue;
    return s;
  }
  throw Error(ErrorCode::kEmptyInput, "could not draw a non-empty cutout after 100 attempts");
}

Batch draw_batch(const std::vector<ProjectedScan>& pool, int cutout_width,
                 const TrainingConfig& training, std::mt19937_64& rng, bool labeled) {
  Batch b;
  for (int k = 0; k < training.batch_size; ++k) {
    b.samples.push_back(draw_sample(pool, cutout_width, training, rng, labeled));
  }
  return b;
}

}  // namespace

SampleOutputs forward_sample(const Seg2DNet& net2d, const Seg3DNet& net3d,
                             const PreparedSample& sample) {
  SampleOutputs o;
  o.out2d = net2d.forward(sample.image);
  o.out3d = net3d.forward(sample.voxels, sample.cloud, sample.neighbors);
  o.p2d_main = ad::softmax(lift_rows(o.out2d.main_logits, sample.voxel_pixel));
  o.p2d_mimicry = ad::softmax(lift_rows(o.out2d.mimicry_logits, sample.voxel_pixel));
  o.p3d_main = ad::softmax(o.out3d.main_logits);
  o.p3d_mimicry = ad::softmax(o.out3d.mimicry_logits);
  return o;
}

SegTerms seg_terms(const SampleOutputs& out, const PreparedSample& sample) {
  return {out.out3d.main_logits, sample.voxel_labels, out.out2d.main_logits, sample.label_image};
}

// ---------------------------------------------------------------------------
// trainer

Trainer::Trainer(const ScenarioConfig& config, int num_classes, ClassWeights weights)
    : config_(config),
      weights_(config.effective_weights()),
      class_weights_(std::move(weights)),
      net2d_(num_classes, derive_seed(config.training.seed, "init/2d")),
      net3d_(num_classes, derive_seed(config.training.seed, "init/3d")),
      discs_(num_classes, derive_seed(config.training.seed, "init/disc")) {
  const auto& o = config.optimizer;
  sgd_.momentum = o.sgd_momentum;
  adam_.beta1 = o.adam_beta1;
  adam_.beta2 = o.adam_beta2;
  adam_disc_.beta1 = o.disc_beta1;
  adam_disc_.beta2 = o.disc_beta2;
  sched_2d_ = Schedule::multi_step(o.sgd_lr, o.milestones, o.lr_gamma);
  sched_3d_ = Schedule::multi_step(o.adam_lr, o.milestones, o.lr_gamma);
  sched_disc_ = Schedule::poly(o.disc_lr, config.training.max_iter, o.disc_power);
}

namespace {

Tensor mean_of(const std::vector<Tensor>& terms) {
  Tensor acc;
  for (const auto& t : terms) acc = acc.defined() ? ad::add(acc, t) : t;
  return ad::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

std::vector<SampleOutputs> forward_batch(const Seg2DNet& n2, const Seg3DNet& n3, const Batch& b) {
  std::vector<SampleOutputs> out;
  for (const auto& s : b.samples) out.push_back(forward_sample(n2, n3, s));
  return out;
}

Tensor xm_mean(const std::vector<SampleOutputs>& outs) {
  std::vector<Tensor> terms;
  for (const auto& o : outs) {
    terms.push_back(cross_modal_loss(o.p2d_main, o.p2d_mimicry, o.p3d_main, o.p3d_mimicry));
  }
  return mean_of(terms);
}

double value_or_zero(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

}  // namespace

StepStats Trainer::train_step(const Batch& source, const Batch* target_like, const Batch* target) {
  if (!target || target->samples.empty()) {
    throw Error(ErrorCode::kMissingTargetDomain, "train_step needs a target batch");
  }
  if (source.samples.empty()) throw Error(ErrorCode::kEmptyInput, "train_step needs a source batch");
  const bool use_tl = config_.training.enable_targetlike && target_like && !target_like->samples.empty();
  const bool adversarial = config_.training.enable_discriminators;

  StepStats st;
  st.iter = iter_;
  st.lr_2d = sched_2d_.lr_at(iter_);
  st.lr_3d = sched_3d_.lr_at(iter_);
  st.lr_disc = sched_disc_.lr_at(iter_);

  auto params2d = net2d_.parameters().tensors();
  auto params3d = net3d_.parameters().tensors();
  auto step_generators = [&] {
    sgd_step(params2d, sgd_, st.lr_2d);
    adam_step(params3d, adam_, st.lr_3d);
  };

  // (1) supervised + cross-modal
  net2d_.parameters().zero_grad();
  net3d_.parameters().zero_grad();
  const auto out_s = forward_batch(net2d_, net3d_, source);
  std::vector<SampleOutputs> out_tl;
  if (use_tl) out_tl = forward_batch(net2d_, net3d_, *target_like);
  std::vector<SegTerms> terms_s, terms_tl;
  for (std::size_t k = 0; k < out_s.size(); ++k) terms_s.push_back(seg_terms(out_s[k], source.samples[k]));
  for (std::size_t k = 0; k < out_tl.size(); ++k) {
    terms_tl.push_back(seg_terms(out_tl[k], target_like->samples[k]));
  }
  const Tensor sup = supervised_loss(terms_s, terms_tl, weights_.lambda_p, class_weights_, class_weights_);
  Tensor xm_s, xm_tl, xm_t;
  if (weights_.lambda_s > 0.0) xm_s = xm_mean(out_s);
  if (use_tl && weights_.lambda_tl > 0.0) xm_tl = xm_mean(out_tl);
  if (weights_.lambda_t > 0.0) xm_t = xm_mean(forward_batch(net2d_, net3d_, *target));
  const Tensor total = total_loss(sup, xm_s, xm_tl, xm_t, weights_);
  st.supervised = sup.item();
  st.xm_source = value_or_zero(xm_s);
  st.xm_target_like = value_or_zero(xm_tl);
  st.xm_target = value_or_zero(xm_t);
  st.total = total.item();
  ad::backward(total);
  step_generators();

  if (adversarial) {
    // (2) generators against frozen discriminators
    discs_.parameters().set_requires_grad(false);
    net2d_.parameters().zero_grad();
    net3d_.parameters().zero_grad();
    const auto out_t = forward_batch(net2d_, net3d_, *target);
    std::vector<Tensor> d_feat, d_t2d, d_t3d;
    for (const auto& o : out_t) {
      d_feat.push_back(discs_.forward(DiscriminatorKind::kFeature2D, o.out2d.features));
      d_t2d.push_back(discs_.forward(DiscriminatorKind::kSource3DTarget2D, o.p2d_main));
      d_t3d.push_back(discs_.forward(DiscriminatorKind::kSource2DTarget3D, o.p3d_main));
    }
    const Tensor gen = ad::add(ad::add(generator_adv_loss(d_feat, weights_.g2d_tf),
                                       generator_adv_loss(d_t2d, weights_.g2d_tp)),
                               generator_adv_loss(d_t3d, weights_.g3d_tp));
    st.generator = gen.item();
    ad::backward(gen);
    step_generators();
    discs_.parameters().set_requires_grad(true);

    // (3) discriminators on detached outputs
    discs_.parameters().zero_grad();
    std::vector<Tensor> feat_s, feat_t, s3d, t2d, s2d, t3d;
    for (const auto& o : out_s) {
      feat_s.push_back(discs_.forward(DiscriminatorKind::kFeature2D, ad::detach(o.out2d.features)));
      s3d.push_back(discs_.forward(DiscriminatorKind::kSource3DTarget2D, ad::detach(o.p3d_main)));
      s2d.push_back(discs_.forward(DiscriminatorKind::kSource2DTarget3D, ad::detach(o.p2d_main)));
    }
    for (const auto& o : out_t) {
      feat_t.push_back(discs_.forward(DiscriminatorKind::kFeature2D, ad::detach(o.out2d.features)));
      t2d.push_back(discs_.forward(DiscriminatorKind::kSource3DTarget2D, ad::detach(o.p2d_main)));
      t3d.push_back(discs_.forward(DiscriminatorKind::kSource2DTarget3D, ad::detach(o.p3d_main)));
    }
    const Tensor dl = ad::add(
        ad::add(discriminator_loss(feat_s, feat_t, weights_.d2d_sf, weights_.d2d_tf),
                discriminator_loss(s3d, t2d, weights_.d3d_sp, weights_.d2d_tp)),
        discriminator_loss(s2d, t3d, weights_.d2d_sp, weights_.d3d_tp));
    st.discriminator = dl.item();
    ad::backward(dl);
    auto params_d = discs_.parameters().tensors();
    adam_step(params_d, adam_disc_, st.lr_disc);
  }
  ++iter_;
  return st;
}

// ---------------------------------------------------------------------------
// evaluation

ChannelStats target_channel_stats(const ScenarioConfig& config) {
  return stats_of(project_all(synth_split(config, true, "train", config.data.target_train), config.target));
}

std::vector<ProjectedScan> load_scan_dir(const std::string& dir, const ScenarioConfig& config,
                                         const ChannelStats& stats) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(ErrorCode::kIoError, "not a directory: " + dir);
  std::vector<fs::path> scans;
  for (const auto& e : fs::directory_iterator(dir, ec)) {
    if (e.path().extension() == ".bin") scans.push_back(e.path());
  }
  if (ec) throw Error(ErrorCode::kIoError, "cannot list " + dir + ": " + ec.message());
  if (scans.empty()) throw Error(ErrorCode::kIoError, "no .bin scans in " + dir);
  std::sort(scans.begin(), scans.end());
  const ClassMapping mapping = config.class_mapping();
  std::vector<ProjectedScan> out;
  for (const auto& path : scans) {
    PointCloud cloud = parse_scan(read_file(path.string()));
    fs::path label_path = path;
    label_path.replace_extension(".label");
    LabelArray labels = parse_labels(read_file(label_path.string()), mapping, cloud.size());
    ProjectedScan scan = project_scan(std::move(cloud), std::move(labels), config.target.sensor,
                                      config.target.width);
    scan.image = normalize_channels(std::move(scan.image), stats);
    out.push_back(std::move(scan));
  }
  return out;
}

namespace {

std::vector<double> softmax_values(const Tensor& rows) {
  const Tensor p = ad::softmax(rows);
  return {p.values().begin(), p.values().end()};
}

}  // namespace

EvalResult evaluate(const Seg2DNet& net2d, const Seg3DNet& net3d,
                    std::span<const ProjectedScan> scans, double voxel_size) {
  ad::NoGradGuard no_grad;
  const int c = net2d.num_classes();
  const auto cs = static_cast<std::size_t>(c);
  EvalResult r{ConfusionMatrix(c), ConfusionMatrix(c), ConfusionMatrix(c), {}, {}, {}};
  for (const auto& scan : scans) {
    const Seg2DOutput o2 = net2d.forward(image_tensor(scan.image));
    const std::vector<double> pix = softmax_values(pixels_as_rows(o2.main_logits));
    const VoxelSet voxels = voxelize(scan.cloud, voxel_size);
    const std::vector<double> vox = softmax_values(net3d.forward(voxels, scan.cloud).main_logits);

    std::vector<double> p2d, p3d;
    std::vector<std::int32_t> labels;
    for (std::size_t i = 0; i < scan.cloud.size(); ++i) {
      const auto f = scan.map.point_to_pixel[i];
      if (f < 0) continue;
      const auto v = static_cast<std::size_t>(voxels.point_to_voxel[i]);
      p2d.insert(p2d.end(), pix.begin() + static_cast<long>(f * cs), pix.begin() + static_cast<long>((f + 1) * cs));
      p3d.insert(p3d.end(), vox.begin() + static_cast<long>(v * cs), vox.begin() + static_cast<long>((v + 1) * cs));
      labels.push_back(scan.labels.labels[i]);
    }
    r.cm_2d.accumulate(argmax_rows(p2d, c), labels);
    r.cm_3d.accumulate(argmax_rows(p3d, c), labels);
    r.cm_ensemble.accumulate(argmax_rows(ensemble(p2d, p3d), c), labels);
  }
  r.iou_2d = iou(r.cm_2d);
  r.iou_3d = iou(r.cm_3d);
  r.iou_ensemble = iou(r.cm_ensemble);
  return r;
}

CheckpointChoice select_checkpoint(std::span<const ValRecord> history) {
  if (history.empty()) throw Error(ErrorCode::kNoValidation, "no validation records");
  CheckpointChoice c{history.front().iter, history.front().iter};
  double best2 = history.front().miou_2d, best3 = history.front().miou_3d;
  for (const auto& r : history.subspan(1)) {
    if (r.miou_2d > best2) {
      best2 = r.miou_2d;
      c.best_2d_iter = r.iter;
    }
    if (r.miou_3d > best3) {
      best3 = r.miou_3d;
      c.best_3d_iter = r.iter;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// run loop

std::string step_json(const StepStats& s) {
  nlohmann::ordered_json j;
  j["iter"] = s.iter;
  j["total"] = s.total;
  j["supervised"] = s.supervised;
  j["xm_source"] = s.xm_source;
  j["xm_target_like"] = s.xm_target_like;
  j["xm_target"] = s.xm_target;
  j["generator"] = s.generator;
  j["discriminator"] = s.discriminator;
  j["lr_2d"] = s.lr_2d;
  j["lr_3d"] = s.lr_3d;
  j["lr_disc"] = s.lr_disc;
  return j.dump();
}

std::string validation_json(const ValRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["miou_2d"] = r.miou_2d;
  j["miou_3d"] = r.miou_3d;
  j["miou_ensemble"] = r.miou_ensemble;
  return j.dump();
}

namespace {

nlohmann::ordered_json iou_json(const IouResult& r, const std::vector<std::string>& names) {
  nlohmann::ordered_json j;
  j["miou"] = r.miou;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const std::string name = k < names.size() ? names[k] : std::to_string(k);
    if (std::isnan(r.per_class[k])) per[name] = nullptr;
    else per[name] = r.per_class[k];
  }
  j["per_class"] = per;
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
}

}  // namespace

std::string report_json(const std::string& scenario, const EvalResult& result,
                        const std::vector<std::string>& class_names, const CheckpointChoice* best) {
  nlohmann::ordered_json j;
  j["scenario"] = scenario;
  if (best) {
    j["best_2d_iter"] = best->best_2d_iter;
    j["best_3d_iter"] = best->best_3d_iter;
  }
  j["2d"] = iou_json(result.iou_2d, class_names);
  j["3d"] = iou_json(result.iou_3d, class_names);
  j["ensemble"] = iou_json(result.iou_ensemble, class_names);
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalResult& result, const std::vector<std::string>& class_names) {
  std::string out = "modality,class,iou\n";
  auto rows = [&](const char* modality, const IouResult& r) {
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
      const std::string name = k < class_names.size() ? class_names[k] : std::to_string(k);
      out += std::string(modality) + "," + name + "," +
             (std::isnan(r.per_class[k]) ? std::string() : text::format_double(r.per_class[k])) + "\n";
    }
    out += std::string(modality) + ",mIoU," + text::format_double(r.miou) + "\n";
  };
  rows("2d", result.iou_2d);
  rows("3d", result.iou_3d);
  rows("ensemble", result.iou_ensemble);
  return out;
}

RunResult run_training(const ScenarioConfig& config, const RunOptions& options) {
  return run_training(config, build_pools(config), options);
}

RunResult run_training(const ScenarioConfig& config, const DataPools& pools,
                       const RunOptions& options) {
  config.validate();
  const auto& tc = config.training;
  const bool oracle = tc.supervision == Supervision::kTarget;
  const int cut_sup = oracle ? tc.cutout_width_target : tc.cutout_width_source;

  Trainer trainer(config, pools.num_classes, pools.weights);
  std::mt19937_64 rng_s(derive_seed(tc.seed, "sample/supervised"));
  std::mt19937_64 rng_tl(derive_seed(tc.seed, "sample/target-like"));
  std::mt19937_64 rng_t(derive_seed(tc.seed, "sample/target"));
  const bool use_tl = tc.enable_targetlike && !pools.target_like.empty();

  RunResult result;
  result.class_names = pools.class_names;
  std::vector<std::vector<double>> best2d_values = trainer.net2d().parameters().snapshot();
  std::vector<std::vector<double>> best3d_values = trainer.net3d().parameters().snapshot();
  double best2 = -1.0, best3 = -1.0;

  for (std::int64_t it = 0; it < tc.max_iter; ++it) {
    const Batch s = draw_batch(pools.supervised, cut_sup, tc, rng_s, true);
    std::optional<Batch> tl;
    if (use_tl) tl = draw_batch(pools.target_like, tc.cutout_width_target, tc, rng_tl, true);
    const Batch t = draw_batch(pools.target, tc.cutout_width_target, tc, rng_t, false);
    const StepStats st = trainer.train_step(s, tl ? &*tl : nullptr, &t);
    result.steps.push_back(st);
    result.run_log += step_json(st) + "\n";
    if (options.on_step) options.on_step(st);

    if ((it + 1) % tc.val_every == 0 || it + 1 == tc.max_iter) {
      const EvalResult ev = evaluate(trainer.net2d(), trainer.net3d(), pools.val, tc.voxel_size);
      const ValRecord rec{it + 1, ev.iou_2d.miou, ev.iou_3d.miou, ev.iou_ensemble.miou};
      result.validation.push_back(rec);
      if (rec.miou_2d > best2) {
        best2 = rec.miou_2d;
        best2d_values = trainer.net2d().parameters().snapshot();
      }
      if (rec.miou_3d > best3) {
        best3 = rec.miou_3d;
        best3d_values = trainer.net3d().parameters().snapshot();
      }
      if (options.on_validation) options.on_validation(rec);
    }
  }
  result.best = select_checkpoint(result.validation);

  Seg2DNet best2d = trainer.net2d().clone();
  best2d.parameters().restore(best2d_values);
  Seg3DNet best3d = trainer.net3d().clone();
  best3d.parameters().restore(best3d_values);
  result.test = evaluate(best2d, best3d, pools.test, tc.voxel_size);

  if (!options.out_dir.empty()) {
    const std::filesystem::path dir(options.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
    write_text(dir / "config.cfg", render_scenario(config));
    write_text(dir / "run_log.jsonl", result.run_log);
    std::string val;
    for (const auto& r : result.validation) val += validation_json(r) + "\n";
    write_text(dir / "val_log.jsonl", val);
    write_file((dir / "best_2d.ckpt").string(), serialize_checkpoint(best2d.parameters()));
    write_file((dir / "best_3d.ckpt").string(), serialize_checkpoint(best3d.parameters()));
    write_text(dir / "report.json", report_json(config.name, result.test, pools.class_names, &result.best));
    write_text(dir / "report.csv", report_csv(result.test, pools.class_names));
  }
  return result;
}

}  // namespace lionxa
