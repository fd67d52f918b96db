// lionxa command-line entry point.
//
// Exit codes: 0 success, 1 usage/config error, 2 data/IO/checkpoint error,
// 3 verification failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "lionxa/error.hpp"
#include "lionxa/lidar_io.hpp"
#include "lionxa/metrics.hpp"
#include "lionxa/networks.hpp"
#include "lionxa/range_projection.hpp"
#include "lionxa/scenario.hpp"
#include "lionxa/target_like.hpp"
#include "lionxa/tensor.hpp"
#include "lionxa/text_util.hpp"
#include "lionxa/trainer.hpp"
#include "lionxa/verify.hpp"
#include "lionxa/voxel_grid.hpp"

namespace fs = std::filesystem;
using namespace lionxa;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerify = 3;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigError:
    case ErrorCode::kDuplicateMapping:
    case ErrorCode::kInvalidMapping:
    case ErrorCode::kInvalidScene:
    case ErrorCode::kInvalidVoxelSize:
    case ErrorCode::kInvalidCutout:
    case ErrorCode::kMissingTargetDomain:
      return kExitUsage;
    default:
      return kExitData;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path.string());
  return {bytes.begin(), bytes.end()};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorCode::kIoError, "cannot create directory " + dir.string());
  }
}

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", i);
  return buf;
}

ScenarioConfig load_config(const std::string& name, std::int64_t seed) {
  ScenarioConfig config = resolve_scenario(name);
  if (seed >= 0) config.training.seed = static_cast<std::uint64_t>(seed);
  return config;
}

const DomainConfig& domain_of(const ScenarioConfig& c, const std::string& domain) {
  return domain == "source" ? c.source : c.target;
}

// ---- subcommands ----

struct SynthArgs {
  std::string config, out_dir, split = "target", partition = "test";
  int count = 1;
  std::int64_t seed = -1;
};

int cmd_synth(const SynthArgs& a) {
  const ScenarioConfig config = load_config(a.config, a.seed);
  config.validate();
  ensure_dir(a.out_dir);
  const auto scans = synth_raw_split(config, a.split == "target", a.partition, a.count);
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const fs::path base = fs::path(a.out_dir) / frame_name(static_cast<int>(i));
    write_file(base.string() + ".bin", write_scan(scans[i].cloud));
    write_file(base.string() + ".label", write_raw_labels(scans[i].raw_labels));
  }
  std::cout << "wrote " << scans.size() << " " << a.split << "/" << a.partition << " scans to "
            << a.out_dir << "\n";
  return kExitOk;
}

struct ConvertArgs {
  std::string config, scan, labels, out, domain = "target";
  double voxel_size = 0.05;
};

int cmd_project(const ConvertArgs& a) {
  const ScenarioConfig config = load_config(a.config, -1);
  const DomainConfig& dom = domain_of(config, a.domain);
  const PointCloud cloud = parse_scan(read_file(a.scan));
  const RangeImage img = compute_normals(project(cloud, dom.sensor, dom.width).first);
  write_file(a.out, serialize_range_image(img));
  std::cout << "range image " << img.height << "x" << img.width << " -> " << a.out << "\n";
  return kExitOk;
}

int cmd_voxelize(const ConvertArgs& a) {
  const PointCloud cloud = parse_scan(read_file(a.scan));
  const VoxelSet voxels = voxelize(cloud, a.voxel_size);
  write_file(a.out, serialize_voxel_set(voxels));
  std::cout << voxels.size() << " voxels from " << cloud.size() << " points -> " << a.out << "\n";
  return kExitOk;
}

int cmd_targetlike(const ConvertArgs& a) {
  const ScenarioConfig config = load_config(a.config, -1);
  const PointCloud cloud = parse_scan(read_file(a.scan));
  std::vector<std::uint32_t> raw;
  if (!a.labels.empty()) raw = parse_raw_labels(read_file(a.labels), cloud.size());
  else raw.assign(cloud.size(), 0);
  const LabelArray mapped = map_labels(raw, config.class_mapping());
  const TargetLikeScan tl = resample_beams(cloud, mapped, config.source.sensor, config.target.sensor);
  write_file(a.out, write_scan(tl.cloud));
  if (!a.labels.empty()) {
    std::vector<std::uint32_t> kept;
    kept.reserve(tl.source_index.size());
    for (auto i : tl.source_index) kept.push_back(raw[static_cast<std::size_t>(i)]);
    write_file(fs::path(a.out).replace_extension(".label").string(), write_raw_labels(kept));
  }
  std::cout << tl.cloud.size() << " of " << cloud.size() << " points kept -> " << a.out << "\n";
  return kExitOk;
}

std::string miou_line(const EvalResult& r) {
  return "mIoU 2d " + text::format_double(r.iou_2d.miou) + "  3d " + text::format_double(r.iou_3d.miou) +
         "  ensemble " + text::format_double(r.iou_ensemble.miou);
}

struct TrainArgs {
  std::string config, out_dir, variant = "full";
  std::int64_t seed = -1, max_iter = -1;
};

ScenarioConfig pick_variant(const ScenarioConfig& base, const std::string& variant) {
  if (variant == "baseline") return baseline_variant(base);
  if (variant == "oracle") return oracle_variant(base);
  for (auto& v : ablation_variants(base)) {
    if (v.name == variant) return v.config;
  }
  throw Error(ErrorCode::kConfigError, "unknown variant '" + variant + "'");
}

int cmd_train(const TrainArgs& a) {
  ScenarioConfig config = pick_variant(load_config(a.config, a.seed), a.variant);
  if (a.max_iter > 0) config = with_max_iter(config, a.max_iter);
  config.validate();
  ensure_dir(a.out_dir);
  RunOptions opt;
  opt.out_dir = a.out_dir;
  opt.on_validation = [](const ValRecord& r) {
    std::cout << "iter " << r.iter << " val mIoU 2d " << text::format_double(r.miou_2d) << "  3d "
              << text::format_double(r.miou_3d) << "  ensemble " << text::format_double(r.miou_ensemble)
              << std::endl;
  };
  const RunResult r = run_training(config, opt);
  std::cout << config.name << " [" << a.variant << "] test " << miou_line(r.test) << "\n"
            << "report: " << (fs::path(a.out_dir) / "report.json").string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string config, ckpt_2d, ckpt_3d, data_dir, out;
  std::int64_t seed = -1;
};

int cmd_eval(const EvalArgs& a) {
  const ScenarioConfig config = load_config(a.config, a.seed);
  config.validate();
  const int c = config.class_mapping().num_classes();
  Seg2DNet net2d(c, 0);
  Seg3DNet net3d(c, 0);
  load_checkpoint(net2d.parameters(), read_file(a.ckpt_2d));
  load_checkpoint(net3d.parameters(), read_file(a.ckpt_3d));
  std::vector<ProjectedScan> scans;
  std::vector<std::string> names;
  if (a.data_dir.empty()) {
    DataPools pools = build_pools(config);
    scans = std::move(pools.test);
    names = pools.class_names;
  } else {
    scans = load_scan_dir(a.data_dir, config, target_channel_stats(config));
    names = config.class_mapping().class_names;
  }
  const EvalResult r = evaluate(net2d, net3d, scans, config.training.voxel_size);
  std::cout << report_csv(r, names) << miou_line(r) << "\n";
  if (!a.out.empty()) {
    write_text(a.out, report_json(config.name, r, names));
    std::cout << "report: " << a.out << "\n";
  }
  return kExitOk;
}

// mIoU per modality from a run directory or a report.json path.
std::array<double, 3> run_mious(const std::string& path) {
  fs::path p(path);
  if (fs::is_directory(p)) p /= "report.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(p));
    return {j.at("2d").at("miou").get<double>(), j.at("3d").at("miou").get<double>(),
            j.at("ensemble").at("miou").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIoError, "bad report " + p.string() + ": " + e.what());
  }
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out_dir;
};

int cmd_report(const ReportArgs& a) {
  const auto base = run_mious(a.runs[0]), method = run_mious(a.runs[1]), oracle = run_mious(a.runs[2]);
  const char* names[3] = {"2d", "3d", "ensemble"};
  std::string csv = "modality,baseline,method,oracle,advantage,gap,closed_gap\n";
  std::ostringstream txt;
  txt << "modality   baseline  method  oracle  advantage  gap    closed gap\n";
  for (int m = 0; m < 3; ++m) {
    // reported in mIoU points
    const double b = 100.0 * base[m], me = 100.0 * method[m], o = 100.0 * oracle[m];
    const DomainStats s = domain_stats(b, me, o);
    csv += std::string(names[m]) + "," + text::format_double(b) + "," + text::format_double(me) + "," +
           text::format_double(o) + "," + text::format_double(s.advantage) + "," +
           text::format_double(s.gap) + "," + text::format_double(s.closed_gap_percent) + "\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-9s  %8.2f  %6.2f  %6.2f  %9.2f  %5.2f  %9.1f\n", names[m], b, me, o,
                  s.advantage, s.gap, s.closed_gap_percent);
    txt << line;
  }
  std::cout << txt.str();
  if (!a.out_dir.empty()) {
    ensure_dir(a.out_dir);
    write_text(fs::path(a.out_dir) / "domain_stats.csv", csv);
    write_text(fs::path(a.out_dir) / "domain_stats.txt", txt.str());
    std::cout << "report: " << (fs::path(a.out_dir) / "domain_stats.csv").string() << "\n";
  }
  return kExitOk;
}

struct VerifyArgs {
  std::string suite = "all", inject = "none";
};

int cmd_verify(const VerifyArgs& a) {
  if (a.inject == "relu") ad::fault::inject(ad::fault::Kind::kReluBackwardSign);
  else if (a.inject == "matmul") ad::fault::inject(ad::fault::Kind::kMatmulBackwardSign);
  const auto results = run_verify(a.suite);
  int failed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.suite << "/" << r.name;
    if (!r.detail.empty()) std::cout << "  (" << r.detail << ")";
    std::cout << "\n";
    failed += r.passed ? 0 : 1;
  }
  std::cout << results.size() - static_cast<std::size_t>(failed) << "/" << results.size() << " checks passed\n";
  return failed == 0 ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR-only cross-modal domain adaptation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write synthetic scan/label files");
  s->add_option("--config", synth.config, "Scenario name or config file")->required();
  s->add_option("--out-dir", synth.out_dir)->required();
  s->add_option("--split", synth.split)->check(CLI::IsMember({"source", "target"}));
  s->add_option("--partition", synth.partition, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  s->add_option("--count", synth.count)->check(CLI::NonNegativeNumber);
  s->add_option("--seed", synth.seed)->check(CLI::NonNegativeNumber);

  ConvertArgs proj, vox, tl;
  auto* p = app.add_subcommand("project", "Project a scan to a range image");
  p->add_option("--config", proj.config)->required();
  p->add_option("--scan", proj.scan)->required();
  p->add_option("--out", proj.out)->required();
  p->add_option("--domain", proj.domain)->check(CLI::IsMember({"source", "target"}));
  auto* v = app.add_subcommand("voxelize", "Voxelize a scan");
  v->add_option("--scan", vox.scan)->required();
  v->add_option("--out", vox.out)->required();
  v->add_option("--voxel-size", vox.voxel_size)->check(CLI::PositiveNumber);
  auto* t = app.add_subcommand("targetlike", "Resample a source scan to the target beam layout");
  t->add_option("--config", tl.config)->required();
  t->add_option("--scan", tl.scan)->required();
  t->add_option("--labels", tl.labels);
  t->add_option("--out", tl.out)->required();

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train a scenario variant");
  tr->add_option("--config", train.config)->required();
  tr->add_option("--out-dir", train.out_dir)->required();
  tr->add_option("--seed", train.seed)->check(CLI::NonNegativeNumber);
  tr->add_option("--variant", train.variant)
      ->check(CLI::IsMember({"full", "no-discriminator", "no-targetlike", "no-dis-no-tgl", "baseline", "oracle"}));
  tr->add_option("--max-iter", train.max_iter)->check(CLI::PositiveNumber);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate checkpoints on target data");
  e->add_option("--config", eval.config)->required();
  e->add_option("--checkpoint-2d", eval.ckpt_2d)->required();
  e->add_option("--checkpoint-3d", eval.ckpt_3d)->required();
  e->add_option("--data-dir", eval.data_dir, "Directory of .bin/.label files (default: synthetic test split)");
  e->add_option("--out", eval.out, "Write the JSON report here");
  e->add_option("--seed", eval.seed)->check(CLI::NonNegativeNumber);

  ReportArgs report;
  auto* r = app.add_subcommand("report", "Domain statistics over baseline, method and oracle runs");
  r->add_option("--runs", report.runs, "baseline method oracle (run dirs or report.json files)")
      ->required()
      ->expected(3);
  r->add_option("--out-dir", report.out_dir);

  VerifyArgs verify;
  auto* ve = app.add_subcommand("verify", "Run the property suites");
  ve->add_option("--suite", verify.suite)->check(CLI::IsMember({"gradcheck", "geometry", "losses", "all"}));
  ve->add_option("--inject", verify.inject, "Flip a backward rule (mutation smoke test)")
      ->check(CLI::IsMember({"none", "relu", "matmul"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*p) return cmd_project(proj);
    if (*v) return cmd_voxelize(vox);
    if (*t) return cmd_targetlike(tl);
    if (*tr) return cmd_train(train);
    if (*e) return cmd_eval(eval);
    if (*r) return cmd_report(report);
    if (*ve) return cmd_verify(verify);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_code_for(err.code());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
