// Acceptance checks. Usage: lionxa_acceptance <criterion 1-9 | all> [work-dir]
// Prints one PASS/FAIL line per criterion; exit status 0 iff all requested pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "lionxa/lidar_io.hpp"
#include "lionxa/metrics.hpp"
#include "lionxa/optim.hpp"
#include "lionxa/scenario.hpp"
#include "lionxa/tensor.hpp"
#include "lionxa/text_util.hpp"
#include "lionxa/trainer.hpp"
#include "lionxa/verify.hpp"

namespace fs = std::filesystem;
using namespace lionxa;

namespace {

struct Outcome {
  bool passed = true;
  std::vector<std::string> failures;
  std::string summary;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      failures.push_back(what);
    }
  }
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---- 1: domain statistics over reference mIoU cells ----

struct ReferenceStatsRow {
  const char* name;
  double baseline, method, oracle;
  double advantage, gap, closed;
};

// Baseline, LiOn-XA and oracle rows plus the three footer rows.
constexpr ReferenceStatsRow kReferenceStats[] = {
    {"nuScenes 2D", 53.4, 58.0, 66.4, 4.6, 13.0, 35.4},
    {"nuScenes 3D", 46.5, 63.4, 63.8, 17.3, 17.5, 97.7},
    {"nuScenes 2D+3D", 61.3, 68.9, 71.6, 7.6, 10.3, 73.8},
    {"nS-Lidarseg 2D", 58.4, 67.2, 75.4, 8.8, 17.0, 51.8},
    {"nS-Lidarseg 3D", 62.8, 69.7, 76.0, 6.9, 13.2, 52.3},
    {"nS-Lidarseg 2D+3D", 68.2, 72.8, 79.6, 4.6, 11.4, 40.4},
    {"KITTI->nS-Lidarseg 2D", 47.6, 51.9, 75.4, 4.3, 27.8, 15.5},
    {"KITTI->nS-Lidarseg 3D", 54.9, 70.7, 76.0, 15.8, 21.1, 74.9},
    {"KITTI->nS-Lidarseg 2D+3D", 61.5, 71.3, 79.6, 9.8, 18.1, 54.1},
};

Outcome criterion1() {
  Outcome o;
  const auto t0 = Clock::now();
  int cells = 0, ok = 0;
  for (const auto& c : kReferenceStats) {
    const DomainStats s = domain_stats(c.baseline, c.method, c.oracle);
    const double got[3] = {s.advantage, s.gap, s.closed_gap_percent};
    const double want[3] = {c.advantage, c.gap, c.closed};
    const char* row[3] = {"advantage", "gap", "closed gap"};
    for (int k = 0; k < 3; ++k) {
      ++cells;
      const bool good = std::abs(got[k] - want[k]) <= 0.05 + 1e-9;
      ok += good ? 1 : 0;
      o.expect(good, std::string(c.name) + " " + row[k] + ": got " + fmt(got[k], 2) + ", expected " +
                         fmt(want[k], 1));
    }
  }
  const double t = seconds_since(t0);
  o.expect(t < 1.0, "runtime " + fmt(t, 3) + " s");
  o.summary = std::to_string(ok) + "/" + std::to_string(cells) + " cells within 0.05";
  return o;
}

// ---- 2: loss-weight presets ----

struct ReferenceWeights {
  const char* scenario;
  double v[13];  // s, tl, t, p, G2Dtp, G3Dtp, G2Dtf, D2Dtp, D3Dtp, D2Dtf, D2Dsp, D3Dsp, D2Dsf
};

constexpr ReferenceWeights kReferenceWeights[] = {
    {"nuscenes-usa-sg", {0.8, 0, 0.1, 0.5, 0.07, 0.05, 0.02, 0.2, 0.2, 0.2, 0.1, 0.1, 0.1}},
    {"nuscenes-lidarseg-usa-sg", {0.8, 0, 0.1, 0.8, 0.07, 0.05, 0.07, 0.2, 0.2, 0.2, 0.1, 0.1, 0.1}},
    {"kitti-to-nuscenes-lidarseg", {0.1, 0.02, 0.01, 0.1, 0.07, 0.05, 0.001, 0.2, 0.2, 0.2, 0.1, 0.1, 0.1}},
    {"kitti-to-poss", {0.8, 1.0, 0.1, 0.8, 0.07, 0.05, 0.001, 0.2, 0.2, 0.05, 0.1, 0.1, 0.05}},
};

Outcome criterion2() {
  Outcome o;
  const auto t0 = Clock::now();
  const char* names[13] = {"lambda_s", "lambda_tl", "lambda_t", "lambda_p", "g2d_tp", "g3d_tp", "g2d_tf",
                           "d2d_tp",   "d3d_tp",    "d2d_tf",   "d2d_sp",   "d3d_sp", "d2d_sf"};
  int n = 0, ok = 0;
  for (const auto& col : kReferenceWeights) {
    const LossWeights& w = builtin_scenario(col.scenario).weights;
    const double got[13] = {w.lambda_s, w.lambda_tl, w.lambda_t, w.lambda_p, w.g2d_tp, w.g3d_tp, w.g2d_tf,
                            w.d2d_tp,   w.d3d_tp,    w.d2d_tf,   w.d2d_sp,   w.d3d_sp, w.d2d_sf};
    for (int k = 0; k < 13; ++k) {
      ++n;
      ok += got[k] == col.v[k] ? 1 : 0;
      o.expect(got[k] == col.v[k], std::string(col.scenario) + " " + names[k] + " = " +
                                       text::format_double(got[k]));
    }
  }
  const double t = seconds_since(t0);
  o.expect(t < 1.0, "runtime " + fmt(t, 3) + " s");
  o.summary = std::to_string(ok) + "/" + std::to_string(n) + " values match";
  return o;
}

// ---- 3: class mappings ----

struct MapRow {
  const char* raw;
  const char* mapped;  // "ignore" for dropped classes
};

struct MapTable {
  const char* config;
  const char* dataset;
  int num_classes;
  std::vector<MapRow> rows;
};

std::vector<MapTable> mapping_tables() {
  return {
      {"kitti_nuscenes", "semantickitti", 6,
       {{"unlabeled", "ignore"},       {"outlier", "ignore"},
        {"car", "vehicle"},            {"bicycle", "vehicle"},
        {"bus", "ignore"},             {"motorcycle", "vehicle"},
        {"on-rails", "ignore"},        {"truck", "vehicle"},
        {"other-vehicle", "ignore"},   {"person", "ignore"},
        {"bicyclist", "vehicle"},      {"motorcyclist", "vehicle"},
        {"road", "driveable-surface"}, {"parking", "driveable-surface"},
        {"sidewalk", "sidewalk"},      {"other-ground", "ignore"},
        {"building", "manmade"},       {"fence", "manmade"},
        {"other-structure", "ignore"}, {"lane-marking", "driveable-surface"},
        {"vegetation", "vegetation"},  {"trunk", "vegetation"},
        {"terrain", "terrain"},        {"pole", "manmade"},
        {"traffic-sign", "manmade"},   {"other-object", "manmade"},
        {"moving-car", "vehicle"},     {"moving-bicyclist", "vehicle"},
        {"moving-person", "ignore"},   {"moving-motorcyclist", "vehicle"},
        {"moving-on-rails", "ignore"}, {"moving-bus", "ignore"},
        {"moving-truck", "vehicle"},   {"moving-other-vehicle", "ignore"}}},
      {"kitti_nuscenes", "nuscenes-lidarseg", 6,
       {{"ignore", "ignore"},
        {"barrier", "ignore"},
        {"bicycle", "vehicle"},
        {"bus", "vehicle"},
        {"car", "vehicle"},
        {"construction-vehicle", "vehicle"},
        {"motorcycle", "vehicle"},
        {"pedestrian", "ignore"},
        {"traffic-cone", "ignore"},
        {"trailer", "vehicle"},
        {"truck", "vehicle"},
        {"driveable-surface", "driveable-surface"},
        {"other-flat", "ignore"},
        {"sidewalk", "sidewalk"},
        {"terrain", "terrain"},
        {"manmade", "manmade"},
        {"vegetation", "vegetation"}}},
      {"kitti_poss", "semantickitti", 12,
       {{"unlabeled", "ignore"},       {"outlier", "ignore"},          {"car", "car"},
        {"bicycle", "bike"},           {"bus", "car"},                 {"motorcycle", "car"},
        {"on-rails", "car"},           {"truck", "car"},               {"other-vehicle", "car"},
        {"person", "person"},          {"bicyclist", "bicyclist"},     {"motorcyclist", "bicyclist"},
        {"road", "ground"},            {"parking", "ground"},          {"sidewalk", "ground"},
        {"other-ground", "ground"},    {"building", "building"},       {"fence", "fence"},
        {"other-structure", "ignore"}, {"lane-marking", "ignore"},     {"vegetation", "vegetation"},
        {"trunk", "trunk"},            {"terrain", "ground"},          {"pole", "pole"},
        {"traffic-sign", "traffic-sign"}, {"other-object", "object"},  {"moving-car", "car"},
        {"moving-bicyclist", "bicyclist"}, {"moving-person", "person"}, {"moving-motorcyclist", "bicyclist"},
        {"moving-on-rails", "car"},    {"moving-bus", "car"},          {"moving-truck", "car"},
        {"moving-other-vehicle", "car"}}},
      {"kitti_poss", "semanticposs", 12,
       {{"unlabeled", "ignore"},
        {"1 person", "person"},
        {"2+ person", "person"},
        {"rider", "bicyclist"},
        {"car", "car"},
        {"trunk", "trunk"},
        {"plants", "vegetation"},
        {"traffic sign 1", "traffic-sign"},
        {"traffic sign 2", "traffic-sign"},
        {"traffic sign 3", "traffic-sign"},
        {"pole", "pole"},
        {"trashcan", "object"},
        {"building", "building"},
        {"cone/stone", "object"},
        {"fence", "fence"},
        {"bike", "bike"},
        {"ground", "ground"}}},
  };
}

Outcome criterion3() {
  Outcome o;
  const auto t0 = Clock::now();
  int n = 0, ok = 0;
  for (const auto& table : mapping_tables()) {
    const ClassMapping m = load_class_mapping(builtin_mapping_text(table.config), table.dataset);
    o.expect(m.num_classes() == table.num_classes,
             std::string(table.config) + " has " + std::to_string(m.num_classes()) + " classes");
    for (const auto& row : table.rows) {
      ++n;
      const std::string mapped(row.mapped);
      const std::int32_t want = mapped == "ignore" ? kIgnoreLabel : m.class_index(mapped);
      const std::int32_t got = m.map(m.raw_ids.at(row.raw));
      ok += got == want ? 1 : 0;
      o.expect(got == want, std::string(table.config) + "/" + table.dataset + " " + row.raw);
    }
  }
  const double t = seconds_since(t0);
  o.expect(t < 1.0, "runtime " + fmt(t, 3) + " s");
  o.summary = std::to_string(ok) + "/" + std::to_string(n) + " rows match";
  return o;
}

// ---- 4-6: property suites ----

Outcome suite_criterion(const char* suite, double budget_s) {
  Outcome o;
  const auto t0 = Clock::now();
  const auto results = run_verify(suite);
  int ok = 0;
  for (const auto& r : results) {
    ok += r.passed ? 1 : 0;
    o.expect(r.passed, r.name + (r.detail.empty() ? "" : " (" + r.detail + ")"));
  }
  const double t = seconds_since(t0);
  o.expect(t < budget_s, "runtime " + fmt(t, 1) + " s");
  o.summary = std::to_string(ok) + "/" + std::to_string(results.size()) + " checks, " + fmt(t, 1) + " s";
  return o;
}

// ---- 7: schedules and optimizers ----

Outcome criterion7() {
  Outcome o;
  const Schedule ms = Schedule::multi_step(2.5e-3, {80000, 90000}, 0.1);
  o.expect(std::abs(ms.lr_at(85000) - 2.5e-4) <= 1e-18, "multi-step lr at 85000 = " + text::format_double(ms.lr_at(85000)));
  const Schedule poly = Schedule::poly(1e-3, 1000, 0.9);
  o.expect(poly.lr_at(0) == 1e-3, "poly lr at 0");
  o.expect(poly.lr_at(1000) == 0.0, "poly lr at max_iter");
  o.expect(std::abs(poly.lr_at(500) - 1e-3 * std::pow(0.5, 0.9)) <= 1e-18, "poly lr at midpoint");

  // Two accumulated half-batch backward passes versus one full-batch pass.
  const std::vector<double> xs{0.3, -1.2, 2.5, 0.7}, ys{1.0, -0.5, 0.25, 2.0};
  auto half_loss = [&](const ad::Tensor& w, std::size_t lo) {
    ad::Tensor l;
    for (std::size_t i = lo; i < lo + 2; ++i) {
      const ad::Tensor r = ad::add_scalar(ad::scale(w, xs[i]), -ys[i]);
      l = l.defined() ? ad::add(l, ad::mul(r, r)) : ad::mul(r, r);
    }
    return l;
  };
  ad::Tensor wa = ad::Tensor::parameter({1}, {0.8});
  ad::Tensor wb = ad::Tensor::parameter({1}, {0.8});
  ad::backward(half_loss(wa, 0));
  ad::backward(half_loss(wa, 2));
  ad::backward(ad::add(half_loss(wb, 0), half_loss(wb, 2)));
  SgdState sa, sb;
  std::vector<ad::Tensor> pa{wa}, pb{wb};
  sgd_step(pa, sa, 0.01);
  sgd_step(pb, sb, 0.01);
  o.expect(wa.at(0) == wb.at(0), "SGD accumulation: " + text::format_double(wa.at(0)) + " vs " +
                                     text::format_double(wb.at(0)));

  // First adaptive step: m_hat = g, v_hat = g^2.
  const std::vector<double> p0{0.5, -1.5, 2.0}, g{0.3, -2.0, 1e-4};
  ad::Tensor p = ad::Tensor::parameter({3}, p0);
  std::copy(g.begin(), g.end(), p.mutable_grad().begin());
  AdamState st;
  std::vector<ad::Tensor> ps{p};
  const double lr = 1e-3;
  adam_step(ps, st, lr);
  for (std::size_t i = 0; i < 3; ++i) {
    const double m_hat = (1 - st.beta1) * g[i] / (1 - st.beta1);
    const double v_hat = (1 - st.beta2) * g[i] * g[i] / (1 - st.beta2);
    const double want = p0[i] - lr * m_hat / (std::sqrt(v_hat) + st.eps);
    o.expect(std::abs(p.at(i) - want) <= 1e-9, "adaptive first step coordinate " + std::to_string(i));
  }
  o.summary = o.passed ? "schedule and optimizer checks hold" : "";
  return o;
}

// ---- 8-9: end-to-end runs ----

constexpr const char* kScenario = "synthetic-64-to-32";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct VariantRun {
  std::string name;
  double miou_ensemble = 0.0;
  std::string run_log;
};

VariantRun train_variant(const std::string& name, const ScenarioConfig& config, const DataPools& pools,
                         const fs::path& dir) {
  RunOptions opt;
  opt.out_dir = dir.string();
  const RunResult r = run_training(config, pools, opt);
  return {name, r.test.iou_ensemble.miou, r.run_log};
}

ScenarioConfig variant_config(const ScenarioConfig& base, const std::string& name) {
  for (const auto& v : ablation_variants(base)) {
    if (v.name == name) return v.config;
  }
  return base;
}

Outcome criterion8(const fs::path& work) {
  Outcome o;
  const auto t0 = Clock::now();
  const ScenarioConfig full = builtin_scenario(kScenario);
  const DataPools pools = build_pools(full);
  const VariantRun base = train_variant("baseline", baseline_variant(full), pools, work / "baseline");
  const VariantRun nodis =
      train_variant("no-discriminator", variant_config(full, "no-discriminator"), pools, work / "no-discriminator");
  const VariantRun method = train_variant("full", full, pools, work / "full");
  const double t = seconds_since(t0);
  const double b = 100 * base.miou_ensemble, n = 100 * nodis.miou_ensemble, m = 100 * method.miou_ensemble;
  o.expect(m >= b + 2.0, "full - baseline = " + fmt(m - b, 2) + " mIoU points (need >= 2.0)");
  o.expect(b < n, "no-discriminator not above baseline");
  o.expect(n < m, "no-discriminator not below full");
  o.expect(t < 15 * 60, "runtime " + fmt(t, 0) + " s");
  o.summary = "ensemble mIoU baseline " + fmt(b, 2) + ", no-discriminator " + fmt(n, 2) + ", full " + fmt(m, 2) +
              " (" + fmt(t, 0) + " s)";
  return o;
}

Outcome criterion9(const fs::path& work) {
  Outcome o;
  const ScenarioConfig full = builtin_scenario(kScenario);
  auto run = [&](const fs::path& dir) {
    return train_variant("full", full, build_pools(full), dir);
  };
  const fs::path first = work / "full";
  if (!fs::exists(first / "run_log.jsonl")) run(first);
  const VariantRun again = run(work / "full-rerun");
  const std::string log_a = slurp(first / "run_log.jsonl");
  const std::string report_a = slurp(first / "report.json");
  o.expect(!log_a.empty(), "first run log missing");
  o.expect(log_a == again.run_log, "run logs differ");
  o.expect(report_a == slurp(work / "full-rerun" / "report.json"), "final reports differ");
  o.expect(slurp(first / "best_2d.ckpt") == slurp(work / "full-rerun" / "best_2d.ckpt"), "2D checkpoints differ");
  o.summary = "rerun ensemble mIoU " + text::format_double(again.miou_ensemble);
  return o;
}

const char* kTitles[] = {
    "",
    "domain statistics reproduce the reference cells",
    "loss-weight presets match the reference values",
    "class mappings match the mapping tables",
    "gradient checks over ops, losses and network stacks",
    "loss analytics",
    "geometry oracles",
    "schedule and optimizer checks",
    "directional end-to-end adaptation",
    "determinism of the end-to-end run",
};

int run_criterion(int k, const fs::path& work) {
  Outcome o;
  try {
    switch (k) {
      case 1: o = criterion1(); break;
      case 2: o = criterion2(); break;
      case 3: o = criterion3(); break;
      case 4: o = suite_criterion("gradcheck", 300); break;
      case 5: o = suite_criterion("losses", 60); break;
      case 6: o = suite_criterion("geometry", 120); break;
      case 7: o = criterion7(); break;
      case 8: o = criterion8(work); break;
      case 9: o = criterion9(work); break;
      default: return 2;
    }
  } catch (const std::exception& e) {
    o.passed = false;
    o.failures.push_back(std::string("exception: ") + e.what());
  }
  std::printf("%s criterion %d: %s", o.passed ? "PASS" : "FAIL", k, kTitles[k]);
  if (!o.summary.empty()) std::printf(" [%s]", o.summary.c_str());
  std::printf("\n");
  for (const auto& f : o.failures) std::printf("    %s\n", f.c_str());
  std::fflush(stdout);
  return o.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <1-9|all> [work-dir]\n", argv[0]);
    return 2;
  }
  const std::string which = argv[1];
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::path("acceptance_runs");
  int status = 0;
  if (which == "all") {
    for (int k = 1; k <= 9; ++k) status |= run_criterion(k, work);
  } else {
    status = run_criterion(std::stoi(which), work);
  }
  return status;
}
