#include "lionxa/verify.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "lionxa/error.hpp"
#include "lionxa/losses.hpp"
#include "lionxa/networks.hpp"
#include "lionxa/range_projection.hpp"
#include "lionxa/tensor.hpp"
#include "lionxa/voxel_grid.hpp"

namespace lionxa {

using ad::Tensor;

namespace {

constexpr double kGradTol = 1e-4;

std::vector<double> randn(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Random projection to a scalar so that no gradient cancels by symmetry.
Tensor project_scalar(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xabcdefull);
  return ad::sum(ad::mul(y, Tensor::constant(y.shape(), randn(rng, y.size()))));
}

struct OpCase {
  std::string name;
  ad::Shape shape;
  std::function<Tensor(const Tensor&)> fn;
  double offset = 0.0;  // shifts the random point (keeps log inputs positive)
};

std::vector<OpCase> op_cases() {
  auto fixed = [](ad::Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Tensor::constant(s, randn(rng, ad::numel(s)));
  };
  const std::vector<std::int64_t> idx{2, 0, -1, 3, 2};
  return {
      {"add", {3, 4}, [=](const Tensor& x) { return ad::add(x, fixed({3, 4}, 1)); }},
      {"sub", {3, 4}, [=](const Tensor& x) { return ad::sub(fixed({3, 4}, 2), x); }},
      {"mul", {3, 4}, [=](const Tensor& x) { return ad::mul(x, ad::add(x, fixed({3, 4}, 3))); }},
      {"scale", {5}, [](const Tensor& x) { return ad::add_scalar(ad::scale(x, -2.5), 1.0); }},
      {"relu", {4, 5}, [](const Tensor& x) { return ad::relu(x); }},
      {"leaky_relu", {4, 5}, [](const Tensor& x) { return ad::leaky_relu(x, 0.1); }},
      {"sigmoid", {6}, [](const Tensor& x) { return ad::sigmoid(x); }},
      {"log", {6}, [](const Tensor& x) { return ad::log(x); }, 4.0},
      {"exp", {6}, [](const Tensor& x) { return ad::exp(x); }},
      {"clamp_min", {6}, [](const Tensor& x) { return ad::clamp_min(x, 10.0); }, 12.0},
      {"mean", {3, 3}, [](const Tensor& x) { return ad::mean(ad::mul(x, x)); }},
      {"matmul", {3, 4}, [=](const Tensor& x) { return ad::matmul(x, fixed({4, 2}, 4)); }},
      {"matmul_rhs", {4, 2}, [=](const Tensor& x) { return ad::matmul(fixed({3, 4}, 5), x); }},
      {"add_row_bias", {3}, [=](const Tensor& b) { return ad::add_row_bias(fixed({2, 3}, 6), b); }},
      {"transpose", {2, 5}, [](const Tensor& x) { return ad::transpose(x); }},
      {"conv2d", {2, 4, 4},
       [=](const Tensor& x) { return ad::conv2d(x, fixed({3, 2, 3, 3}, 7), fixed({3}, 8)); }},
      {"conv2d_weight", {3, 2, 3, 3},
       [=](const Tensor& w) { return ad::conv2d(fixed({2, 4, 4}, 9), w, fixed({3}, 10)); }},
      {"max_pool2d", {2, 4, 4}, [](const Tensor& x) { return ad::max_pool2d(x); }},
      {"upsample_nearest2d", {2, 2, 3}, [](const Tensor& x) { return ad::upsample_nearest2d(x); }},
      {"instance_norm_2d", {2, 3, 3},
       [=](const Tensor& x) { return ad::instance_norm_2d(x, fixed({2}, 11), fixed({2}, 12)); }},
      {"softmax", {3, 4}, [](const Tensor& x) { return ad::softmax(x); }},
      {"gather_rows", {4, 3}, [=](const Tensor& x) { return ad::gather_rows(x, idx); }},
      {"scatter_rows", {5, 2}, [=](const Tensor& x) { return ad::scatter_rows(x, idx, 4); }},
      {"concat", {2, 3}, [=](const Tensor& x) { return ad::concat({x, fixed({2, 2}, 13), x}, 1); }},
      {"slice", {4, 3}, [](const Tensor& x) { return ad::slice(x, 0, 1, 2); }},
      {"reshape", {2, 6}, [](const Tensor& x) { return ad::reshape(x, {3, 4}); }},
  };
}

double max_err(double a, double b) { return std::max(a, b); }

Tensor param_randn(std::mt19937_64& rng, ad::Shape shape, double scale = 1.0) {
  const std::size_t n = ad::numel(shape);
  return Tensor::parameter(std::move(shape), randn(rng, n, scale));
}

std::vector<std::int32_t> random_labels(std::mt19937_64& rng, std::size_t n, int classes) {
  std::vector<std::int32_t> y(n);
  for (auto& v : y) v = static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(classes + 1)) - 1;
  return y;
}

std::vector<ad::GradCoord> sample_coords(std::mt19937_64& rng, std::span<const Tensor> params,
                                         int per_tensor) {
  std::vector<ad::GradCoord> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (int k = 0; k < per_tensor; ++k) coords.push_back({p, rng() % params[p].size()});
  }
  return coords;
}

// Each target returns the worst relative error for one seed.
struct GradTarget {
  std::string name;
  std::function<double(std::uint64_t)> run;
};

std::vector<GradTarget> loss_targets() {
  constexpr int kC = 4;
  auto probs = [](const Tensor& logits) { return ad::softmax(logits); };
  std::vector<GradTarget> t;
  t.push_back({"seg_loss_3d", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 Tensor x = param_randn(rng, {7, kC});
                 const auto y = random_labels(rng, 7, kC);
                 const auto w = class_weights(std::vector<std::int64_t>{4, 9, 1, 3});
                 std::vector<Tensor> ps{x};
                 return ad::grad_check([&] { return seg_loss_3d(x, y, w); }, ps);
               }});
  t.push_back({"seg_loss_2d", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 Tensor x = param_randn(rng, {kC, 2, 4});
                 const auto y = random_labels(rng, 8, kC);
                 std::vector<Tensor> ps{x};
                 return ad::grad_check([&] { return seg_loss_2d(x, y, ClassWeights::uniform(kC)); }, ps);
               }});
  t.push_back({"supervised_loss", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 std::vector<Tensor> ps;
                 auto term = [&] {
                   SegTerms s;
                   s.logits_3d = param_randn(rng, {5, kC});
                   s.labels_3d = random_labels(rng, 5, kC);
                   s.logits_2d = param_randn(rng, {kC, 2, 2});
                   s.labels_2d = random_labels(rng, 4, kC);
                   ps.push_back(s.logits_3d);
                   ps.push_back(s.logits_2d);
                   return s;
                 };
                 const std::vector<SegTerms> src{term(), term()}, tl{term()};
                 const auto w3 = class_weights(std::vector<std::int64_t>{2, 5, 1, 7});
                 const auto w2 = class_weights(std::vector<std::int64_t>{3, 3, 8, 1});
                 return ad::grad_check([&] { return supervised_loss(src, tl, 0.6, w3, w2); }, ps);
               }});
  t.push_back({"kl_divergence", [=](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 const Tensor p = probs(Tensor::constant({6, kC}, randn(rng, 6 * kC)));
                 Tensor q = param_randn(rng, {6, kC});
                 std::vector<Tensor> ps{q};
                 return ad::grad_check([&] { return kl_divergence(p, probs(q)); }, ps);
               }});
  t.push_back({"cross_modal_loss", [=](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 std::vector<Tensor> ps;
                 // Main predictions act as fixed teachers.
                 const Tensor main_2d = probs(Tensor::constant({5, kC}, randn(rng, 5 * kC)));
                 const Tensor main_3d = probs(Tensor::constant({5, kC}, randn(rng, 5 * kC)));
                 for (int k = 0; k < 2; ++k) ps.push_back(param_randn(rng, {5, kC}));
                 return ad::grad_check(
                     [&] { return cross_modal_loss(main_2d, probs(ps[0]), main_3d, probs(ps[1])); },
                     ps);
               }});
  t.push_back({"total_loss", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 std::vector<Tensor> ps;
                 for (int k = 0; k < 4; ++k) ps.push_back(param_randn(rng, {1}));
                 LossWeights w;
                 w.lambda_s = 0.8;
                 w.lambda_tl = 1.0;
                 w.lambda_t = 0.1;
                 return ad::grad_check(
                     [&] {
                       auto sq = [](const Tensor& x) { return ad::mul(x, x); };
                       return total_loss(sq(ps[0]), sq(ps[1]), sq(ps[2]), sq(ps[3]), w);
                     },
                     ps);
               }});
  t.push_back({"bce", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 Tensor z = param_randn(rng, {1});
                 const double y = static_cast<double>(rng() % 2);
                 std::vector<Tensor> ps{z};
                 return ad::grad_check([&] { return bce(ad::sigmoid(z), y); }, ps);
               }});
  t.push_back({"discriminator_loss", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 std::vector<Tensor> ps;
                 for (int k = 0; k < 4; ++k) ps.push_back(param_randn(rng, {1}));
                 return ad::grad_check(
                     [&] {
                       const std::vector<Tensor> s{ad::sigmoid(ps[0]), ad::sigmoid(ps[1])};
                       const std::vector<Tensor> tt{ad::sigmoid(ps[2]), ad::sigmoid(ps[3])};
                       return discriminator_loss(s, tt, 0.1, 0.2);
                     },
                     ps);
               }});
  t.push_back({"generator_adv_loss", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 std::vector<Tensor> ps;
                 for (int k = 0; k < 2; ++k) ps.push_back(param_randn(rng, {1}));
                 return ad::grad_check(
                     [&] {
                       const std::vector<Tensor> d{ad::sigmoid(ps[0]), ad::sigmoid(ps[1])};
                       return generator_adv_loss(d, 0.07);
                     },
                     ps);
               }});
  return t;
}

// KL treats its first argument as a constant teacher; finite differences must
// see the same function, so the teacher is evaluated once at the start point.
Tensor frozen(const std::function<Tensor()>& fn) {
  ad::NoGradGuard guard;
  const Tensor t = fn();
  return Tensor::constant(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
}

std::string err_detail(double err) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "max rel err %.3e", err);
  return buf;
}

// A small synthetic cloud with its voxelization, shared by the 3D stack checks.
struct TinyCloud {
  PointCloud cloud;
  VoxelSet voxels;
  std::vector<std::vector<std::int64_t>> neighbors;
};

TinyCloud tiny_cloud(std::mt19937_64& rng) {
  TinyCloud t;
  std::uniform_real_distribution<double> u(-0.6, 0.6), r(0.0, 1.0);
  for (int i = 0; i < 40; ++i) t.cloud.points.push_back({u(rng), u(rng), u(rng), r(rng)});
  t.voxels = voxelize(t.cloud, 0.3);
  t.neighbors = t.voxels.face_neighbors();
  return t;
}

std::vector<GradTarget> stack_targets() {
  constexpr int kC = 3;
  std::vector<GradTarget> t;
  t.push_back({"seg2d_stack", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 Seg2DNet net(kC, seed);
                 const Tensor img = Tensor::constant({5, 8, 8}, randn(rng, 5 * 64));
                 const auto labels = random_labels(rng, 64, kC);
                 auto params = net.parameters().tensors();
                 const auto coords = sample_coords(rng, params, 3);
                 const Tensor teacher = frozen([&] { return ad::softmax(pixels_as_rows(net.forward(img).main_logits)); });
                 return ad::grad_check(
                     [&] {
                       const auto o = net.forward(img);
                       return ad::add(seg_loss_2d(o.main_logits, labels, ClassWeights::uniform(kC)),
                                      kl_divergence(teacher, ad::softmax(pixels_as_rows(o.mimicry_logits))));
                     },
                     params, 1e-5, coords);
               }});
  t.push_back({"seg3d_stack", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 Seg3DNet net(kC, seed);
                 const TinyCloud tc = tiny_cloud(rng);
                 const auto labels = random_labels(rng, tc.voxels.size(), kC);
                 auto params = net.parameters().tensors();
                 const auto coords = sample_coords(rng, params, 4);
                 const Tensor teacher = frozen(
                     [&] { return ad::softmax(net.forward(tc.voxels, tc.cloud, tc.neighbors).main_logits); });
                 return ad::grad_check(
                     [&] {
                       const auto o = net.forward(tc.voxels, tc.cloud, tc.neighbors);
                       return ad::add(seg_loss_3d(o.main_logits, labels, ClassWeights::uniform(kC)),
                                      kl_divergence(teacher, ad::softmax(o.mimicry_logits)));
                     },
                     params, 1e-5, coords);
               }});
  t.push_back({"discriminator_stack", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 DiscriminatorSet discs(kC, seed);
                 const Tensor feat = Tensor::constant({Seg2DNet::kFeatureChannels, 4, 4},
                                                      randn(rng, Seg2DNet::kFeatureChannels * 16));
                 const Tensor pa = ad::softmax(Tensor::constant({6, kC}, randn(rng, 6 * kC)));
                 const Tensor pb = ad::softmax(Tensor::constant({6, kC}, randn(rng, 6 * kC)));
                 auto params = discs.parameters().tensors();
                 const auto coords = sample_coords(rng, params, 4);
                 return ad::grad_check(
                     [&] {
                       const std::vector<Tensor> s{discs.forward(DiscriminatorKind::kFeature2D, feat),
                                                   discs.forward(DiscriminatorKind::kSource3DTarget2D, pa)};
                       const std::vector<Tensor> tt{discs.forward(DiscriminatorKind::kSource2DTarget3D, pb)};
                       return discriminator_loss(s, tt, 0.1, 0.2);
                     },
                     params, 1e-5, coords);
               }});
  // Generator path: adversarial loss back through a 2D network into its weights.
  t.push_back({"adversarial_stack", [](std::uint64_t seed) {
                 std::mt19937_64 rng(seed);
                 Seg2DNet net(kC, seed);
                 DiscriminatorSet discs(kC, seed + 7);
                 discs.parameters().set_requires_grad(false);
                 const Tensor img = Tensor::constant({5, 8, 8}, randn(rng, 5 * 64));
                 auto params = net.parameters().tensors();
                 const auto coords = sample_coords(rng, params, 3);
                 return ad::grad_check(
                     [&] {
                       const auto o = net.forward(img);
                       const std::vector<Tensor> d{
                           discs.forward(DiscriminatorKind::kFeature2D, o.features),
                           discs.forward(DiscriminatorKind::kSource3DTarget2D,
                                         ad::softmax(pixels_as_rows(o.main_logits)))};
                       return generator_adv_loss(d, 0.07);
                     },
                     params, 1e-5, coords);
               }});
  return t;
}

void gradcheck_suite(std::vector<CheckResult>& out, const VerifyOptions& opt) {
  for (const auto& c : op_cases()) {
    double worst = 0.0;
    for (int seed = 0; seed < opt.grad_seeds; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      auto point = randn(rng, ad::numel(c.shape));
      for (auto& v : point) v += c.offset;
      const ad::Shape shape = c.shape;
      const auto fn = c.fn;
      worst = max_err(worst, ad::grad_check(
                                 [&](const Tensor& x) {
                                   return project_scalar(fn(ad::reshape(x, shape)), seed);
                                 },
                                 point));
    }
    out.push_back({"gradcheck", "op_" + c.name, worst < kGradTol, err_detail(worst)});
  }
  auto run_targets = [&](const std::vector<GradTarget>& targets, const std::string& prefix) {
    for (const auto& t : targets) {
      double worst = 0.0;
      for (int seed = 0; seed < opt.grad_seeds; ++seed) {
        worst = max_err(worst, t.run(2000 + static_cast<std::uint64_t>(seed)));
      }
      out.push_back({"gradcheck", prefix + t.name, worst < kGradTol, err_detail(worst)});
    }
  };
  run_targets(loss_targets(), "loss_");
  run_targets(stack_targets(), "");
}

void losses_suite(std::vector<CheckResult>& out, const VerifyOptions& opt) {
  const int c = 5;
  const Tensor zeros = Tensor::zeros({4, static_cast<std::size_t>(c)});
  const std::vector<std::int32_t> labels{0, 1, 4, 2};
  const double ce = seg_loss_3d(zeros, labels, ClassWeights::uniform(c)).item();
  out.push_back({"losses", "uniform_ce_is_ln_c", std::abs(ce - std::log(c)) < 1e-9,
                 "got " + std::to_string(ce)});

  std::mt19937_64 rng(5);
  const Tensor p = ad::softmax(Tensor::constant({6, 4}, randn(rng, 24)));
  const Tensor q = ad::softmax(Tensor::constant({6, 4}, randn(rng, 24)));
  out.push_back({"losses", "kl_self_is_zero", kl_divergence(p, p).item() == 0.0, ""});
  bool nonneg = true;
  for (int k = 0; k < opt.kl_pairs; ++k) {
    const Tensor a = ad::softmax(Tensor::constant({3, 4}, randn(rng, 12, 2.0)));
    const Tensor b = ad::softmax(Tensor::constant({3, 4}, randn(rng, 12, 2.0)));
    nonneg = nonneg && kl_divergence(a, b).item() >= 0.0;
  }
  out.push_back({"losses", "kl_nonnegative", nonneg && kl_divergence(p, q).item() > 0.0, ""});
  const double b = bce(Tensor::scalar(0.5), 1.0).item();
  out.push_back({"losses", "bce_half_is_ln2", std::abs(b - std::numbers::ln2) < 1e-12,
                 "got " + std::to_string(b)});

  const auto logits = randn(rng, 4 * c);
  auto shifted = logits;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 3.0 * static_cast<double>(i / c);
  const auto w = class_weights(std::vector<std::int64_t>{5, 1, 9, 2, 3});
  const double l0 = seg_loss_3d(Tensor::constant({4, static_cast<std::size_t>(c)}, logits), labels, w).item();
  const double l1 = seg_loss_3d(Tensor::constant({4, static_cast<std::size_t>(c)}, shifted), labels, w).item();
  out.push_back({"losses", "softmax_shift_invariance", std::abs(l0 - l1) < 1e-9,
                 "difference " + std::to_string(std::abs(l0 - l1))});
}

// Sensor and scene vary with the seed.
std::pair<PointCloud, SensorSpec> scan_for(std::uint64_t seed, bool street) {
  SceneParams params;
  params.street = street;
  params.ground_z = -1.5 - 0.05 * static_cast<double>(seed % 7);
  const SensorSpec sensor = seed % 2 == 0 ? SensorSpec::uniform(16, 256, 2.0, -24.8, 80.0)
                                          : SensorSpec::uniform(32, 512, 10.0, -30.0, 70.0);
  const Scene scene = synth_scene(seed, params);
  return {simulate_raw(scene, sensor, seed + 1).cloud, sensor};
}

void geometry_suite(std::vector<CheckResult>& out, const VerifyOptions& opt) {
  bool partition = true, min_range = true, lift = true, dedup = true;
  for (int k = 0; k < opt.scans; ++k) {
    const auto seed = static_cast<std::uint64_t>(k);
    auto [cloud, sensor] = scan_for(seed, true);
    const auto [img, map] = project(cloud, sensor, sensor.horizontal_resolution);
    std::vector<int> seen(cloud.size(), 0);
    for (std::size_t f = 0; f < map.pixel_to_points.size(); ++f) {
      double best = std::numeric_limits<double>::infinity();
      std::int64_t best_i = -1;
      for (auto i : map.pixel_to_points[f]) {
        ++seen[static_cast<std::size_t>(i)];
        if (map.point_to_pixel[static_cast<std::size_t>(i)] != static_cast<std::int64_t>(f)) partition = false;
        const auto& q = cloud.points[static_cast<std::size_t>(i)];
        const double r = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
        if (r < best) {
          best = r;
          best_i = i;
        }
      }
      if (img.point_index[f] != best_i) min_range = false;
    }
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      if (seen[i] != (map.point_to_pixel[i] >= 0 ? 1 : 0)) partition = false;
    }
    const auto lifted = lift_features(img.data, kRangeChannels, map);
    for (std::size_t i = 0; i < cloud.size() && lift; ++i) {
      const auto f = map.point_to_pixel[i];
      for (int ch = 0; ch < kRangeChannels; ++ch) {
        const double want = f < 0 ? 0.0 : img.data[ch * img.pixels() + static_cast<std::size_t>(f)];
        if (lifted[i * kRangeChannels + ch] != want) lift = false;
      }
    }
    const VoxelSet vs = voxelize(cloud, 0.2);
    std::map<VoxelKey, std::int64_t> first;
    for (std::size_t i = 0; i < cloud.size(); ++i) first.emplace(voxel_key(cloud.points[i], 0.2), i);
    if (first.size() != vs.size()) dedup = false;
    for (std::size_t v = 0; v < vs.size() && dedup; ++v) {
      if (first.at(vs.keys[v]) != vs.representative[v]) dedup = false;
    }
  }
  out.push_back({"geometry", "projection_partition", partition, ""});
  out.push_back({"geometry", "min_range_representative", min_range, ""});
  out.push_back({"geometry", "lift_features_brute_force", lift, ""});
  out.push_back({"geometry", "voxel_dedup_brute_force", dedup, ""});

  double worst = 0.0;
  std::size_t checked = 0;
  for (int k = 0; k < opt.scans; ++k) {
    const auto seed = static_cast<std::uint64_t>(k);
    auto [cloud, sensor] = scan_for(seed, false);
    const RangeImage img = compute_normals(project(cloud, sensor, sensor.horizontal_resolution).first);
    const std::size_t n = img.pixels();
    for (std::size_t f = 0; f < n; ++f) {
      const double nz = img.data[kNormalZ * n + f];
      if (!img.valid[f] || nz == 0.0) continue;
      ++checked;
      worst = std::max({worst, std::abs(img.data[kNormalX * n + f]), std::abs(img.data[kNormalY * n + f]),
                        std::abs(nz - 1.0)});
    }
  }
  out.push_back({"geometry", "plane_normal_recovery", checked > 0 && worst < 1e-3,
                 std::to_string(checked) + " pixels, max deviation " + std::to_string(worst)});
}

}  // namespace

const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> kSuites{"gradcheck", "geometry", "losses"};
  return kSuites;
}

std::vector<CheckResult> run_verify(std::string_view suite, const VerifyOptions& options) {
  std::vector<CheckResult> out;
  const bool all = suite == "all";
  bool known = all;
  if (all || suite == "gradcheck") {
    known = true;
    gradcheck_suite(out, options);
  }
  if (all || suite == "geometry") {
    known = true;
    geometry_suite(out, options);
  }
  if (all || suite == "losses") {
    known = true;
    losses_suite(out, options);
  }
  if (!known) throw Error(ErrorCode::kConfigError, "unknown suite '" + std::string(suite) + "'");
  return out;
}

}  // namespace lionxa
