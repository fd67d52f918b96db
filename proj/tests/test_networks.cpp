#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "lionxa/error.hpp"
#include "lionxa/lidar_io.hpp"
#include "lionxa/networks.hpp"
#include "lionxa/voxel_grid.hpp"

using namespace lionxa;
using ad::Tensor;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({u(rng), u(rng), u(rng) * 0.2, 0.5});
  return c;
}

std::size_t conv_params(std::size_t cin, std::size_t cout, std::size_t k, bool norm) {
  return cout * cin * k * k + cout + (norm ? 2 * cout : 0);
}

std::size_t linear_params(std::size_t in, std::size_t out) { return in * out + out; }

}  // namespace

TEST(Seg2DNet, OutputSpatialDimsMatchInput) {
  const Seg2DNet net(6, 1);
  const auto out = net.forward(Tensor::constant({5, 8, 16}, random_values(5 * 8 * 16, 2)));
  EXPECT_EQ(out.features.shape(), (ad::Shape{16, 8, 16}));
  EXPECT_EQ(out.main_logits.shape(), (ad::Shape{6, 8, 16}));
  EXPECT_EQ(out.mimicry_logits.shape(), (ad::Shape{6, 8, 16}));
}

TEST(Seg2DNet, SameInstanceGivesIdenticalOutputs) {
  const Seg2DNet net(4, 3);
  const Tensor img = Tensor::constant({5, 8, 8}, random_values(320, 4));
  const auto a = net.forward(img);
  const auto b = net.forward(img);
  EXPECT_TRUE(std::ranges::equal(a.main_logits.values(), b.main_logits.values()));
}

TEST(Seg2DNet, WrongChannelCountRejected) {
  const Seg2DNet net(4, 3);
  try {
    net.forward(Tensor::zeros({4, 8, 8}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeError);
  }
}

TEST(Seg2DNet, ParameterCount) {
  for (int c : {1, 6, 12}) {
    const auto cc = static_cast<std::size_t>(c);
    const std::size_t want = conv_params(5, 16, 3, true) + conv_params(16, 32, 3, true) +
                             conv_params(32, 64, 3, true) + conv_params(64, 32, 3, true) +
                             conv_params(32, 16, 3, true) + conv_params(16, 16, 3, true) +
                             2 * conv_params(16, cc, 1, false);
    EXPECT_EQ(Seg2DNet(c, 1).parameters().scalar_count(), want);
    EXPECT_EQ(want, 49632u + 34u * cc);
  }
}

TEST(Seg2DNet, ZeroingMimicryHeadLeavesMainLogits) {
  Seg2DNet net(3, 5);
  const Tensor img = Tensor::constant({5, 8, 8}, random_values(320, 6));
  const auto before = net.forward(img);
  for (auto& p : net.parameters().items()) {
    if (p.name.starts_with("head_mimicry")) {
      for (auto& v : p.tensor.mutable_values()) v = 0.0;
    }
  }
  const auto after = net.forward(img);
  EXPECT_TRUE(std::ranges::equal(before.main_logits.values(), after.main_logits.values()));
  EXPECT_FALSE(std::ranges::equal(before.mimicry_logits.values(), after.mimicry_logits.values()));
}

TEST(Seg2DNet, EveryParameterReceivesGradient) {
  Seg2DNet net(3, 7);
  const auto out = net.forward(Tensor::constant({5, 8, 8}, random_values(320, 8)));
  const Tensor w = Tensor::constant({3, 8, 8}, random_values(192, 9));
  ad::backward(ad::add(ad::sum(ad::mul(out.main_logits, w)), ad::sum(ad::mul(out.mimicry_logits, w))));
  for (const auto& p : net.parameters().items()) {
    double norm = 0;
    for (double g : p.tensor.grad()) norm += std::abs(g);
    EXPECT_GT(norm, 0.0) << p.name;
  }
}

TEST(Seg3DNet, SingleVoxelGivesOneRow) {
  const Seg3DNet net(5, 1);
  PointCloud c;
  c.points.push_back({0.01, 0.01, 0.01, 0.3});
  const auto out = net.forward(voxelize(c, 0.05), c);
  EXPECT_EQ(out.main_logits.shape(), (ad::Shape{1, 5}));
}

TEST(Seg3DNet, EmptyVoxelSetRejected) {
  const Seg3DNet net(5, 1);
  try {
    net.forward(VoxelSet{}, PointCloud{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
}

TEST(Seg3DNet, PointPermutationLeavesVoxelOutputsUnchanged) {
  const Seg3DNet net(4, 2);
  // one point per voxel so the representative is independent of order
  PointCloud c;
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 5; ++j) c.points.push_back({0.05 * i + 0.01, 0.05 * j + 0.01, 0.01, 0.1 * i});
  }
  std::vector<std::size_t> perm(c.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  PointCloud shuffled;
  for (auto k : perm) shuffled.points.push_back(c.points[k]);
  const VoxelSet va = voxelize(c, 0.05), vb = voxelize(shuffled, 0.05);
  const auto a = net.forward(va, c);
  const auto b = net.forward(vb, shuffled);
  ASSERT_EQ(va.size(), vb.size());
  for (std::size_t v = 0; v < vb.size(); ++v) {
    const auto it = std::ranges::find(va.keys, vb.keys[v]);
    ASSERT_NE(it, va.keys.end());
    const auto u = static_cast<std::size_t>(it - va.keys.begin());
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(a.main_logits.at(u * 4 + k), b.main_logits.at(v * 4 + k), 1e-12);
    }
  }
}

TEST(Seg3DNet, IsolatedVoxelNeighborMeanIsZero) {
  const Tensor rows = Tensor::constant({3, 2}, {1, 2, 3, 4, 5, 6});
  const std::vector<std::vector<std::int64_t>> nb{{}, {2}, {0, 1}};
  const Tensor m = neighbor_mean(rows, nb);
  EXPECT_EQ(m.at(0), 0.0);
  EXPECT_EQ(m.at(1), 0.0);
  EXPECT_EQ(m.at(2), 5.0);
  EXPECT_EQ(m.at(3), 6.0);
  EXPECT_EQ(m.at(4), 2.0);
  EXPECT_EQ(m.at(5), 3.0);
}

TEST(Seg3DNet, ParameterCount) {
  for (int c : {1, 6, 12}) {
    const auto cc = static_cast<std::size_t>(c);
    const std::size_t want = linear_params(4, 32) + linear_params(64, 64) + linear_params(64, 16) +
                             2 * linear_params(16, cc);
    EXPECT_EQ(Seg3DNet(c, 1).parameters().scalar_count(), want);
    EXPECT_EQ(want, 5360u + 34u * cc);
  }
}

TEST(Seg3DNet, ZeroingMimicryHeadLeavesMainLogits) {
  Seg3DNet net(3, 5);
  const PointCloud c = random_cloud(200, 6);
  const VoxelSet v = voxelize(c, 0.05);
  const auto before = net.forward(v, c);
  for (auto& p : net.parameters().items()) {
    if (p.name.starts_with("head_mimicry")) {
      for (auto& x : p.tensor.mutable_values()) x = 0.0;
    }
  }
  const auto after = net.forward(v, c);
  EXPECT_TRUE(std::ranges::equal(before.main_logits.values(), after.main_logits.values()));
  EXPECT_FALSE(std::ranges::equal(before.mimicry_logits.values(), after.mimicry_logits.values()));
}

TEST(Discriminators, OutputsStrictlyInsideUnitInterval) {
  const DiscriminatorSet d(5, 1);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const double f = d.forward(DiscriminatorKind::kFeature2D,
                               Tensor::constant({16, 4, 8}, random_values(512, s))).item();
    const Tensor probs = ad::softmax(Tensor::constant({10, 5}, random_values(50, s + 10)));
    const double a = d.forward(DiscriminatorKind::kSource3DTarget2D, probs).item();
    const double b = d.forward(DiscriminatorKind::kSource2DTarget3D, probs).item();
    for (double v : {f, a, b}) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Discriminators, PredictionDiscriminatorIgnoresRowOrder) {
  const DiscriminatorSet d(4, 2);
  const auto v = random_values(40, 3);
  std::vector<double> rev;
  for (int r = 9; r >= 0; --r) rev.insert(rev.end(), v.begin() + 4 * r, v.begin() + 4 * r + 4);
  const double a = d.forward(DiscriminatorKind::kSource2DTarget3D, Tensor::constant({10, 4}, v)).item();
  const double b = d.forward(DiscriminatorKind::kSource2DTarget3D, Tensor::constant({10, 4}, rev)).item();
  EXPECT_NEAR(a, b, 1e-14);
}

TEST(Discriminators, WrongInputShapeRejected) {
  const DiscriminatorSet d(4, 2);
  EXPECT_THROW(d.forward(DiscriminatorKind::kSource2DTarget3D, Tensor::zeros({10, 3})), Error);
  EXPECT_THROW(d.forward(DiscriminatorKind::kFeature2D, Tensor::zeros({8, 4, 4})), Error);
}

TEST(Discriminators, ParameterGradientsPassGradCheck) {
  DiscriminatorSet d(3, 4);
  const Tensor feat = Tensor::constant({16, 4, 4}, random_values(256, 5));
  const Tensor probs = ad::softmax(Tensor::constant({6, 3}, random_values(18, 6)));
  auto params = d.parameters().tensors();
  const double err = ad::grad_check(
      [&] {
        return ad::add(d.forward(DiscriminatorKind::kFeature2D, feat),
                       ad::add(d.forward(DiscriminatorKind::kSource3DTarget2D, probs),
                               d.forward(DiscriminatorKind::kSource2DTarget3D, probs)));
      },
      params);
  EXPECT_LT(err, 1e-4);
}

TEST(Checkpoint, RoundTripRestoresValues) {
  const Seg3DNet a(6, 1);
  Seg3DNet b(6, 2);
  ASSERT_NE(a.parameters().hash(), b.parameters().hash());
  const auto bytes = serialize_checkpoint(a.parameters());
  load_checkpoint(b.parameters(), bytes);
  EXPECT_EQ(a.parameters().hash(), b.parameters().hash());
  EXPECT_EQ(serialize_checkpoint(b.parameters()), bytes);
}

TEST(Checkpoint, ClassCountMismatchRejected) {
  const Seg3DNet a(6, 1);
  Seg3DNet b(5, 1);
  try {
    load_checkpoint(b.parameters(), serialize_checkpoint(a.parameters()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCheckpointMismatch);
  }
}

TEST(Checkpoint, TruncatedBytesRejected) {
  const Seg3DNet a(6, 1);
  Seg3DNet b(6, 1);
  auto bytes = serialize_checkpoint(a.parameters());
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(load_checkpoint(b.parameters(), bytes), Error);
}
