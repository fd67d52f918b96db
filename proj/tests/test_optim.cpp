#include <gtest/gtest.h>

#include <cmath>

#include "lionxa/error.hpp"
#include "lionxa/optim.hpp"
#include "lionxa/trainer.hpp"

using namespace lionxa;
using ad::Tensor;

TEST(Sgd, QuadraticHandStep) {
  Tensor p = Tensor::parameter({1}, {3.0});
  ad::backward(ad::mul(p, p));
  SgdState st;
  st.momentum = 0.0;
  std::vector<Tensor> ps{p};
  sgd_step(ps, st, 0.1);
  EXPECT_NEAR(p.at(0), 2.4, 1e-15);
}

TEST(Sgd, ZeroGradientLeavesParameters) {
  Tensor p = Tensor::parameter({2}, {1.0, -2.0});
  p.zero_grad();
  SgdState st;
  std::vector<Tensor> ps{p};
  sgd_step(ps, st, 0.5);
  EXPECT_EQ(p.at(0), 1.0);
  EXPECT_EQ(p.at(1), -2.0);
}

TEST(Sgd, MomentumAccumulatesVelocity) {
  Tensor p = Tensor::parameter({1}, {0.0});
  SgdState st;
  st.momentum = 0.9;
  std::vector<Tensor> ps{p};
  for (int k = 0; k < 2; ++k) {
    p.zero_grad();
    p.mutable_grad()[0] = 1.0;
    sgd_step(ps, st, 1.0);
  }
  EXPECT_NEAR(p.at(0), -(1.0 + 1.9), 1e-15);
}

TEST(Sgd, HalfBatchAccumulationEqualsFullBatch) {
  auto loss = [](const Tensor& w, double x, double y) {
    const Tensor r = ad::add_scalar(ad::scale(w, x), -y);
    return ad::mul(r, r);
  };
  Tensor a = Tensor::parameter({1}, {0.5}), b = Tensor::parameter({1}, {0.5});
  ad::backward(loss(a, 1.5, 2.0));
  ad::backward(loss(a, -0.5, 1.0));
  ad::backward(ad::add(loss(b, 1.5, 2.0), loss(b, -0.5, 1.0)));
  SgdState sa, sb;
  std::vector<Tensor> pa{a}, pb{b};
  sgd_step(pa, sa, 0.05);
  sgd_step(pb, sb, 0.05);
  EXPECT_EQ(a.at(0), b.at(0));
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  Tensor p = Tensor::parameter({3}, {0.0, 0.0, 0.0});
  p.zero_grad();
  p.mutable_grad()[0] = 0.5;
  p.mutable_grad()[1] = -3.0;
  p.mutable_grad()[2] = 0.01;
  AdamState st;
  std::vector<Tensor> ps{p};
  adam_step(ps, st, 1e-3);
  EXPECT_NEAR(p.at(0), -1e-3, 1e-9);
  EXPECT_NEAR(p.at(1), 1e-3, 1e-9);
  EXPECT_NEAR(p.at(2), -1e-3, 1e-9);
}

TEST(Adam, ZeroGradientOnFreshStateDoesNotMove) {
  Tensor p = Tensor::parameter({2}, {1.0, 2.0});
  p.zero_grad();
  AdamState st;
  std::vector<Tensor> ps{p};
  adam_step(ps, st, 1e-2);
  EXPECT_EQ(p.at(0), 1.0);
  EXPECT_EQ(p.at(1), 2.0);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    Tensor p = Tensor::parameter({2}, {0.3, -0.7});
    AdamState st;
    std::vector<Tensor> ps{p};
    for (int k = 0; k < 5; ++k) {
      p.zero_grad();
      ad::backward(ad::sum(ad::mul(p, p)));
      adam_step(ps, st, 1e-2);
    }
    return std::vector<double>(p.values().begin(), p.values().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Schedule, MultiStepAt85000) {
  const Schedule s = Schedule::multi_step(2.5e-3, {80000, 90000}, 0.1);
  EXPECT_NEAR(s.lr_at(85000), 2.5e-4, 1e-18);
  EXPECT_EQ(s.lr_at(0), 2.5e-3);
  EXPECT_NEAR(s.lr_at(95000), 2.5e-5, 1e-18);
}

TEST(Schedule, PolyBoundaries) {
  const Schedule s = Schedule::poly(2.5e-4, 100000, 0.9);
  EXPECT_EQ(s.lr_at(0), 2.5e-4);
  EXPECT_EQ(s.lr_at(100000), 0.0);
  EXPECT_GT(s.lr_at(50000), 0.0);
}

TEST(SelectCheckpoint, MonotoneHistoryPicksLast) {
  const std::vector<ValRecord> h{{100, 0.1, 0.2, 0}, {200, 0.2, 0.3, 0}, {300, 0.3, 0.4, 0}};
  const auto c = select_checkpoint(h);
  EXPECT_EQ(c.best_2d_iter, 300);
  EXPECT_EQ(c.best_3d_iter, 300);
}

TEST(SelectCheckpoint, IndependentArgmax) {
  const std::vector<ValRecord> h{{100, 0.5, 0.2, 0}, {200, 0.4, 0.6, 0}, {300, 0.3, 0.5, 0}};
  const auto c = select_checkpoint(h);
  EXPECT_EQ(c.best_2d_iter, 100);
  EXPECT_EQ(c.best_3d_iter, 200);
}

TEST(SelectCheckpoint, TieGoesToEarlier) {
  const std::vector<ValRecord> h{{100, 0.5, 0.5, 0}, {200, 0.5, 0.5, 0}};
  const auto c = select_checkpoint(h);
  EXPECT_EQ(c.best_2d_iter, 100);
  EXPECT_EQ(c.best_3d_iter, 100);
}

TEST(SelectCheckpoint, EmptyHistoryThrows) {
  EXPECT_THROW(select_checkpoint(std::vector<ValRecord>{}), Error);
}
