#include "lionxa/optim.hpp"

#include <algorithm>
#include <cmath>

#include "lionxa/error.hpp"

namespace lionxa {

namespace {

void size_buffers(std::vector<std::vector<double>>& buf, std::span<ad::Tensor> params) {
  if (buf.empty()) {
    for (const auto& p : params) buf.emplace_back(p.size(), 0.0);
    return;
  }
  if (buf.size() != params.size()) {
    throw Error(ErrorCode::kShapeError, "optimizer state holds " + std::to_string(buf.size()) +
                                            " buffers for " + std::to_string(params.size()) +
                                            " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (buf[i].size() != params[i].size()) {
      throw Error(ErrorCode::kShapeError, "optimizer buffer shape mismatch at parameter " +
                                              std::to_string(i));
    }
  }
}

}  // namespace

void sgd_step(std::span<ad::Tensor> params, SgdState& state, double lr) {
  size_buffers(state.velocity, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = params[i].grad();
    if (g.empty()) continue;  // never reached by backward
    auto p = params[i].mutable_values();
    auto& v = state.velocity[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = state.momentum * v[k] + g[k];
      p[k] -= lr * v[k];
    }
  }
}

void adam_step(std::span<ad::Tensor> params, AdamState& state, double lr) {
  size_buffers(state.m, params);
  size_buffers(state.v, params);
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = params[i].grad();
    if (g.empty()) continue;
    auto p = params[i].mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.eps);
    }
  }
}

Schedule Schedule::multi_step(double base, std::vector<std::int64_t> milestones, double gamma) {
  Schedule s;
  s.kind = Kind::kMultiStep;
  s.base_lr = base;
  s.milestones = std::move(milestones);
  std::sort(s.milestones.begin(), s.milestones.end());
  s.gamma = gamma;
  return s;
}

Schedule Schedule::poly(double base, std::int64_t max_iter, double power) {
  Schedule s;
  s.kind = Kind::kPoly;
  s.base_lr = base;
  s.max_iter = max_iter;
  s.power = power;
  return s;
}

double Schedule::lr_at(std::int64_t iter) const {
  if (kind == Kind::kMultiStep) {
    double lr = base_lr;
    for (auto m : milestones) {
      if (iter >= m) lr *= gamma;
    }
    return lr;
  }
  const double t = std::clamp(static_cast<double>(iter) / static_cast<double>(max_iter), 0.0, 1.0);
  return base_lr * std::pow(1.0 - t, power);
}

}  // namespace lionxa
