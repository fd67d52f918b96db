#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lionxa/tensor.hpp"

namespace lionxa {

struct SgdState {
  double momentum = 0.9;
  std::vector<std::vector<double>> velocity;  // sized on first step
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

// v <- momentum*v + g; p <- p - lr*v, reading each parameter's grad.
void sgd_step(std::span<ad::Tensor> params, SgdState& state, double lr);
// Bias-corrected adaptive update.
void adam_step(std::span<ad::Tensor> params, AdamState& state, double lr);

struct Schedule {
  enum class Kind { kMultiStep, kPoly };
  Kind kind = Kind::kMultiStep;
  double base_lr = 0.0;
  std::vector<std::int64_t> milestones;  // multi-step
  double gamma = 0.1;                    // multi-step
  std::int64_t max_iter = 1;             // poly
  double power = 0.9;                    // poly

  static Schedule multi_step(double base, std::vector<std::int64_t> milestones, double gamma);
  static Schedule poly(double base, std::int64_t max_iter, double power);

  double lr_at(std::int64_t iter) const;
};

}  // namespace lionxa
