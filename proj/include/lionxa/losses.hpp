#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lionxa/tensor.hpp"

namespace lionxa {

inline constexpr double kProbFloor = 1e-12;

struct ClassWeights {
  std::vector<double> w;

  int num_classes() const { return static_cast<int>(w.size()); }
  // Zero for kIgnoreLabel.
  double of(std::int32_t label) const;
  static ClassWeights uniform(int num_classes);
};

// w_c = 1 / ln(1.02 + f_c), f_c the class frequency.
ClassWeights class_weights(std::span<const std::int64_t> histogram);

// Weighted cross-entropy over rows of [N,C] logits, averaged over the
// non-ignored rows.
ad::Tensor seg_loss_3d(const ad::Tensor& logits, std::span<const std::int32_t> labels,
                       const ClassWeights& weights);
// Same over a [C,H,W] logit map and a row-major H*W label image.
ad::Tensor seg_loss_2d(const ad::Tensor& logits, std::span<const std::int32_t> label_image,
                       const ClassWeights& weights);

// One sample's worth of supervised terms.
struct SegTerms {
  ad::Tensor logits_3d;               // [V,C]
  std::vector<std::int32_t> labels_3d;
  ad::Tensor logits_2d;               // [C,H,W]
  std::vector<std::int32_t> labels_2d;
};

// L3D(S) + lp*L2D(S) + L3D(Tl) + lp*L2D(Tl); each dataset term is the mean
// over its samples, and an empty target-like span drops its terms.
ad::Tensor supervised_loss(std::span<const SegTerms> source, std::span<const SegTerms> target_like,
                           double lambda_p, const ClassWeights& weights_3d,
                           const ClassWeights& weights_2d);

// (1/N) sum_n sum_c P log(P/Q) with P detached and Q clamped at kProbFloor.
ad::Tensor kl_divergence(const ad::Tensor& p, const ad::Tensor& q);

// KL(main_3d || mimicry_2d_to_3d) + KL(main_2d || mimicry_3d_to_2d) over
// per-point probability rows.
ad::Tensor cross_modal_loss(const ad::Tensor& main_2d, const ad::Tensor& mimicry_2d_to_3d,
                            const ad::Tensor& main_3d, const ad::Tensor& mimicry_3d_to_2d);

struct LossWeights {
  double lambda_p = 0.0;
  double lambda_s = 0.0;
  double lambda_tl = 0.0;
  double lambda_t = 0.0;
  double g2d_tp = 0.0;
  double g3d_tp = 0.0;
  double g2d_tf = 0.0;
  double d2d_tp = 0.0;
  double d3d_tp = 0.0;
  double d2d_tf = 0.0;
  double d2d_sp = 0.0;
  double d3d_sp = 0.0;
  double d2d_sf = 0.0;

  bool operator==(const LossWeights&) const = default;
  // Throws ConfigError on a negative weight or lambda_p >= 1.
  void validate() const;
  bool adversarial() const;
};

// L_sup + ls*xm_S + ltl*xm_Tl + lt*xm_T; undefined cross-modal terms are skipped.
ad::Tensor total_loss(const ad::Tensor& supervised, const ad::Tensor& xm_source,
                      const ad::Tensor& xm_target_like, const ad::Tensor& xm_target,
                      const LossWeights& weights);

// -[y ln p + (1-y) ln(1-p)] on a one-element tensor, p clamped into (0,1).
ad::Tensor bce(const ad::Tensor& p, double y);

// ls * mean BCE(d_source, 0) + lt * mean BCE(d_target, 1).
ad::Tensor discriminator_loss(std::span<const ad::Tensor> d_source,
                              std::span<const ad::Tensor> d_target, double lambda_source,
                              double lambda_target);

// lambda * mean(-ln(1 - d_target)).
ad::Tensor generator_adv_loss(std::span<const ad::Tensor> d_target, double lambda);

}  // namespace lionxa
