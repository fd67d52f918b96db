#include "lionxa/losses.hpp"

#include <cmath>

#include "lionxa/error.hpp"
#include "lionxa/lidar_io.hpp"

namespace lionxa {

using ad::Tensor;

double ClassWeights::of(std::int32_t label) const {
  if (label == kIgnoreLabel) return 0.0;
  return w.at(static_cast<std::size_t>(label));
}

ClassWeights ClassWeights::uniform(int num_classes) {
  return ClassWeights{std::vector<double>(static_cast<std::size_t>(num_classes), 1.0)};
}

ClassWeights class_weights(std::span<const std::int64_t> histogram) {
  std::int64_t total = 0;
  for (auto c : histogram) {
    if (c < 0) throw Error(ErrorCode::kEmptyHistogram, "negative class count");
    total += c;
  }
  if (total == 0) throw Error(ErrorCode::kEmptyHistogram, "all class counts are zero");
  ClassWeights out;
  for (auto c : histogram) {
    const double f = static_cast<double>(c) / static_cast<double>(total);
    out.w.push_back(1.0 / std::log(1.02 + f));
  }
  return out;
}

Tensor seg_loss_3d(const Tensor& logits, std::span<const std::int32_t> labels,
                   const ClassWeights& weights) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error(ErrorCode::kShapeError, "logits " + ad::shape_str(logits.shape()) + " vs " +
                                            std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (weights.w.size() != c) throw Error(ErrorCode::kShapeError, "class weight count mismatch");
  std::size_t counted = 0;
  for (auto y : labels) {
    if (y == kIgnoreLabel) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw Error(ErrorCode::kShapeError, "label " + std::to_string(y) + " out of range");
    }
    ++counted;
  }
  if (counted == 0) throw Error(ErrorCode::kEmptyLoss, "every point is ignored");
  std::vector<double> mask(n * c, 0.0);
  const double inv = 1.0 / static_cast<double>(counted);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != kIgnoreLabel) mask[i * c + labels[i]] = -weights.of(labels[i]) * inv;
  }
  const Tensor logp = ad::log(ad::clamp_min(ad::softmax(logits), kProbFloor));
  return ad::sum(ad::mul(logp, Tensor::constant({n, c}, std::move(mask))));
}

Tensor seg_loss_2d(const Tensor& logits, std::span<const std::int32_t> label_image,
                   const ClassWeights& weights) {
  if (logits.rank() != 3) {
    throw Error(ErrorCode::kShapeError, "expected [C,H,W] logits, got " +
                                            ad::shape_str(logits.shape()));
  }
  const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  if (label_image.size() != hw) throw Error(ErrorCode::kShapeError, "label image size mismatch");
  return seg_loss_3d(ad::transpose(ad::reshape(logits, {c, hw})), label_image, weights);
}

namespace {

Tensor dataset_term(std::span<const SegTerms> batch, double lambda_p, const ClassWeights& w3,
                    const ClassWeights& w2) {
  Tensor acc;
  for (const auto& s : batch) {
    Tensor l = seg_loss_3d(s.logits_3d, s.labels_3d, w3);
    if (lambda_p != 0.0) l = ad::add(l, ad::scale(seg_loss_2d(s.logits_2d, s.labels_2d, w2), lambda_p));
    acc = acc.defined() ? ad::add(acc, l) : l;
  }
  return ad::scale(acc, 1.0 / static_cast<double>(batch.size()));
}

}  // namespace

Tensor supervised_loss(std::span<const SegTerms> source, std::span<const SegTerms> target_like,
                       double lambda_p, const ClassWeights& weights_3d,
                       const ClassWeights& weights_2d) {
  if (source.empty()) throw Error(ErrorCode::kEmptyInput, "supervised loss needs a source batch");
  Tensor out = dataset_term(source, lambda_p, weights_3d, weights_2d);
  if (!target_like.empty()) {
    out = ad::add(out, dataset_term(target_like, lambda_p, weights_3d, weights_2d));
  }
  return out;
}

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape() || p.rank() != 2 || p.dim(0) == 0) {
    throw Error(ErrorCode::kShapeError, "KL needs equal non-empty [N,C] inputs, got " +
                                            ad::shape_str(p.shape()) + " and " +
                                            ad::shape_str(q.shape()));
  }
  std::vector<double> pv(p.values().begin(), p.values().end());
  std::vector<double> logp(pv.size());
  for (std::size_t i = 0; i < pv.size(); ++i) logp[i] = std::log(std::max(pv[i], kProbFloor));
  const Tensor pc = Tensor::constant(p.shape(), std::move(pv));
  const Tensor diff = ad::sub(Tensor::constant(p.shape(), std::move(logp)),
                              ad::log(ad::clamp_min(q, kProbFloor)));
  return ad::scale(ad::sum(ad::mul(pc, diff)), 1.0 / static_cast<double>(p.dim(0)));
}

Tensor cross_modal_loss(const Tensor& main_2d, const Tensor& mimicry_2d_to_3d,
                        const Tensor& main_3d, const Tensor& mimicry_3d_to_2d) {
  return ad::add(kl_divergence(main_3d, mimicry_2d_to_3d), kl_divergence(main_2d, mimicry_3d_to_2d));
}

void LossWeights::validate() const {
  const double all[] = {lambda_p, lambda_s, lambda_tl, lambda_t, g2d_tp, g3d_tp, g2d_tf,
                        d2d_tp,   d3d_tp,   d2d_tf,    d2d_sp,   d3d_sp, d2d_sf};
  for (double v : all) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::kConfigError, "loss weights must be finite and non-negative");
    }
  }
  if (lambda_p >= 1.0) throw Error(ErrorCode::kConfigError, "lambda_p must be below 1");
}

bool LossWeights::adversarial() const {
  return g2d_tp > 0 || g3d_tp > 0 || g2d_tf > 0 || d2d_tp > 0 || d3d_tp > 0 || d2d_tf > 0 ||
         d2d_sp > 0 || d3d_sp > 0 || d2d_sf > 0;
}

Tensor total_loss(const Tensor& supervised, const Tensor& xm_source, const Tensor& xm_target_like,
                  const Tensor& xm_target, const LossWeights& weights) {
  Tensor out = supervised;
  auto add_term = [&](const Tensor& t, double lambda) {
    if (t.defined() && lambda != 0.0) out = ad::add(out, ad::scale(t, lambda));
  };
  add_term(xm_source, weights.lambda_s);
  add_term(xm_target_like, weights.lambda_tl);
  add_term(xm_target, weights.lambda_t);
  return out;
}

Tensor bce(const Tensor& p, double y) {
  if (p.size() != 1) throw Error(ErrorCode::kShapeError, "bce expects a single probability");
  Tensor out;
  if (y != 0.0) out = ad::scale(ad::log(ad::clamp_min(p, kProbFloor)), -y);
  if (y != 1.0) {
    const Tensor neg = ad::scale(
        ad::log(ad::clamp_min(ad::add_scalar(ad::scale(p, -1.0), 1.0), kProbFloor)), -(1.0 - y));
    out = out.defined() ? ad::add(out, neg) : neg;
  }
  return out;
}

namespace {

Tensor mean_bce(std::span<const Tensor> outputs, double y) {
  if (outputs.empty()) throw Error(ErrorCode::kEmptyInput, "no discriminator outputs");
  Tensor acc;
  for (const auto& d : outputs) {
    const Tensor l = bce(d, y);
    acc = acc.defined() ? ad::add(acc, l) : l;
  }
  return ad::scale(acc, 1.0 / static_cast<double>(outputs.size()));
}

}  // namespace

Tensor discriminator_loss(std::span<const Tensor> d_source, std::span<const Tensor> d_target,
                          double lambda_source, double lambda_target) {
  return ad::add(ad::scale(mean_bce(d_source, 0.0), lambda_source),
                 ad::scale(mean_bce(d_target, 1.0), lambda_target));
}

Tensor generator_adv_loss(std::span<const Tensor> d_target, double lambda) {
  return ad::scale(mean_bce(d_target, 0.0), lambda);
}

}  // namespace lionxa
