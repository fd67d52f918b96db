#include "lionxa/metrics.hpp"

#include <cmath>
#include <limits>

#include "lionxa/error.hpp"
#include "lionxa/lidar_io.hpp"

namespace lionxa {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

void ConfusionMatrix::accumulate(std::span<const std::int32_t> predictions,
                                 std::span<const std::int32_t> labels) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorCode::kShapeError, std::to_string(predictions.size()) + " predictions vs " +
                                            std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto gt = labels[i], pred = predictions[i];
    if (gt == kIgnoreLabel) continue;
    if (gt < 0 || gt >= classes_ || pred < 0 || pred >= classes_) {
      throw Error(ErrorCode::kShapeError, "class index out of range in confusion matrix");
    }
    ++counts_[static_cast<std::size_t>(gt) * classes_ + pred];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw Error(ErrorCode::kShapeError, "class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

IouResult iou(const ConfusionMatrix& cm) {
  const int c = cm.num_classes();
  if (c == 0 || cm.total() == 0) throw Error(ErrorCode::kEmptyMatrix, "confusion matrix is empty");
  IouResult out;
  double acc = 0.0;
  int counted = 0;
  for (int k = 0; k < c; ++k) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::int64_t tp = cm.at(k, k);
    const std::int64_t uni = row + col - tp;
    if (uni == 0) {
      out.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double v = static_cast<double>(tp) / static_cast<double>(uni);
    out.per_class.push_back(v);
    acc += v;
    ++counted;
  }
  out.miou = acc / counted;
  return out;
}

std::vector<double> ensemble(std::span<const double> p2d, std::span<const double> p3d) {
  if (p2d.size() != p3d.size()) throw Error(ErrorCode::kShapeError, "ensemble size mismatch");
  std::vector<double> out(p2d.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (p2d[i] + p3d[i]);
  return out;
}

std::vector<std::int32_t> argmax_rows(std::span<const double> rows, int num_classes) {
  const auto c = static_cast<std::size_t>(num_classes);
  if (c == 0 || rows.size() % c != 0) throw Error(ErrorCode::kShapeError, "ragged probability rows");
  std::vector<std::int32_t> out(rows.size() / c);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (rows[i * c + k] > rows[i * c + best]) best = k;
    }
    out[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

DomainStats domain_stats(double baseline, double method, double oracle) {
  if (oracle == baseline) {
    throw Error(ErrorCode::kDegenerateGap, "oracle and baseline coincide; closed gap undefined");
  }
  DomainStats s;
  s.advantage = method - baseline;
  s.gap = oracle - baseline;
  s.closed_gap_percent = 100.0 * s.advantage / s.gap;
  return s;
}

}  // namespace lionxa
