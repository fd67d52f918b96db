#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace lionxa {

// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0);

  void accumulate(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return classes_; }
  std::int64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * classes_ + pred]; }
  std::int64_t total() const;
  const std::vector<std::int64_t>& counts() const { return counts_; }
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int classes_ = 0;
  std::vector<std::int64_t> counts_;
};

struct IouResult {
  std::vector<double> per_class;  // NaN where TP+FP+FN = 0
  double miou = 0.0;              // mean over classes with a non-empty union
};

IouResult iou(const ConfusionMatrix& cm);

// Elementwise mean of two row-major [N,C] probability arrays.
std::vector<double> ensemble(std::span<const double> p2d, std::span<const double> p3d);

// Argmax per row of a row-major [N,C] array (ties: lowest class).
std::vector<std::int32_t> argmax_rows(std::span<const double> rows, int num_classes);

struct DomainStats {
  double advantage = 0.0;
  double gap = 0.0;
  double closed_gap_percent = 0.0;
};

DomainStats domain_stats(double baseline, double method, double oracle);

}  // namespace lionxa
