#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sagate/labels.hpp"

namespace sagate {

/// K x K confusion counts, rows = ground truth, cols = prediction. Ignored
/// pixels contribute nothing, so the total count equals the number of
/// evaluated pixels.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int64_t num_classes);

  void accumulate(const LabelMap& pred, const LabelMap& gt, int32_t ignore = kIgnoreLabel);
  void merge(const ConfusionMatrix& other);

  uint64_t at(int64_t gt, int64_t pred) const {
    return counts_[static_cast<size_t>(gt * k_ + pred)];
  }
  uint64_t total() const;
  int64_t num_classes() const { return k_; }

  /// IoU per class; classes with zero union are reported as NaN and excluded
  /// from the mean.
  std::vector<double> per_class_iou() const;
  double miou() const;
  double pixel_acc() const;

  std::string to_csv() const;
  std::string to_text() const;

 private:
  int64_t k_;
  std::vector<uint64_t> counts_;
};

}  // namespace sagate
