#include "sagate/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace sagate {

ConfusionMatrix::ConfusionMatrix(int64_t num_classes) : k_(num_classes) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
  counts_.assign(static_cast<size_t>(k_ * k_), 0);
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt, int32_t ignore) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w)
    throw ShapeMismatch("confusion accumulate: prediction/ground-truth extent mismatch");
  for (size_t i = 0; i < gt.v.size(); ++i) {
    const int32_t g = gt.v[i];
    if (g == ignore) continue;
    const int32_t p = pred.v[i];
    if (g < 0 || g >= k_ || p < 0 || p >= k_)
      throw Error("label out of range in confusion accumulate");
    ++counts_[static_cast<size_t>(g * k_ + p)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeMismatch("confusion merge: class count mismatch");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

uint64_t ConfusionMatrix::total() const {
  uint64_t t = 0;
  for (uint64_t c : counts_) t += c;
  return t;
}

std::vector<double> ConfusionMatrix::per_class_iou() const {
  std::vector<double> iou(static_cast<size_t>(k_), std::nan(""));
  for (int64_t c = 0; c < k_; ++c) {
    uint64_t row = 0, col = 0;
    for (int64_t j = 0; j < k_; ++j) {
      row += at(c, j);
      col += at(j, c);
    }
    const uint64_t inter = at(c, c);
    const uint64_t uni = row + col - inter;
    if (uni > 0) iou[static_cast<size_t>(c)] = static_cast<double>(inter) / static_cast<double>(uni);
  }
  return iou;
}

double ConfusionMatrix::miou() const {
  if (total() == 0) throw EmptyMatrix("mIoU of an empty confusion matrix");
  double acc = 0;
  int64_t n = 0;
  for (double v : per_class_iou())
    if (!std::isnan(v)) {
      acc += v;
      ++n;
    }
  if (n == 0) throw EmptyMatrix("mIoU: no class has a nonzero union");
  return acc / static_cast<double>(n);
}

double ConfusionMatrix::pixel_acc() const {
  const uint64_t tot = total();
  if (tot == 0) throw EmptyMatrix("pixel accuracy of an empty confusion matrix");
  uint64_t diag = 0;
  for (int64_t c = 0; c < k_; ++c) diag += at(c, c);
  return static_cast<double>(diag) / static_cast<double>(tot);
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "class,iou\n";
  char buf[64];
  const auto iou = per_class_iou();
  for (int64_t c = 0; c < k_; ++c) {
    if (std::isnan(iou[static_cast<size_t>(c)])) {
      os << c << ",absent\n";
    } else {
      std::snprintf(buf, sizeof(buf), "%.10g", iou[static_cast<size_t>(c)]);
      os << c << ',' << buf << '\n';
    }
  }
  std::snprintf(buf, sizeof(buf), "%.10g", miou());
  os << "miou," << buf << '\n';
  std::snprintf(buf, sizeof(buf), "%.10g", pixel_acc());
  os << "pixel_acc," << buf << '\n';
  return os.str();
}

std::string ConfusionMatrix::to_text() const {
  std::ostringstream os;
  char buf[96];
  const auto iou = per_class_iou();
  for (int64_t c = 0; c < k_; ++c) {
    if (std::isnan(iou[static_cast<size_t>(c)]))
      std::snprintf(buf, sizeof(buf), "  class %2lld  IoU      absent\n",
                    static_cast<long long>(c));
    else
      std::snprintf(buf, sizeof(buf), "  class %2lld  IoU  %10.4f\n", static_cast<long long>(c),
                    iou[static_cast<size_t>(c)]);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "  mIoU       %10.4f\n  pixel acc  %10.4f\n", miou(),
                pixel_acc());
  os << buf;
  return os.str();
}

}  // namespace sagate
