#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedema/error.hpp"

namespace fedema {

struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// Per-class counts of one image.
std::vector<ClassCounts> confusion_from(std::span<const std::uint32_t> predicted,
                                        std::span<const std::uint32_t> truth, std::size_t class_count);

/// Per-image, per-class TP/FP/FN table.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t class_count) : class_count_(class_count) {}

  void add_image(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth);
  void add_counts(std::vector<ClassCounts> image);
  /// Appends other's images after this one's.
  void merge(const ConfusionMatrix& other);

  std::size_t class_count() const noexcept { return class_count_; }
  std::size_t image_count() const noexcept { return images_.size(); }
  const ClassCounts& at(std::size_t image, std::size_t cls) const { return images_.at(image).at(cls); }

 private:
  std::size_t class_count_;
  std::vector<std::vector<ClassCounts>> images_;
};

struct MetricBundle {
  double miou = 0.0;
  double mf1 = 0.0;
  double mprecision = 0.0;
  double mrecall = 0.0;
};

/// mIoU, mPre and mRec average per-(image, class) ratios over images, then classes.
/// A (image, class) pair with TP+FP+FN = 0 is left out of that class's average; a
/// class with no remaining pairs is left out of the class average. A ratio whose own
/// denominator is zero (but the pair is kept) scores 0. mF1 is computed from the
/// class-level precision and recall.
MetricBundle metric_bundle(const ConfusionMatrix& cm);

/// Mean over past phases of (best mIoU seen on that phase - final mIoU on that phase).
/// Each entry is one past phase's mIoU trajectory in round order.
double forgetting_score(std::span<const std::vector<double>> past_phase_histories);

}  // namespace fedema
