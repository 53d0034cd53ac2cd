#include "fedema/metrics.hpp"

#include <algorithm>
#include <string>

namespace fedema {

std::vector<ClassCounts> confusion_from(std::span<const std::uint32_t> predicted,
                                        std::span<const std::uint32_t> truth, std::size_t class_count) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorKind::Dimension, "confusion_from: prediction and ground truth sizes differ");
  }
  std::vector<ClassCounts> counts(class_count);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto p = predicted[i], t = truth[i];
    if (p >= class_count || t >= class_count) {
      throw Error(ErrorKind::InvalidLabel, "confusion_from: label " + std::to_string(std::max(p, t)) +
                                               " >= class count " + std::to_string(class_count));
    }
    if (p == t) {
      ++counts[t].tp;
    } else {
      ++counts[p].fp;
      ++counts[t].fn;
    }
  }
  return counts;
}

void ConfusionMatrix::add_image(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth) {
  images_.push_back(confusion_from(predicted, truth, class_count_));
}

void ConfusionMatrix::add_counts(std::vector<ClassCounts> image) {
  if (image.size() != class_count_) throw Error(ErrorKind::Dimension, "add_counts: class count mismatch");
  images_.push_back(std::move(image));
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.class_count_ != class_count_) throw Error(ErrorKind::Dimension, "merge: class count mismatch");
  images_.insert(images_.end(), other.images_.begin(), other.images_.end());
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricBundle metric_bundle(const ConfusionMatrix& cm) {
  if (cm.image_count() == 0) throw Error(ErrorKind::InvalidInput, "metric_bundle: no images");
  MetricBundle out;
  std::size_t scored_classes = 0;
  for (std::size_t k = 0; k < cm.class_count(); ++k) {
    double iou = 0.0, pre = 0.0, rec = 0.0;
    std::size_t terms = 0;
    for (std::size_t n = 0; n < cm.image_count(); ++n) {
      const auto& c = cm.at(n, k);
      if (c.tp + c.fp + c.fn == 0) continue;
      iou += ratio(c.tp, c.tp + c.fp + c.fn);
      pre += ratio(c.tp, c.tp + c.fp);
      rec += ratio(c.tp, c.tp + c.fn);
      ++terms;
    }
    if (terms == 0) continue;
    const double t = static_cast<double>(terms);
    iou /= t;
    pre /= t;
    rec /= t;
    out.miou += iou;
    out.mprecision += pre;
    out.mrecall += rec;
    out.mf1 += pre + rec > 0.0 ? 2.0 * pre * rec / (pre + rec) : 0.0;
    ++scored_classes;
  }
  if (scored_classes == 0) return out;
  const double k = static_cast<double>(scored_classes);
  out.miou /= k;
  out.mprecision /= k;
  out.mrecall /= k;
  out.mf1 /= k;
  return out;
}

double forgetting_score(std::span<const std::vector<double>> past_phase_histories) {
  if (past_phase_histories.empty()) {
    throw Error(ErrorKind::NotApplicable, "forgetting_score needs at least one completed past phase");
  }
  double total = 0.0;
  for (const auto& history : past_phase_histories) {
    if (history.empty()) throw Error(ErrorKind::InvalidInput, "forgetting_score: empty phase history");
    total += *std::max_element(history.begin(), history.end()) - history.back();
  }
  return total / static_cast<double>(past_phase_histories.size());
}

}  // namespace fedema
