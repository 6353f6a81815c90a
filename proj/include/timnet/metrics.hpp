#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace timnet::eval {

/// K x K counts; rows are the true class, columns the predicted class.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : k(classes), counts(classes * classes, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * k + pred]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * k + pred]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t trace() const;
};

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, std::size_t k);

/// Per-class recalls for classes that appear at least once; classes with an
/// empty row are skipped (and excluded from the UAR mean).
std::vector<double> per_class_recall(const ConfusionMatrix& m);

/// (UAR, WAR): mean of per-class recalls over nonempty classes, and overall
/// accuracy trace/total.
std::pair<double, double> uar_war(const ConfusionMatrix& m);

}  // namespace timnet::eval
