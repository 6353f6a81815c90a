#include "timnet/metrics.hpp"

#include <numeric>

#include "timnet/errors.hpp"

namespace timnet::eval {

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < k; ++j) s += at(truth, j);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k; ++i) s += at(i, i);
  return s;
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, std::size_t k) {
  if (preds.size() != labels.size())
    throw ValidationError("confusion: preds and labels differ in length");
  ConfusionMatrix m(k);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int t = labels[i];
    const int p = preds[i];
    if (t < 0 || static_cast<std::size_t>(t) >= k || p < 0 || static_cast<std::size_t>(p) >= k)
      throw ValidationError("confusion: class index out of range at item " + std::to_string(i));
    ++m.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return m;
}

std::vector<double> per_class_recall(const ConfusionMatrix& m) {
  std::vector<double> recalls;
  for (std::size_t i = 0; i < m.k; ++i) {
    const std::uint64_t row = m.row_sum(i);
    if (row == 0) continue;
    recalls.push_back(static_cast<double>(m.at(i, i)) / static_cast<double>(row));
  }
  return recalls;
}

std::pair<double, double> uar_war(const ConfusionMatrix& m) {
  const auto recalls = per_class_recall(m);
  if (recalls.empty()) throw ValidationError("uar_war: confusion matrix has no populated rows");
  double sum = 0.0;
  for (double r : recalls) sum += r;
  const double uar = sum / static_cast<double>(recalls.size());
  const double war = static_cast<double>(m.trace()) / static_cast<double>(m.total());
  return {uar, war};
}

}  // namespace timnet::eval
