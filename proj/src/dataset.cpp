#include "timnet/dataset.hpp"

#include "timnet/errors.hpp"

namespace timnet {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.label_names = label_names;
  out.features.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    out.features.push_back(features[i]);
    out.labels.push_back(labels[i]);
    out.ids.push_back(i < ids.size() ? ids[i] : "");
    out.speakers.push_back(i < speakers.size() ? speakers[i] : "");
  }
  return out;
}

Tensor batch_tensor(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("batch_tensor: empty index set");
  const auto& first = data.features[indices[0]];
  Tensor out({indices.size(), first.rows, first.cols});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& f = data.features[indices[b]];
    if (f.rows != first.rows || f.cols != first.cols)
      throw ValidationError("batch_tensor: feature " + std::to_string(indices[b]) +
                            " has inconsistent shape; pad the dataset first");
    std::copy(f.data.begin(), f.data.end(), out.data() + b * first.rows * first.cols);
  }
  return out;
}

}  // namespace timnet
