#pragma once

#include <span>
#include <string>
#include <vector>

#include "timnet/dsp.hpp"
#include "timnet/tensor.hpp"

namespace timnet {

/// In-memory labeled feature set. Features are expected to be padded to a
/// common frame count before batching.
struct Dataset {
  std::vector<dsp::FeatureMatrix> features;
  std::vector<int> labels;  // indices into label_names
  std::vector<std::string> ids;
  std::vector<std::string> speakers;           // may be empty strings
  std::vector<std::string> label_names;        // class index -> label

  std::size_t size() const { return features.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Stack the selected feature matrices into a [B,T,C] batch tensor.
Tensor batch_tensor(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace timnet
