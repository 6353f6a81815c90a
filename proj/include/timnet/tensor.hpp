#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace timnet {

/// Dense row-major tensor of doubles. Rank is dynamic but the library only
/// ever builds rank 0..3 ([scalar], [n], [rows x cols], [B x T x C]).
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(numel_of(shape_), 0.0) {}
  Tensor(std::vector<std::size_t> shape, double fill)
      : shape_(std::move(shape)), data_(numel_of(shape_), fill) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {}

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t numel() const { return data_.size(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(double v) { data_.assign(data_.size(), v); }

private:
  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace timnet
