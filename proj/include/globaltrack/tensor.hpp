#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gt {

/// Dense row-major tensor of doubles. Feature maps are stored as
/// [N, C, H, W], ROI features as [N, C, k, k], vectors as [N].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor scalar(double value) { return Tensor({}, {value}); }
  // Uniform in [-a, a); used for weight init.
  static Tensor uniform(std::vector<int64_t> shape, double a, std::mt19937_64& rng);

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t ndim() const { return shape_.size(); }
  int64_t numel() const { return numel_; }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Indexed access for the common ranks.
  double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double& at(int64_t n, int64_t c, int64_t y, int64_t x) {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }
  double at(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
  }

  bool scalar_like() const { return numel_ == 1; }
  double item() const;

  Tensor reshaped(std::vector<int64_t> new_shape) const;

  std::string shape_str() const;

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
  int64_t numel_ = 0;
};

int64_t shape_numel(const std::vector<int64_t>& shape);

}  // namespace gt
