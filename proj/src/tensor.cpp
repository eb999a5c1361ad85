#include "globaltrack/tensor.hpp"

#include <sstream>

namespace gt {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)) {
  data_.assign(static_cast<size_t>(numel_), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)), numel_(shape_numel(shape_)) {
  if (static_cast<int64_t>(data_.size()) != numel_)
    throw std::invalid_argument("tensor data size does not match shape " + shape_str());
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = value;
  return t;
}

Tensor Tensor::uniform(std::vector<int64_t> shape, double a, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

double Tensor::item() const {
  if (numel_ != 1) throw std::logic_error("item() on non-scalar tensor " + shape_str());
  return data_[0];
}

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
  if (shape_numel(new_shape) != numel_)
    throw std::invalid_argument("reshape element count mismatch");
  return Tensor(std::move(new_shape), data_);
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ',';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

}  // namespace gt
