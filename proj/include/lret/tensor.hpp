#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lret {

/// Dense n-dimensional float32 array, flat row-major storage.
/// Image tensors use NHWC layout (batch, height, width, channels).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(count(shape_), 0.0f);
  }

  Tensor(std::vector<int> shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != static_cast<int64_t>(data_.size())) {
      throw std::invalid_argument("Tensor: shape/data size mismatch");
    }
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, float v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // NHWC addressing.
  float& at4(int n, int h, int w, int c) {
    return data_[static_cast<size_t>(((int64_t(n) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c)];
  }
  float at4(int n, int h, int w, int c) const {
    return data_[static_cast<size_t>(((int64_t(n) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c)];
  }
  float& at2(int r, int c) { return data_[static_cast<size_t>(int64_t(r) * shape_[1] + c)]; }
  float at2(int r, int c) const { return data_[static_cast<size_t>(int64_t(r) * shape_[1] + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (float v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ')';
    return os.str();
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

inline void accumulate(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) throw std::invalid_argument("accumulate: shape mismatch");
  float* d = dst.data();
  const float* s = src.data();
  for (int64_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace lret
