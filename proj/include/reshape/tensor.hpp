#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "reshape/error.hpp"

namespace reshape {

/// Dense row-major float tensor, up to 4 dimensions (NCHW for images).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    int64_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw ShapeError("tensor dimension must be positive");
      n *= d;
    }
    data_.assign(static_cast<size_t>(n), 0.0f);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, float v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // NCHW accessors; only valid for 4-d tensors.
  float& at(int n, int c, int h, int w) {
    return data_[idx4(n, c, h, w)];
  }
  float at(int n, int c, int h, int w) const {
    return data_[idx4(n, c, h, w)];
  }
  // CHW accessors for 3-d tensors.
  float& at(int c, int h, int w) { return data_[idx3(c, h, w)]; }
  float at(int c, int h, int w) const { return data_[idx3(c, h, w)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  size_t idx4(int n, int c, int h, int w) const {
    return static_cast<size_t>(
        ((static_cast<int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w);
  }
  size_t idx3(int c, int h, int w) const {
    return static_cast<size_t>(
        (static_cast<int64_t>(c) * shape_[1] + h) * shape_[2] + w);
  }

  std::vector<int> shape_;
  std::vector<float> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
}

}  // namespace reshape
