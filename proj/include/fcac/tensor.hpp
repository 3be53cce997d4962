#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "fcac/error.hpp"

namespace fcac {

// Dense row-major tensor of 64-bit floats. Shapes are small (rank <= 4) and
// sizes are desk-scale; everything lives in a contiguous std::vector.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), 0.0);
  }

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != static_cast<long long>(data_.size())) {
      fail(ErrorCode::kShapeMismatch, "tensor data does not match shape");
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  long long size() const { return static_cast<long long>(data_.size()); }

  bool is_scalar() const { return data_.size() == 1; }

  double scalar_value() const {
    if (!is_scalar()) fail(ErrorCode::kShapeMismatch, "tensor is not a scalar");
    return data_[0];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](long long i) { return data_[static_cast<size_t>(i)]; }
  double operator[](long long i) const { return data_[static_cast<size_t>(i)]; }

  // Row-major index helpers for the common ranks.
  double& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double& at(int c, int h, int w) {
    return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }
  double at(int c, int h, int w) const {
    return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  // Bitwise comparison, used by freezing/expansion/round-trip checks.
  bool bit_equal(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    for (size_t i = 0; i < data_.size(); ++i) {
      std::uint64_t a, b;
      static_assert(sizeof(double) == sizeof(std::uint64_t));
      std::memcpy(&a, &data_[i], sizeof(a));
      std::memcpy(&b, &other.data_[i], sizeof(b));
      if (a != b) return false;
    }
    return true;
  }

  std::string shape_string() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  static long long checked_size(const std::vector<int>& shape) {
    if (shape.empty()) fail(ErrorCode::kShapeMismatch, "empty tensor shape");
    long long n = 1;
    for (int d : shape) {
      if (d <= 0) fail(ErrorCode::kShapeMismatch, "non-positive tensor dimension");
      n *= d;
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

inline double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) fail(ErrorCode::kShapeMismatch, "dot size mismatch");
  double s = 0.0;
  for (long long i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const Tensor& a) {
  double s = 0.0;
  for (long long i = 0; i < a.size(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

}  // namespace fcac
