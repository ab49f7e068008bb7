#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fgs/error.hpp"

namespace fgs {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of doubles. Rank 1 and rank 2 are the only ranks the
/// ops use; a scalar is a rank-1 tensor with one element.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (numel(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + to_string(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> data;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : 1; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor row_slice(std::span<const std::size_t> row_ids) const {
    Tensor out({row_ids.size(), cols()});
    const std::size_t c = cols();
    for (std::size_t i = 0; i < row_ids.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) out.data_[i * c + j] = data_[row_ids[i] * c + j];
    return out;
  }

  /// Bitwise equality of shape and values.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    if (a.shape_ != b.shape_) return false;
    for (std::size_t i = 0; i < a.data_.size(); ++i) {
      if (std::memcmp(&a.data_[i], &b.data_[i], sizeof(double)) != 0) return false;
    }
    return true;
  }

 private:
  void check_shape() const {
    for (auto d : shape_)
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace fgs
