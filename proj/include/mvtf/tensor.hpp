// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "mvtf/errors.hpp"

namespace mvtf {

inline std::size_t num_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of `Scalar`. Plain value type; gradient tracking
/// lives in `Var`.
template <typename Scalar>
class Tensor {
 public:
  // Fixed alignment keeps Eigen's vectorised reductions in the same order on
  // every allocation, so results are reproducible bit for bit.
  using Storage = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(num_elements(shape_), fill) {}

  Tensor(Shape shape, std::initializer_list<Scalar> data)
      : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

  Tensor(Shape shape, const std::vector<Scalar>& data)
      : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != num_elements(shape_)) {
      throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape " +
                       to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  const Storage& storage() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  /// Multi-index access, row-major.
  Scalar& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const Scalar& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  ArrayMap array() { return ArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size())); }
  ConstArrayMap array() const {
    return ConstArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size()));
  }

  /// View as (size / last) x last.
  MatrixMap matrix() { return matrix(rows_for_last(), last_dim()); }
  ConstMatrixMap matrix() const { return matrix(rows_for_last(), last_dim()); }
  MatrixMap matrix(std::size_t rows, std::size_t cols) {
    check_view(rows, cols);
    return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  }
  ConstMatrixMap matrix(std::size_t rows, std::size_t cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
  }

  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  Tensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }
  void reshape(Shape shape) {
    if (num_elements(shape) != data_.size()) {
      throw ShapeError("reshape", shape_, shape);
    }
    shape_ = std::move(shape);
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename Other>
  Tensor<Other> cast() const {
    typename Tensor<Other>::Storage out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows_for_last() const {
    const std::size_t last = last_dim();
    return last == 0 ? 0 : data_.size() / last;
  }
  void check_view(std::size_t rows, std::size_t cols) const {
    if (rows * cols != data_.size()) {
      throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " of " + to_string(shape_));
    }
  }
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw ShapeError("at: rank mismatch for " + to_string(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis]) throw ShapeError("at: index out of range for " + to_string(shape_));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  Storage data_;
};

using TensorXd = Tensor<double>;
using TensorXf = Tensor<float>;

/// Splits `shape` around `axis` into (outer, n, inner) extents.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace mvtf
