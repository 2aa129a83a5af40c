#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mixuplr/error.hpp"

namespace mixuplr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major double tensor. Rank 1 holds vectors, rank 2 holds batches
/// (one example per row). The data length always equals the shape volume.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_volume(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged rows in Tensor::from_rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-2 accessors. A rank-1 tensor is treated as a single row.
  std::size_t rows() const noexcept { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
  std::size_t cols() const noexcept { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols(), cols()}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols(), cols()}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const noexcept {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Rejects non-finite input tensors; use on anything crossing an API boundary.
inline const Tensor& require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NonFiniteError(std::string(what) + " contains NaN or Inf");
  return t;
}

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " must be a rank-2 batch, got shape " + shape_string(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

/// Copies the given rows (in order) into a new batch.
inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  const std::size_t c = t.cols();
  Tensor out({indices.size(), c});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = t.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

/// Stacks two batches with the same column count.
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("concat_rows: column mismatch");
  std::vector<double> data(a.data());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor({a.rows() + b.rows(), a.cols()}, std::move(data));
}

inline Tensor row_as_batch(const Tensor& t, std::size_t i) {
  const auto r = t.row(i);
  return Tensor({1, r.size()}, std::vector<double>(r.begin(), r.end()));
}

}  // namespace mixuplr

#ifndef NDEBUG
#define MIXUPLR_ASSERT_FINITE(t) assert((t).all_finite())
#else
#define MIXUPLR_ASSERT_FINITE(t) ((void)0)
#endif
