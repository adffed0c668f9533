#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "fsf/error.hpp"

namespace fsf {

/// Dense row-major 2D array with value semantics.
template <class T>
class Grid2D {
 public:
  using value_type = T;

  Grid2D() = default;
  Grid2D(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid2D(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require(data_.size() == rows_ * cols_, "grid data size does not match its dimensions");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Grid2D& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Sum in index order. Used wherever a reduction must not depend on scheduling.
inline double ordered_sum(std::span<const double> values) noexcept {
  double total = 0.0;
  for (double v : values) total += v;
  return total;
}

inline double mean(const Grid2D<double>& grid) noexcept {
  return grid.empty() ? 0.0 : ordered_sum(grid.values()) / static_cast<double>(grid.size());
}

}  // namespace fsf
