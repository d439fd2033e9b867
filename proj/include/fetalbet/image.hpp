#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fetalbet/error.hpp"

namespace fetalbet {

// Dense row-major 2D array. Row index first, column index second.
template <typename T>
class Image2D {
 public:
  using value_type = T;

  Image2D() = default;
  Image2D(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Image2D(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require(data_.size() == rows_ * cols_,
                    "Image2D: data size does not match rows*cols");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  template <typename U>
  bool same_shape(const Image2D<U>& other) const noexcept {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Image2D& a, const Image2D& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Image = Image2D<float>;
using Mask = Image2D<std::uint8_t>;

inline std::string shape_string(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename T>
std::string shape_string(const Image2D<T>& img) {
  return shape_string(img.rows(), img.cols());
}

inline bool is_binary(const Mask& mask) {
  return std::all_of(mask.begin(), mask.end(),
                     [](std::uint8_t v) { return v <= 1; });
}

inline std::size_t count_foreground(const Mask& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; }));
}

template <typename T>
Mask threshold(const Image2D<T>& img, double level) {
  Mask out(img.rows(), img.cols());
  for (std::size_t i = 0; i < img.size(); ++i)
    out.values()[i] = static_cast<double>(img.values()[i]) > level ? 1 : 0;
  return out;
}

template <typename To, typename From>
Image2D<To> image_cast(const Image2D<From>& img) {
  Image2D<To> out(img.rows(), img.cols());
  std::transform(img.begin(), img.end(), out.begin(),
                 [](From v) { return static_cast<To>(v); });
  return out;
}

}  // namespace fetalbet
