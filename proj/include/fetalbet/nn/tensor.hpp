#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fetalbet/error.hpp"

namespace fetalbet::nn {

// NCHW tensor with contiguous storage.
struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const noexcept { return n * c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{})
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T{})
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t n() const noexcept { return shape_.n; }
  std::size_t c() const noexcept { return shape_.c; }
  std::size_t h() const noexcept { return shape_.h; }
  std::size_t w() const noexcept { return shape_.w; }
  std::size_t size() const noexcept { return data_.size(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    assert(n < shape_.n && c < shape_.c && y < shape_.h && x < shape_.w);
    return data_[index(n, c, y, x)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    assert(n < shape_.n && c < shape_.c && y < shape_.h && x < shape_.w);
    return data_[index(n, c, y, x)];
  }

  // One sample (all channels) or one (sample, channel) plane.
  std::span<T> sample(std::size_t n) noexcept {
    return {data_.data() + n * shape_.c * shape_.plane(), shape_.c * shape_.plane()};
  }
  std::span<const T> sample(std::size_t n) const noexcept {
    return {data_.data() + n * shape_.c * shape_.plane(), shape_.c * shape_.plane()};
  }
  std::span<T> plane(std::size_t n, std::size_t c) noexcept {
    return {data_.data() + (n * shape_.c + c) * shape_.plane(), shape_.plane()};
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const noexcept {
    return {data_.data() + (n * shape_.c + c) * shape_.plane(), shape_.plane()};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T{}); }

  Tensor& operator+=(const Tensor& other) {
    detail::require<ShapeError>(shape_ == other.shape_, "tensor add: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

// Concatenate along channels: [a, b].
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require<ShapeError>(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
                              "concat: incompatible shapes " + a.shape().str() +
                                  " and " + b.shape().str());
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (std::size_t n = 0; n < a.n(); ++n) {
    auto sa = a.sample(n);
    auto sb = b.sample(n);
    auto so = out.sample(n);
    std::copy(sa.begin(), sa.end(), so.begin());
    std::copy(sb.begin(), sb.end(), so.begin() + static_cast<std::ptrdiff_t>(sa.size()));
  }
  return out;
}

// Inverse of concat_channels for gradients.
template <typename T>
void split_channels(const Tensor<T>& g, std::size_t ca, Tensor<T>& ga, Tensor<T>& gb) {
  const std::size_t cb = g.c() - ca;
  ga = Tensor<T>(g.n(), ca, g.h(), g.w());
  gb = Tensor<T>(g.n(), cb, g.h(), g.w());
  for (std::size_t n = 0; n < g.n(); ++n) {
    auto sg = g.sample(n);
    auto sa = ga.sample(n);
    auto sb = gb.sample(n);
    std::copy(sg.begin(), sg.begin() + static_cast<std::ptrdiff_t>(sa.size()), sa.begin());
    std::copy(sg.begin() + static_cast<std::ptrdiff_t>(sa.size()), sg.end(), sb.begin());
  }
}

}  // namespace fetalbet::nn
