#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "satt/error.hpp"

namespace satt {

struct Shape4 {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t spatial() const { return h * w; }
  constexpr std::size_t size() const { return n * c * h * w; }

  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

// Rejects zero dimensions and element counts that overflow size_t.
inline void validate_shape(const Shape4& s) {
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("tensor dimensions must be positive, got " + s.str());
  }
  constexpr auto kMax = std::numeric_limits<std::size_t>::max();
  std::size_t total = 1;
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (total > kMax / d) throw ShapeError("tensor element count overflows: " + s.str());
    total *= d;
  }
}

// Builds a shape from signed values, rejecting zero or negative entries.
inline Shape4 make_shape(long long n, long long c, long long h, long long w) {
  if (n <= 0 || c <= 0 || h <= 0 || w <= 0) {
    throw ShapeError("tensor dimensions must be positive, got (" + std::to_string(n) + "," +
                     std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")");
  }
  Shape4 s{static_cast<std::size_t>(n), static_cast<std::size_t>(c), static_cast<std::size_t>(h),
           static_cast<std::size_t>(w)};
  validate_shape(s);
  return s;
}

// Dense rank-4 array in row-major NCHW order.
template <std::floating_point T>
class Tensor4 {
 public:
  using value_type = T;

  explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape) {
    validate_shape(shape_);
    data_.assign(shape_.size(), fill);
  }

  Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_.size()) {
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
    }
  }

  // Element-type conversion, e.g. float storage to a double-precision copy.
  template <std::floating_point U>
  static Tensor4 cast(const Tensor4<U>& other) {
    std::vector<T> data(other.size());
    std::transform(other.data().begin(), other.data().end(), data.begin(),
                   [](U v) { return static_cast<T>(v); });
    return Tensor4(other.shape(), std::move(data));
  }

  const Shape4& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  T operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  // The contiguous h*w plane of one (sample, channel) pair.
  std::span<T> plane(std::size_t n, std::size_t c) {
    return std::span<T>(data_).subspan(offset(n, c, 0, 0), shape_.spatial());
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const {
    return std::span<const T>(data_).subspan(offset(n, c, 0, 0), shape_.spatial());
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape4 shape_;
  std::vector<T> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

}  // namespace satt
