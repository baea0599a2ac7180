#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "marm/error.hpp"

namespace marm {

// Default scalar for everything the codec trains and infers with. Tests
// instantiate the same templates with double for finite-difference checks.
using Real = float;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::ostream& operator<<(std::ostream& os, const Shape& s) {
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  return os << ']';
}

// Dense row-major N-D array. Value semantic; copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    MARM_REQUIRE(data_.size() == shape_numel(shape_), "tensor data length ", data_.size(),
                 " does not match shape ", shape_);
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const {
    MARM_REQUIRE(i < shape_.size(), "dim ", i, " out of rank ", shape_.size());
    return shape_[i];
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // [C,H,W] accessors.
  T& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  T item() const {
    MARM_REQUIRE(data_.size() == 1, "item() on tensor with ", data_.size(), " elements");
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    MARM_REQUIRE(shape_numel(s) == data_.size(), "reshape ", shape_, " -> ", s);
    return Tensor(std::move(s), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Channel-height-width view helpers used by the kernels.
struct Chw {
  std::size_t c = 0, h = 0, w = 0;
  std::size_t plane() const { return h * w; }
};

template <typename T>
Chw chw_of(const Tensor<T>& t) {
  MARM_REQUIRE(t.rank() == 3, "expected [C,H,W] tensor, got ", t.shape());
  return {t.shape()[0], t.shape()[1], t.shape()[2]};
}

}  // namespace marm
