#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrnet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class DType : std::uint32_t { kReal32 = 1, kReal64 = 2 };

template <typename R>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kReal32; }
template <>
constexpr DType dtype_of<double>() { return DType::kReal64; }

/// Dense row-major array of reals. Extents are always positive; a rank-0
/// shape denotes a scalar holding one value.
template <typename R>
class Tensor {
 public:
  using value_type = R;

  Tensor() = default;
  explicit Tensor(Shape shape, R fill = R(0));
  Tensor(Shape shape, std::vector<R> data);

  static Tensor scalar(R v) { return Tensor(Shape{}, std::vector<R>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<R> data() { return data_; }
  std::span<const R> data() const { return data_; }
  R* ptr() { return data_.data(); }
  const R* ptr() const { return data_.data(); }
  const std::vector<R>& vec() const { return data_; }

  R& operator[](std::size_t i) { return data_[i]; }
  R operator[](std::size_t i) const { return data_[i]; }

  R item() const;
  void fill(R v);
  Tensor reshaped(Shape shape) const;

  template <typename S>
  Tensor<S> cast() const {
    return Tensor<S>(shape_, std::vector<S>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<R> data_;
};

template <typename R>
void require_same_shape(const Tensor<R>& a, const Tensor<R>& b, const char* op);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace corrnet
