#pragma once

#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ssd/errors.hpp"

namespace ssd {

using Shape = std::vector<std::size_t>;

enum class ElemType { F32, F64 };

template <typename T>
concept Real = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <Real T>
constexpr ElemType elem_type_of() {
  return std::is_same_v<T, float> ? ElemType::F32 : ElemType::F64;
}

inline const char* to_string(ElemType t) { return t == ElemType::F32 ? "f32" : "f64"; }

inline std::size_t num_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape);

// Dense row-major array. Rank-0 tensors hold exactly one element.
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{0} {}
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(num_elements(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != num_elements(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static constexpr ElemType elem_type() { return elem_type_of<T>(); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  std::size_t nbytes() const { return data_.size() * sizeof(T); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <typename... I>
  T& operator()(I... idx) {
    return data_[offset(idx...)];
  }
  template <typename... I>
  const T& operator()(I... idx) const {
    return data_[offset(idx...)];
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
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
  }

  template <Real U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  // Same shape and identical bit patterns.
  bool bitwise_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), nbytes()) == 0);
  }

 private:
  template <typename... I>
  std::size_t offset(I... idx) const {
    const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
    std::size_t flat = 0;
    for (std::size_t a = 0; a < sizeof...(I); ++a) flat = flat * shape_[a] + ids[a];
    return flat;
  }

  Shape shape_;
  std::vector<T> data_;
};

template <Real T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected shape " + shape_str(expected) + ", got " +
                     shape_str(t.shape()));
  }
}

// Which scalar type each stage of the forward pass runs in.
//
// The residual stream never drops below f32: when compute is f32 (with or
// without bf16 emulation of projection outputs) the residual accumulator is
// f32; in f64 compute it is f64.
enum class DecayExp { F32, BF16E };

struct ElemPolicy {
  ElemType compute = ElemType::F32;
  DecayExp decay_exp = DecayExp::F32;
  // Round projection outputs to bfloat16 precision (stored in f32 buffers).
  bool bf16_emulation = false;

  static constexpr ElemType residual = ElemType::F32;

  void validate() const;
};

// Scalar type actually used to accumulate the residual stream under a policy.
ElemType residual_accumulator(const ElemPolicy& policy);

}  // namespace ssd
