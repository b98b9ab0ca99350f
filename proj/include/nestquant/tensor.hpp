#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "nestquant/errors.hpp"

namespace nestquant {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Dense row-major tensor: a shape over a flat Eigen array.
template <typename Scalar>
struct Tensor {
  Shape shape;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)) {
    data.setZero(shape_numel(shape));
  }
  Tensor(Shape s, std::vector<Scalar> values) : shape(std::move(s)) {
    if (static_cast<Index>(values.size()) != shape_numel(shape))
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_string(shape));
    data = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
        values.data(), static_cast<Eigen::Index>(values.size()));
  }

  Index numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }

  Scalar& operator[](Index i) { return data[i]; }
  Scalar operator[](Index i) const { return data[i]; }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data = data.template cast<Other>();
    return out;
  }
};

using FloatTensor = Tensor<float>;

// Integer tensor with a declared two's-complement width.
struct IntTensor : Tensor<std::int32_t> {
  int bits = 8;

  IntTensor() = default;
  IntTensor(Shape s, int bits) : Tensor<std::int32_t>(std::move(s)), bits(bits) {}
  IntTensor(Shape s, std::vector<std::int32_t> values, int bits)
      : Tensor<std::int32_t>(std::move(s), std::move(values)), bits(bits) {}
};

struct IntRange {
  std::int32_t min;
  std::int32_t max;
};

inline IntRange int_range(int bits) {
  if (bits < 1 || bits > 31) throw InvalidBitwidthError("bitwidth " + std::to_string(bits) + " out of range");
  return {-(std::int32_t{1} << (bits - 1)), (std::int32_t{1} << (bits - 1)) - 1};
}

inline bool fits(std::int32_t v, int bits) {
  const IntRange r = int_range(bits);
  return v >= r.min && v <= r.max;
}

inline void validate_range(const IntTensor& t) {
  const IntRange r = int_range(t.bits);
  for (Index i = 0; i < t.numel(); ++i) {
    if (t.data[i] < r.min || t.data[i] > r.max)
      throw RangeError("value " + std::to_string(t.data[i]) + " at index " +
                           std::to_string(i) + " outside int" + std::to_string(t.bits) +
                           " range",
                       i);
  }
}

}  // namespace nestquant
