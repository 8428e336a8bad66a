#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "treefield/errors.hpp"

namespace treefield::grad {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major array. S is float for training/storage and double for
// the finite-difference test mode.
template <typename S>
struct Array {
  Shape shape;
  std::vector<S> data;

  Array() = default;
  Array(Shape sh, S fill) : shape(std::move(sh)), data(shape_numel(shape), fill) {}
  Array(Shape sh, std::vector<S> values) : shape(std::move(sh)), data(std::move(values)) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("Array: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
  }

  static Array zeros(Shape sh) { return Array(std::move(sh), S(0)); }
  static Array full(Shape sh, S v) { return Array(std::move(sh), v); }
  static Array scalar(S v) { return Array(Shape{1}, std::vector<S>{v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  int64_t rows() const { return shape.size() == 1 ? 1 : shape[shape.size() - 2]; }
  int64_t cols() const { return shape.empty() ? 0 : shape.back(); }

  S& at(int64_t r, int64_t c) { return data[r * cols() + c]; }
  S at(int64_t r, int64_t c) const { return data[r * cols() + c]; }

  S item() const {
    if (numel() != 1) throw ShapeError("Array::item on non-scalar " + shape_str(shape));
    return data[0];
  }

  template <typename T>
  Array<T> cast() const {
    Array<T> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using ArrayF = Array<float>;
using ArrayD = Array<double>;

}  // namespace treefield::grad
