#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "edap/error.hpp"

namespace edap::nn {

inline std::size_t shape_size(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(std::span<const std::size_t> shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense row-major array.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, T fill = T{}) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_size(shape) != data.size())
      throw ShapeError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                       shape_string(shape));
  }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  /// Contiguous slab for the i-th entry along the leading axis.
  std::span<const T> row(std::size_t i) const {
    const std::size_t stride = data.size() / shape.at(0);
    return std::span<const T>(data).subspan(i * stride, stride);
  }
  std::span<T> row(std::size_t i) {
    const std::size_t stride = data.size() / shape.at(0);
    return std::span<T>(data).subspan(i * stride, stride);
  }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace edap::nn
