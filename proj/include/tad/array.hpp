#pragma once

#include "tad/errors.hpp"

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace tad {

// Dense row-major matrix of doubles. Everything in the model is 2-D; vectors
// are [n x 1] or [1 x n], scalars [1 x 1].
struct Array {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Array() = default;
  Array(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Array from(std::size_t r, std::size_t c, std::initializer_list<double> v) {
    if (v.size() != r * c) throw ShapeError("Array::from: initializer size mismatch");
    Array a(r, c);
    std::size_t i = 0;
    for (double x : v) a.data[i++] = x;
    return a;
  }

  static Array scalar(double v) {
    Array a(1, 1);
    a.data[0] = v;
    return a;
  }

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return rows * cols; }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  bool same_shape(const Array& o) const { return rows == o.rows && cols == o.cols; }
};

}  // namespace tad
