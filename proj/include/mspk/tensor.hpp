#ifndef MSPK_TENSOR_HPP
#define MSPK_TENSOR_HPP

#include <cstddef>
#include <vector>

#include "mspk/error.hpp"

namespace mspk {

// Dense row-major matrix of doubles. Vectors are 1xN or Nx1 as noted per use.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  double* row_ptr(std::size_t i) { return data.data() + i * cols; }
  const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const {
    return rows == o.rows && cols == o.cols;
  }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

}  // namespace mspk

#endif
