#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace urllc {

// Row-major 2-D matrix of doubles. Networks and batches are at most 2-D, so a
// flat buffer with (rows, cols) covers every use here.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  const double* row(std::size_t i) const { return data.data() + i * cols; }
  double* row(std::size_t i) { return data.data() + i * cols; }

  std::size_t size() const { return data.size(); }
};

}  // namespace urllc
