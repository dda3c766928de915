#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace wsovod {

// Dense row-major matrix of doubles. Everything in this project is small
// (R x C with R <= 64), so no attempt at blocking or BLAS.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
};

inline Mat matmul(const Mat& a, const Mat& b) {
  assert(a.cols == b.rows);
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double av = a(i, k);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += av * b(k, j);
    }
  return out;
}

inline Mat transpose(const Mat& a) {
  Mat out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

}  // namespace wsovod
