#pragma once

#include <cstddef>
#include <vector>

namespace ndi {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles. Deliberately minimal: the model is a
/// handful of small linear heads, so plain loops beat a linear-algebra
/// dependency and keep reductions in a fixed order.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

}  // namespace ndi
