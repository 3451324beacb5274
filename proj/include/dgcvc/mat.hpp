#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgcvc {

// Dense row-major double matrix. The single numeric currency of the project;
// double precision throughout so finite-difference gradient checks hold at
// 1e-4 relative tolerance.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative dimensions");
  }

  static Mat from_rows(const std::vector<std::vector<double>>& v) {
    if (v.empty()) return Mat();
    Mat m(static_cast<int>(v.size()), static_cast<int>(v[0].size()));
    for (int i = 0; i < m.rows; ++i) {
      if (static_cast<int>(v[i].size()) != m.cols) throw std::invalid_argument("Mat::from_rows: ragged input");
      for (int j = 0; j < m.cols; ++j) m(i, j) = v[i][j];
    }
    return m;
  }

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  double* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline void check_shape(const Mat& m, int r, int c, const char* what) {
  if (m.rows != r || m.cols != c)
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(r) + "x" + std::to_string(c) +
                                ", got " + m.shape_str());
}

}  // namespace dgcvc
