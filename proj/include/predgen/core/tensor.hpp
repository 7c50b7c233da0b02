#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace predgen {

/// Dense row-major 64-bit array. Rank-2 throughout; vectors are 1×d.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ, lhs " + shape_string(a) + " rhs " +
                         shape_string(b));
  }
  Matrix out = a * b;
  return out;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Builds a matrix from row-major values; throws if the extents disagree with the data length.
inline Matrix from_rows(std::size_t rows, std::size_t cols, const std::vector<double>& values) {
  if (rows * cols != values.size()) {
    std::ostringstream os;
    os << "from_rows: shape [" << rows << "x" << cols << "] needs " << rows * cols
       << " values, got " << values.size();
    throw DimensionError(os.str());
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < values.size(); ++i) m.data()[i] = values[i];
  return m;
}

inline std::vector<double> to_row_major(const Matrix& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

}  // namespace predgen
