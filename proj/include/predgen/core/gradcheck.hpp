#pragma once

#include "predgen/core/tensor.hpp"

#include <functional>

namespace predgen {

/// Central-difference gradient of a scalar function, one coordinate at a time.
inline Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x,
                               double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = probe.data()[i];
    probe.data()[i] = saved + h;
    const double up = f(probe);
    probe.data()[i] = saved - h;
    const double down = f(probe);
    probe.data()[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                         std::to_string(i));
    }
    grad.data()[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// max |a-b| / max(1, |a|, |b|) elementwise; used to compare analytic and numeric gradients.
inline double max_relative_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("max_relative_error: " + shape_string(a) + " vs " + shape_string(b));
  }
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a.data()[i]), std::abs(b.data()[i])});
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / scale);
  }
  return worst;
}

}  // namespace predgen
