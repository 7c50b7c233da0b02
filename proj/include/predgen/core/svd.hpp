#pragma once

#include "predgen/core/tensor.hpp"

#include <algorithm>
#include <limits>

namespace predgen {

class InvalidRankError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Leading k singular triplets of z. Columns of `left` / rows of `right` pair with `values`.
struct SvdFactors {
  Matrix left;         // n×k
  Eigen::VectorXd values;  // k, non-increasing
  Matrix right;        // k×d, unit rows (zero where the singular value vanishes)
};

namespace detail {

// First entry with magnitude above the noise floor is made non-negative.
inline void canonical_sign(Eigen::Ref<RowVector> row, Eigen::Ref<Eigen::VectorXd> paired_left) {
  const double floor = 1e-12 * std::max(1.0, row.cwiseAbs().maxCoeff());
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    if (std::abs(row[j]) > floor) {
      if (row[j] < 0.0) {
        row = -row;
        paired_left = -paired_left;
      }
      return;
    }
  }
}

}  // namespace detail

/// Leading-k SVD through the eigen-decomposition of the smaller Gram matrix.
inline SvdFactors svd_factors(const Matrix& z, Eigen::Index k) {
  const Eigen::Index n = z.rows();
  const Eigen::Index d = z.cols();
  if (n < 1 || d < 1) throw InvalidRankError("truncated_svd: empty matrix");
  if (k < 1 || k > std::min(n, d)) {
    throw InvalidRankError("truncated_svd: rank " + std::to_string(k) + " outside [1, " +
                           std::to_string(std::min(n, d)) + "] for " + shape_string(z));
  }

  SvdFactors out;
  out.left = Matrix::Zero(n, k);
  out.values = Eigen::VectorXd::Zero(k);
  out.right = Matrix::Zero(k, d);

  const double scale = z.cwiseAbs().maxCoeff();
  if (scale == 0.0) return out;

  // Column-major copies keep the Gram products and eigen-solver on their fast paths.
  const Eigen::MatrixXd zc = z / scale;
  const bool tall = n >= d;
  const Eigen::MatrixXd gram = tall ? Eigen::MatrixXd(zc.transpose() * zc)
                                    : Eigen::MatrixXd(zc * zc.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericError("truncated_svd: eigen-solver failed");

  const Eigen::Index m = gram.rows();
  const double lambda_max = std::max(eig.eigenvalues()[m - 1], 0.0);
  const double noise_floor = 64.0 * static_cast<double>(m) * std::numeric_limits<double>::epsilon();
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index src = m - 1 - i;  // ascending order from the solver
    const double lambda = std::max(eig.eigenvalues()[src], 0.0);
    // Gram eigenvalues carry O(eps·λmax) noise; anything below it is treated as an exact zero.
    if (lambda <= lambda_max * noise_floor) continue;
    const double sigma = std::sqrt(lambda);
    Eigen::VectorXd vec = eig.eigenvectors().col(src);
    RowVector right_row(d);
    Eigen::VectorXd left_col(n);
    if (tall) {
      right_row = vec.transpose();
      left_col = (zc * vec) / sigma;
    } else {
      left_col = vec;
      right_row = (zc.transpose() * vec).transpose() / sigma;
      right_row /= right_row.norm();
    }
    detail::canonical_sign(right_row, left_col);
    out.values[i] = sigma * scale;
    out.right.row(i) = right_row;
    out.left.col(i) = left_col;
  }
  return out;
}

/// Top-k rows of ΣVᵀ: right singular vectors scaled by their singular values.
inline Matrix truncated_svd(const Matrix& z, Eigen::Index k) {
  SvdFactors f = svd_factors(z, k);
  Matrix scores = f.right;
  for (Eigen::Index i = 0; i < k; ++i) scores.row(i) *= f.values[i];
  return scores;
}

/// Rank-k reconstruction U_k Σ_k V_kᵀ.
inline Matrix reconstruct(const SvdFactors& f) {
  Matrix out = f.left * f.values.asDiagonal() * f.right;
  return out;
}

}  // namespace predgen
