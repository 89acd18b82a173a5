#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>

#include <Eigen/Dense>

#include "tenfill/error.hpp"

namespace tenfill {

/// Orthonormal DCT-II matrix. Row p (0-based) is basis function p:
/// row 0 is 1/sqrt(n); row p > 0 has entries sqrt(2/n) cos(pi p (2q + 1) / (2n)).
/// The forward transform of a vector x is D x; the inverse is D^T c.
inline Eigen::MatrixXd dct_matrix(std::size_t n) {
  if (n < 1) throw ArgumentError("DCT size must be at least 1");
  const auto m = static_cast<Eigen::Index>(n);
  const double nd = static_cast<double>(n);
  Eigen::MatrixXd d(m, m);
  const double c0 = 1.0 / std::sqrt(nd);
  const double c1 = std::sqrt(2.0 / nd);
  for (Eigen::Index q = 0; q < m; ++q) d(0, q) = c0;
  for (Eigen::Index p = 1; p < m; ++p)
    for (Eigen::Index q = 0; q < m; ++q)
      d(p, q) = c1 * std::cos(std::numbers::pi * static_cast<double>(p) *
                              (2.0 * static_cast<double>(q) + 1.0) / (2.0 * nd));
  return d;
}

/// Separable 2-D DCT on n1 x n2 slices.
class DctBasis2D {
 public:
  DctBasis2D(std::size_t n1, std::size_t n2) : d1_(dct_matrix(n1)), d2_(dct_matrix(n2)) {}

  std::size_t rows() const noexcept { return static_cast<std::size_t>(d1_.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(d2_.rows()); }

  /// Coefficients of a slice: D1 S D2^T.
  Eigen::MatrixXd analysis(const Eigen::MatrixXd& slice) const {
    return d1_ * slice * d2_.transpose();
  }
  /// Slice from coefficients: D1^T C D2.
  Eigen::MatrixXd synthesis(const Eigen::MatrixXd& coef) const {
    return d1_.transpose() * coef * d2_;
  }

  const Eigen::MatrixXd& row_transform() const noexcept { return d1_; }
  const Eigen::MatrixXd& col_transform() const noexcept { return d2_; }

 private:
  Eigen::MatrixXd d1_;
  Eigen::MatrixXd d2_;
};

}  // namespace tenfill
