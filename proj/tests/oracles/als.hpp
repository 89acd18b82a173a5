#pragma once

// Plain alternating least squares CP fit of a dense tensor. Used only as an
// independent reference for synthetic-data rank checks.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "tenfill/tensor.hpp"

namespace oracle {

inline double cp_fit_residual(const tenfill::DenseTensor& x,
                              const std::vector<Eigen::MatrixXd>& f) {
  const auto fit = tenfill::cp_reconstruct(tenfill::CpModel(f));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = fit.at_linear(i) - x.at_linear(i);
    num += d * d;
    den += x.at_linear(i) * x.at_linear(i);
  }
  return std::sqrt(num / den);
}

/// Best relative residual over `restarts` random starts.
inline double als_residual(const tenfill::DenseTensor& x, Eigen::Index r, int iters,
                           int restarts = 3, std::uint64_t seed = 11) {
  const auto& dims = x.dims();
  const std::size_t d = dims.size();
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double best = std::numeric_limits<double>::infinity();

  for (int rs = 0; rs < restarts; ++rs) {
    std::vector<Eigen::MatrixXd> f;
    for (std::size_t n : dims) {
      Eigen::MatrixXd m(static_cast<Eigen::Index>(n), r);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(gen);
      f.push_back(m);
    }
    for (int it = 0; it < iters; ++it) {
      for (std::size_t k = 0; k < d; ++k) {
        Eigen::MatrixXd mttkrp = Eigen::MatrixXd::Zero(f[k].rows(), r);
        Eigen::MatrixXd gram = Eigen::MatrixXd::Ones(r, r);
        for (std::size_t m = 0; m < d; ++m)
          if (m != k) gram = gram.cwiseProduct(f[m].transpose() * f[m]);
        for (std::size_t off = 0; off < x.size(); ++off) {
          const auto idx = tenfill::multi_index(dims, off);
          Eigen::RowVectorXd w = Eigen::RowVectorXd::Ones(r);
          for (std::size_t m = 0; m < d; ++m)
            if (m != k) w = w.cwiseProduct(f[m].row(static_cast<Eigen::Index>(idx[m] - 1)));
          mttkrp.row(static_cast<Eigen::Index>(idx[k] - 1)) += x.at_linear(off) * w;
        }
        f[k] = gram.ldlt().solve(mttkrp.transpose()).transpose();
      }
    }
    best = std::min(best, cp_fit_residual(x, f));
  }
  return best;
}

}  // namespace oracle
