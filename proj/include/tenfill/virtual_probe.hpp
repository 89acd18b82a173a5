#pragma once

// Virtual-probe baseline: every n1 x n2 slice is modelled as a sparse
// combination of 2-D DCT basis images and recovered from its samples by
// l1-regularized least squares.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tenfill/dct.hpp"
#include "tenfill/error.hpp"
#include "tenfill/lasso.hpp"
#include "tenfill/log.hpp"
#include "tenfill/observations.hpp"
#include "tenfill/parallel.hpp"
#include "tenfill/random.hpp"
#include "tenfill/synth.hpp"
#include "tenfill/tensor.hpp"

namespace tenfill {

/// Sensing operator A = (sample at Omega) o (2-D DCT synthesis) on
/// row-major coefficient vectors of length n1 * n2.
class SliceSensing {
 public:
  SliceSensing(const DctBasis2D& basis, std::vector<std::size_t> rows,
               std::vector<std::size_t> cols)
      : basis_(&basis), rows_(std::move(rows)), cols_(std::move(cols)) {}

  Eigen::Index coefficients() const {
    return static_cast<Eigen::Index>(basis_->rows() * basis_->cols());
  }
  Eigen::Index samples() const { return static_cast<Eigen::Index>(rows_.size()); }

  Eigen::VectorXd apply(const Eigen::VectorXd& c) const {
    const Eigen::MatrixXd s = basis_->synthesis(as_matrix(c));
    Eigen::VectorXd out(samples());
    for (std::size_t e = 0; e < rows_.size(); ++e)
      out(static_cast<Eigen::Index>(e)) =
          s(static_cast<Eigen::Index>(rows_[e]), static_cast<Eigen::Index>(cols_[e]));
    return out;
  }

  Eigen::VectorXd adjoint(const Eigen::VectorXd& v) const {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(basis_->rows()),
                                              static_cast<Eigen::Index>(basis_->cols()));
    for (std::size_t e = 0; e < rows_.size(); ++e)
      z(static_cast<Eigen::Index>(rows_[e]), static_cast<Eigen::Index>(cols_[e])) +=
          v(static_cast<Eigen::Index>(e));
    return as_vector(basis_->analysis(z));
  }

  Eigen::MatrixXd as_matrix(const Eigen::VectorXd& c) const {
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajor>(c.data(), static_cast<Eigen::Index>(basis_->rows()),
                                      static_cast<Eigen::Index>(basis_->cols()));
  }

  static Eigen::VectorXd as_vector(const Eigen::MatrixXd& m) {
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMajor r = m;
    return Eigen::Map<const Eigen::VectorXd>(r.data(), r.size());
  }

 private:
  const DctBasis2D* basis_;
  std::vector<std::size_t> rows_;  // 0-based
  std::vector<std::size_t> cols_;
};

namespace detail {

inline LassoResult vp_solve(const SliceSensing& a, const Eigen::VectorXd& y,
                            const LassoConfig& cfg) {
  return fista_lasso([&](const Eigen::VectorXd& c) { return a.apply(c); },
                     [&](const Eigen::VectorXd& v) { return a.adjoint(v); }, y,
                     a.coefficients(), cfg);
}

// k-fold cross-validation over lambda = lambda_max * 10^{-g/2}, g = 1..7.
inline double vp_cross_validate(const DctBasis2D& basis, const std::vector<std::size_t>& rows,
                                const std::vector<std::size_t>& cols,
                                const Eigen::VectorXd& y, const LassoConfig& cfg) {
  const std::size_t n = rows.size();
  const std::size_t k = std::min(cfg.cv_folds, n);
  SliceSensing full(basis, rows, cols);
  const double lambda_max = full.adjoint(y).cwiseAbs().maxCoeff();
  if (k < 2 || !(lambda_max > 0.0)) return 0.01 * lambda_max;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto gen = make_engine(cfg.seed, streams::cv);
  std::shuffle(order.begin(), order.end(), gen);
  std::vector<std::size_t> fold(n);
  for (std::size_t p = 0; p < n; ++p) fold[order[p]] = p % k;

  double best_lambda = 0.01 * lambda_max;
  double best_err = std::numeric_limits<double>::infinity();
  for (int g = 1; g <= 7; ++g) {
    const double lambda = lambda_max * std::pow(10.0, -0.5 * g);
    double err = 0.0;
    for (std::size_t f = 0; f < k; ++f) {
      std::vector<std::size_t> tr_r, tr_c, va_r, va_c;
      std::vector<double> tr_y, va_y;
      for (std::size_t e = 0; e < n; ++e) {
        auto& rr = fold[e] == f ? va_r : tr_r;
        auto& cc = fold[e] == f ? va_c : tr_c;
        auto& yy = fold[e] == f ? va_y : tr_y;
        rr.push_back(rows[e]);
        cc.push_back(cols[e]);
        yy.push_back(y(static_cast<Eigen::Index>(e)));
      }
      if (tr_y.empty() || va_y.empty()) continue;
      SliceSensing train(basis, tr_r, tr_c);
      LassoConfig sub = cfg;
      sub.lambda = lambda;
      sub.cv_folds = 0;
      sub.check_adjoint = false;
      const auto fit = vp_solve(
          train, Eigen::Map<const Eigen::VectorXd>(tr_y.data(), static_cast<Eigen::Index>(tr_y.size())),
          sub);
      SliceSensing valid(basis, va_r, va_c);
      const Eigen::VectorXd pred = valid.apply(fit.coef);
      for (std::size_t e = 0; e < va_y.size(); ++e) {
        const double diff = pred(static_cast<Eigen::Index>(e)) - va_y[e];
        err += diff * diff;
      }
    }
    if (err < best_err) {
      best_err = err;
      best_lambda = lambda;
    }
  }
  return best_lambda;
}

}  // namespace detail

struct VpSliceResult {
  Eigen::MatrixXd slice;
  LassoResult fit;
};

/// Recovers one n1 x n2 slice from an order-2 observation set.
inline VpSliceResult vp_recover_slice_detailed(const ObservationSet& obs2d,
                                               const LassoConfig& cfg) {
  if (obs2d.order() != 2)
    throw ArgumentError("virtual probe slice needs order-2 observations, got order " +
                        std::to_string(obs2d.order()));
  if (obs2d.empty()) throw ArgumentError("virtual probe slice has no observations");
  cfg.validate();
  const DctBasis2D basis(obs2d.dims()[0], obs2d.dims()[1]);
  std::vector<std::size_t> rows(obs2d.size()), cols(obs2d.size());
  Eigen::VectorXd y(static_cast<Eigen::Index>(obs2d.size()));
  for (std::size_t e = 0; e < obs2d.size(); ++e) {
    rows[e] = obs2d.coord(e, 0) - 1;
    cols[e] = obs2d.coord(e, 1) - 1;
    y(static_cast<Eigen::Index>(e)) = obs2d.value(e);
  }
  LassoConfig use = cfg;
  if (!use.lambda && use.cv_folds >= 2)
    use.lambda = detail::vp_cross_validate(basis, rows, cols, y, use);
  SliceSensing a(basis, std::move(rows), std::move(cols));
  auto fit = detail::vp_solve(a, y, use);
  Eigen::MatrixXd slice = basis.synthesis(a.as_matrix(fit.coef));
  return {std::move(slice), std::move(fit)};
}

inline Eigen::MatrixXd vp_recover_slice(const ObservationSet& obs2d, const LassoConfig& cfg) {
  return vp_recover_slice_detailed(obs2d, cfg).slice;
}

/// Splits order-3 observations into their i3 slices (1-based slice s at [s-1]).
inline std::vector<ObservationSet> split_slices(const ObservationSet& obs3d) {
  if (obs3d.order() != 3)
    throw ArgumentError("slice-by-slice recovery needs order-3 observations, got order " +
                        std::to_string(obs3d.order()));
  const Dims& dims = obs3d.dims();
  std::vector<ObservationSet> out(dims[2], ObservationSet({dims[0], dims[1]}));
  for (std::size_t e = 0; e < obs3d.size(); ++e)
    out[obs3d.coord(e, 2) - 1].insert({obs3d.coord(e, 0), obs3d.coord(e, 1)}, obs3d.value(e));
  return out;
}

struct VpStackResult {
  DenseTensor tensor;
  std::size_t iterations = 0;        // FISTA iterations summed over slices
  std::size_t converged_slices = 0;  // slices whose solve met its tolerances
  std::size_t empty_slices = 0;
};

/// Slice-by-slice recovery of an order-3 tensor. Slices without samples are
/// returned as zeros with a warning. Slices are independent; with threads > 1
/// they are spread over worker threads with identical results.
inline VpStackResult vp_recover_stack_detailed(const ObservationSet& obs3d,
                                               const LassoConfig& cfg, unsigned threads = 0) {
  const auto slices = split_slices(obs3d);
  const Dims& dims = obs3d.dims();
  std::vector<VpSliceResult> fits(slices.size());
  parallel_for(slices.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      if (slices[s].empty()) continue;
      try {
        fits[s] = vp_recover_slice_detailed(slices[s], cfg);
      } catch (const Error& e) {
        throw SliceError(e.what(), s + 1);
      }
    }
  });
  VpStackResult out{.tensor = DenseTensor::zeros(dims)};
  std::vector<double> data(num_elements(dims), 0.0);
  for (std::size_t s = 0; s < slices.size(); ++s) {
    if (slices[s].empty()) {
      warn("slice " + std::to_string(s + 1) + " has no observations; returning zeros");
      ++out.empty_slices;
      continue;
    }
    const auto& rec = fits[s].slice;
    out.iterations += fits[s].fit.iterations;
    if (fits[s].fit.converged) ++out.converged_slices;
    for (std::size_t i = 0; i < dims[0]; ++i)
      for (std::size_t j = 0; j < dims[1]; ++j)
        data[(i * dims[1] + j) * dims[2] + s] =
            rec(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  out.tensor = DenseTensor(dims, std::move(data));
  return out;
}

inline DenseTensor vp_recover_stack(const ObservationSet& obs3d, const LassoConfig& cfg,
                                    unsigned threads = 0) {
  return vp_recover_stack_detailed(obs3d, cfg, threads).tensor;
}

}  // namespace tenfill
