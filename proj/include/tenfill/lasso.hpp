#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "tenfill/error.hpp"
#include "tenfill/random.hpp"

namespace tenfill {

struct LassoConfig {
  // l1 weight; unset means 0.01 * ||A^T y||_inf.
  std::optional<double> lambda;
  std::size_t max_iters = 5000;
  double tol = 1e-8;
  // Step is 1/lipschitz. An orthonormal synthesis followed by subsampling
  // has ||A|| <= 1, so the default is exact for the virtual probe.
  double lipschitz = 1.0;
  // Restart the momentum whenever a step would increase the objective.
  bool monotone_restart = true;
  double kkt_tol = 1e-4;
  bool check_adjoint = true;
  // k-fold cross-validation of lambda (0 disables); used by the slice solver.
  std::size_t cv_folds = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (lambda && !(*lambda >= 0.0)) throw ArgumentError("lambda must be non-negative");
    if (max_iters < 1) throw ArgumentError("max_iters must be at least 1");
    if (!(tol > 0.0)) throw ArgumentError("tol must be positive");
    if (!(lipschitz > 0.0)) throw ArgumentError("lipschitz constant must be positive");
    if (cv_folds == 1) throw ArgumentError("cross-validation needs at least 2 folds");
  }
};

struct LassoResult {
  Eigen::VectorXd coef;
  double lambda = 0.0;
  double objective = 0.0;
  double kkt_residual = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // objective after every iteration
};

inline Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double t) {
  return v.unaryExpr([t](double x) {
    const double m = std::abs(x) - t;
    return m > 0.0 ? std::copysign(m, x) : 0.0;
  });
}

/// Max violation of the lasso optimality conditions given the gradient g of
/// the smooth part at c: |g_i + lambda sign(c_i)| on the support,
/// max(|g_i| - lambda, 0) off it.
inline double lasso_kkt_residual(const Eigen::VectorXd& g, const Eigen::VectorXd& c,
                                 double lambda) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const double v = c(i) != 0.0 ? std::abs(g(i) + std::copysign(lambda, c(i)))
                                 : std::max(std::abs(g(i)) - lambda, 0.0);
    worst = std::max(worst, v);
  }
  return worst;
}

/// Randomized probe of <A x, v> == <x, A^T v>. Throws OperatorError if the
/// two sides differ by more than 1e-8 relative to ||A x|| ||v||.
template <class Apply, class ApplyT>
void check_adjoint(Apply&& apply_a, ApplyT&& apply_at, Eigen::Index n, Eigen::Index m,
                   std::uint64_t seed) {
  auto gen = make_engine(seed, "adjoint");
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd x(n), v(m);
  for (auto& e : x) e = normal(gen);
  for (auto& e : v) e = normal(gen);
  const Eigen::VectorXd ax = apply_a(x);
  const Eigen::VectorXd atv = apply_at(v);
  if (ax.size() != m || atv.size() != n)
    throw OperatorError("operator output sizes do not match the problem");
  const double lhs = ax.dot(v);
  const double rhs = x.dot(atv);
  const double scale = std::max(ax.norm() * v.norm(), x.norm() * atv.norm());
  if (std::abs(lhs - rhs) > 1e-8 * std::max(scale, 1e-300))
    throw OperatorError("operator and adjoint are inconsistent: <Ax,v> = " +
                        std::to_string(lhs) + ", <x,A^T v> = " + std::to_string(rhs));
}

/// min_c 0.5 ||A c - y||^2 + lambda ||c||_1 by FISTA with a fixed step and
/// monotone restart. apply_a maps R^n -> R^m, apply_at is its adjoint.
/// Stops once the relative objective change of an accepted step is below
/// tol and the KKT residual is within kkt_tol * max(lambda, 1).
template <class Apply, class ApplyT>
LassoResult fista_lasso(Apply&& apply_a, ApplyT&& apply_at, const Eigen::VectorXd& y,
                        Eigen::Index n, const LassoConfig& cfg) {
  cfg.validate();
  const Eigen::Index m = y.size();
  if (cfg.check_adjoint) check_adjoint(apply_a, apply_at, n, m, cfg.seed);

  LassoResult res;
  const Eigen::VectorXd aty = apply_at(y);
  res.lambda = cfg.lambda ? *cfg.lambda : 0.01 * (n > 0 ? aty.cwiseAbs().maxCoeff() : 0.0);
  const double lambda = res.lambda;
  const double step = 1.0 / cfg.lipschitz;

  auto objective = [&](const Eigen::VectorXd& resid, const Eigen::VectorXd& c) {
    return 0.5 * resid.squaredNorm() + lambda * c.lpNorm<1>();
  };

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd ax = Eigen::VectorXd::Zero(m);  // A x
  Eigen::VectorXd yk = x, ayk = ax;                // extrapolated point
  double fx = objective(ax - y, x);
  double t = 1.0;

  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    res.iterations = it + 1;
    const Eigen::VectorXd grad = apply_at(ayk - y);
    Eigen::VectorXd z = soft_threshold(yk - step * grad, step * lambda);
    Eigen::VectorXd az = apply_a(z);
    const double fz = objective(az - y, z);

    if (cfg.monotone_restart && fz > fx) {
      // Reject the step and restart from x with no momentum; the next step
      // is a plain proximal-gradient step, which cannot increase F.
      t = 1.0;
      yk = x;
      ayk = ax;
      res.objective_trace.push_back(fx);
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double beta = (t - 1.0) / t_next;
    yk = z + beta * (z - x);
    ayk = az + beta * (az - ax);
    const double rel = std::abs(fx - fz) / std::max(std::abs(fx), 1e-300);
    x = std::move(z);
    ax = std::move(az);
    fx = fz;
    t = t_next;
    res.objective_trace.push_back(fx);

    if (rel < cfg.tol) {
      const Eigen::VectorXd g = apply_at(ax - y);
      res.kkt_residual = lasso_kkt_residual(g, x, lambda);
      if (res.kkt_residual <= cfg.kkt_tol * std::max(lambda, 1.0)) {
        res.converged = true;
        break;
      }
    }
  }
  if (!res.converged) res.kkt_residual = lasso_kkt_residual(apply_at(ax - y), x, lambda);
  res.coef = std::move(x);
  res.objective = fx;
  return res;
}

/// Dense-matrix convenience overload.
inline LassoResult fista_lasso(const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                               const LassoConfig& cfg) {
  return fista_lasso([&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return a * x; },
                     [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
                       return a.transpose() * v;
                     },
                     y, a.cols(), cfg);
}

}  // namespace tenfill
