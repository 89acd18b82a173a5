#pragma once

// Evidence lower bound of the one-entry, one-component, order-1 model
//   y ~ N(u, 1/tau), u ~ N(0, 1/lambda), lambda ~ Ga(c0, d0), tau ~ Ga(a0, b0)
// under q(u) q(lambda) q(tau), with every expectation and entropy evaluated
// by numerical quadrature instead of closed forms.

#include <cmath>
#include <numbers>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace oracle {

struct ScalarModel {
  double y;
  double a0, b0, c0, d0;  // priors
  double mu, v;           // q(u)
  double a, b;            // q(tau)
  double c, d;            // q(lambda)
};

inline double log_gamma_pdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

inline double log_normal_pdf(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - mean) * (x - mean) / var;
}

// E over Ga(shape, rate) of f.
template <class F>
double gamma_expect(double shape, double rate, F f) {
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate(
      [&](double x) {
        if (x <= 0.0) return 0.0;
        return std::exp(log_gamma_pdf(x, shape, rate)) * f(x);
      },
      0.0, INFINITY);
}

// E over N(mean, var) of f.
template <class F>
double normal_expect(double mean, double var, F f) {
  const double sd = std::sqrt(var);
  auto g = [&](double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi) * f(mean + sd * z);
  };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(g, -40.0, 40.0, 15, 1e-14);
}

inline double scalar_elbo(const ScalarModel& m) {
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const double e_tau = gamma_expect(m.a, m.b, [](double t) { return t; });
  const double e_log_tau = gamma_expect(m.a, m.b, [](double t) { return std::log(t); });
  const double e_lam = gamma_expect(m.c, m.d, [](double l) { return l; });
  const double e_log_lam = gamma_expect(m.c, m.d, [](double l) { return std::log(l); });
  const double e_resid = normal_expect(m.mu, m.v, [&](double u) { return (m.y - u) * (m.y - u); });
  const double e_u2 = normal_expect(m.mu, m.v, [](double u) { return u * u; });

  double elbo = 0.5 * e_log_tau - 0.5 * log2pi - 0.5 * e_tau * e_resid;
  elbo += 0.5 * e_log_lam - 0.5 * log2pi - 0.5 * e_lam * e_u2;
  elbo += gamma_expect(m.c, m.d, [&](double l) { return log_gamma_pdf(l, m.c0, m.d0); });
  elbo += gamma_expect(m.a, m.b, [&](double t) { return log_gamma_pdf(t, m.a0, m.b0); });
  // Entropies.
  elbo -= normal_expect(m.mu, m.v, [&](double u) { return log_normal_pdf(u, m.mu, m.v); });
  elbo -= gamma_expect(m.c, m.d, [&](double l) { return log_gamma_pdf(l, m.c, m.d); });
  elbo -= gamma_expect(m.a, m.b, [&](double t) { return log_gamma_pdf(t, m.a, m.b); });
  return elbo;
}

}  // namespace oracle
