#pragma once

// Variational Bayesian CP completion with automatic rank determination.
//
// Model: y_i = <u_{1,i_1}, ..., u_{d,i_d}> + eps, eps ~ N(0, 1/tau), with
// rows u_{k,i_k} ~ N(0, diag(lambda)^-1), lambda_j ~ Ga(c0_j, d0_j) and
// tau ~ Ga(a0, b0) (shape-rate). The posterior is approximated by
//   q = prod_k prod_{i_k} N(u_{k,i_k} | mean, V) * prod_j Ga(lambda_j | c_j, d_j)
//       * Ga(tau | a, b)
// and fitted by coordinate ascent on the evidence lower bound. Components
// whose rank-1 power collapses are pruned, which reveals the rank.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>

#include "tenfill/error.hpp"
#include "tenfill/observations.hpp"
#include "tenfill/parallel.hpp"
#include "tenfill/random.hpp"
#include "tenfill/synth.hpp"
#include "tenfill/tensor.hpp"

namespace tenfill {

/// Gamma hyper-priors (shape-rate) for tau and the per-component lambdas.
struct HyperParams {
  double a0 = 1e-6;
  double b0 = 1e-6;
  std::vector<double> c0;
  std::vector<double> d0;
  std::size_t max_rank = 0;

  /// Broad priors: a0 = b0 = c0(j) = d0(j) = 1e-6.
  static HyperParams defaults(std::size_t max_rank) {
    HyperParams h;
    h.max_rank = max_rank;
    h.c0.assign(max_rank, 1e-6);
    h.d0.assign(max_rank, 1e-6);
    return h;
  }

  void validate() const {
    if (max_rank < 1) throw ArgumentError("max_rank must be at least 1");
    if (!(a0 > 0.0) || !(b0 > 0.0))
      throw ArgumentError("tau prior parameters must be positive");
    if (c0.size() != max_rank || d0.size() != max_rank)
      throw ArgumentError("lambda prior vectors must have length max_rank");
    for (std::size_t j = 0; j < max_rank; ++j)
      if (!(c0[j] > 0.0) || !(d0[j] > 0.0))
        throw ArgumentError("lambda prior parameters must be positive");
  }
};

enum class InitMode { random, spectral };
enum class ConvergenceMode { elbo, reconstruction };

struct SolverConfig {
  std::size_t max_iters = 500;
  double tol = 1e-6;
  ConvergenceMode convergence = ConvergenceMode::elbo;
  double prune_threshold = 1e-4;
  bool prune_enabled = true;
  // Pruning is checked once per sweep, starting after this many sweeps.
  std::size_t prune_after = 2;
  // Near stationarity (relative change below evidence_tol), also drop the
  // weakest component when removing it does not lower the ELBO. See
  // prune_by_evidence.
  bool evidence_pruning = true;
  double evidence_tol = 1e-4;
  // Sweeps used to refresh a trial merge of parallel components (0 disables
  // merging); see merge_by_evidence.
  std::size_t merge_sweeps = 5;
  // Exact ELBO-optimal rescaling of components across modes each sweep,
  // starting once the objective has settled (relative change < evidence_tol).
  bool rebalance = true;
  std::uint64_t seed = 0;
  InitMode init_mode = InitMode::random;
  // q(tau) starts at E[tau] = 1 / (init_noise_fraction * var(observed)), so
  // the first sweep treats the data as mostly signal. 0 starts q(tau) at its
  // prior instead.
  double init_noise_fraction = 0.01;
  // Center and scale observed values before fitting; undone on prediction.
  bool standardize = false;
  // Row updates within a mode are split over this many threads (0 or 1:
  // sequential). Results are identical for any value.
  unsigned threads = 0;

  void validate() const {
    if (max_iters < 1) throw ArgumentError("max_iters must be at least 1");
    if (!(tol > 0.0)) throw ArgumentError("tol must be positive");
    if (!(init_noise_fraction >= 0.0 && std::isfinite(init_noise_fraction)))
      throw ArgumentError("init_noise_fraction must be finite and non-negative");
    if (!(prune_threshold >= 0.0))
      throw ArgumentError("prune_threshold must be non-negative");
  }
};

/// Observation data laid out for the solver: 0-based coordinates plus, for
/// every mode, the entries touching each row (CSR style, ascending entry id).
struct ObservationCache {
  Dims dims;
  std::vector<std::size_t> rows;  // |Omega| x d, 0-based
  std::vector<double> values;     // after optional standardization
  std::vector<std::vector<std::size_t>> row_start;    // per mode, n_k + 1
  std::vector<std::vector<std::size_t>> row_entries;  // per mode, |Omega|
  double shift = 0.0;
  double scale = 1.0;

  std::size_t order() const noexcept { return dims.size(); }
  std::size_t size() const noexcept { return values.size(); }
  std::size_t row(std::size_t e, std::size_t k) const { return rows[e * dims.size() + k]; }

  static ObservationCache build(const ObservationSet& obs, bool standardize) {
    ObservationCache c;
    c.dims = obs.dims();
    const std::size_t d = c.dims.size();
    const std::size_t n = obs.size();
    c.rows.resize(n * d);
    c.values = obs.values();
    for (std::size_t e = 0; e < n; ++e)
      for (std::size_t k = 0; k < d; ++k) c.rows[e * d + k] = obs.coord(e, k) - 1;
    if (standardize && n > 0) {
      double mean = 0.0;
      for (double v : c.values) mean += v;
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (double v : c.values) var += (v - mean) * (v - mean);
      var /= static_cast<double>(n);
      c.shift = mean;
      c.scale = var > 0.0 ? std::sqrt(var) : 1.0;
      for (double& v : c.values) v = (v - c.shift) / c.scale;
    }
    c.row_start.resize(d);
    c.row_entries.resize(d);
    for (std::size_t k = 0; k < d; ++k) {
      auto& start = c.row_start[k];
      start.assign(c.dims[k] + 1, 0);
      for (std::size_t e = 0; e < n; ++e) ++start[c.row(e, k) + 1];
      for (std::size_t i = 0; i < c.dims[k]; ++i) start[i + 1] += start[i];
      auto fill = start;
      auto& entries = c.row_entries[k];
      entries.resize(n);
      for (std::size_t e = 0; e < n; ++e) entries[fill[c.row(e, k)]++] = e;
    }
    return c;
  }
};

/// Variational posterior. Modes and rows are 0-based inside the state;
/// the public update functions take 1-based mode numbers.
struct PosteriorState {
  std::vector<Eigen::MatrixXd> means;             // mode k: n_k x r
  std::vector<std::vector<Eigen::MatrixXd>> covs;  // mode k, row i: r x r
  Eigen::VectorXd c, d;    // q(lambda_j) = Ga(c_j, d_j)
  Eigen::VectorXd c0, d0;  // priors of the surviving components
  double a = 1.0, b = 1.0;  // q(tau) = Ga(a, b)
  double a0 = 1.0, b0 = 1.0;
  std::shared_ptr<const ObservationCache> obs;
  std::vector<double> elbo_trace;

  std::size_t rank() const noexcept {
    return means.empty() ? 0 : static_cast<std::size_t>(means.front().cols());
  }
  std::size_t order() const noexcept { return means.size(); }
  double expected_tau() const { return a / b; }
  Eigen::VectorXd expected_lambda() const { return c.cwiseQuotient(d); }
};

struct CompletionResult {
  DenseTensor prediction;
  CpModel model;
  std::size_t predicted_rank = 0;
  std::size_t iterations = 0;
  double final_elbo = 0.0;
  double expected_tau = 0.0;
  Eigen::VectorXd expected_lambda;
  bool converged = false;
  std::vector<double> elbo_trace;
  // prediction = cp_reconstruct(model) + offset; offset is 0 unless
  // standardization was enabled.
  double offset = 0.0;
};

// Numerical floor for Gamma rates.
inline constexpr double kRateFloor = 1e-12;

namespace detail {

inline void require_mode(const PosteriorState& s, std::size_t mode) {
  if (mode < 1 || mode > s.order())
    throw ArgumentError("mode " + std::to_string(mode) + " outside [1, " +
                        std::to_string(s.order()) + "]");
}

/// Cholesky of a symmetric matrix with jitter escalation from 1e-12 to 1e-6
/// (relative to the mean diagonal). Returns false if every attempt fails.
inline bool robust_llt(const Eigen::MatrixXd& p, Eigen::LLT<Eigen::MatrixXd>& llt) {
  llt.compute(p);
  if (llt.info() == Eigen::Success) return true;
  const Eigen::Index r = p.rows();
  const double diag = r > 0 ? std::abs(p.diagonal().mean()) : 1.0;
  const double base = diag > 0.0 ? diag : 1.0;
  for (double jitter = 1e-12; jitter <= 1e-6 * 1.0000001; jitter *= 10.0) {
    Eigen::MatrixXd q = p;
    q.diagonal().array() += jitter * base;
    llt.compute(q);
    if (llt.info() == Eigen::Success) return true;
  }
  return false;
}

/// Row-major copies of the means and the upper triangles of the second
/// moments, laid out for the per-observation loops.
struct PackedMoments {
  std::size_t rank = 0;
  std::size_t packed = 0;                  // rank (rank + 1) / 2
  std::vector<std::vector<double>> means;  // mode k: n_k x rank, row-major
  std::vector<std::vector<double>> moms;   // mode k: n_k x packed

  static PackedMoments build(const PosteriorState& s) {
    PackedMoments pm;
    const std::size_t r = s.rank();
    pm.rank = r;
    pm.packed = r * (r + 1) / 2;
    pm.means.resize(s.order());
    pm.moms.resize(s.order());
    for (std::size_t k = 0; k < s.order(); ++k) {
      const auto& m = s.means[k];
      const auto n = static_cast<std::size_t>(m.rows());
      auto& mu = pm.means[k];
      auto& mo = pm.moms[k];
      mu.resize(n * r);
      mo.resize(n * pm.packed);
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        const auto& v = s.covs[k][i];
        double* out = mo.data() + i * pm.packed;
        for (std::size_t j = 0; j < r; ++j) {
          const double mj = m(row, static_cast<Eigen::Index>(j));
          mu[i * r + j] = mj;
          for (std::size_t l = j; l < r; ++l)
            *out++ = mj * m(row, static_cast<Eigen::Index>(l)) +
                     v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l));
        }
      }
    }
    return pm;
  }

  const double* mean(std::size_t k, std::size_t i) const { return means[k].data() + i * rank; }
  const double* mom(std::size_t k, std::size_t i) const { return moms[k].data() + i * packed; }
};

/// Sum over observed entries of E[(y - <u_1,...,u_d>)^2].
inline double expected_sq_residual_sum(const PosteriorState& s, const PackedMoments& pm) {
  const auto& obs = *s.obs;
  const std::size_t d = obs.order();
  const std::size_t r = pm.rank, np = pm.packed;
  // Off-diagonal entries appear twice in the full matrix.
  std::vector<double> weight(np, 2.0);
  for (std::size_t j = 0, q = 0; j < r; q += r - j, ++j) weight[q] = 1.0;
  std::vector<double> h(r), w(np);
  double sum = 0.0;
  for (std::size_t e = 0; e < obs.size(); ++e) {
    std::copy(weight.begin(), weight.end(), w.begin());
    std::fill(h.begin(), h.end(), 1.0);
    for (std::size_t k = 0; k + 1 < d; ++k) {
      const double* mk = pm.mean(k, obs.row(e, k));
      const double* wk = pm.mom(k, obs.row(e, k));
      for (std::size_t j = 0; j < r; ++j) h[j] *= mk[j];
      for (std::size_t q = 0; q < np; ++q) w[q] *= wk[q];
    }
    const double* ml = pm.mean(d - 1, obs.row(e, d - 1));
    const double* wl = pm.mom(d - 1, obs.row(e, d - 1));
    double hs = 0.0, ws = 0.0;
    for (std::size_t j = 0; j < r; ++j) hs += h[j] * ml[j];
    for (std::size_t q = 0; q < np; ++q) ws += w[q] * wl[q];
    const double y = obs.values[e];
    sum += y * y - 2.0 * y * hs + ws;
  }
  return sum;
}

inline double expected_sq_residual_sum(const PosteriorState& s) {
  return expected_sq_residual_sum(s, PackedMoments::build(s));
}

inline double gamma_entropy(double shape, double rate) {
  return shape - std::log(rate) + std::lgamma(shape) +
         (1.0 - shape) * boost::math::digamma(shape);
}

/// E_q[log Ga(x | shape0, rate0)] when q(x) = Ga(shape, rate).
inline double gamma_expected_log_prior(double shape0, double rate0, double shape,
                                       double rate) {
  const double e_log = boost::math::digamma(shape) - std::log(rate);
  return shape0 * std::log(rate0) - std::lgamma(shape0) + (shape0 - 1.0) * e_log -
         rate0 * shape / rate;
}

inline double l2_norm_product(const PosteriorState& s, Eigen::Index j) {
  double p = 1.0;
  for (const auto& m : s.means) p *= m.col(j).norm();
  return p;
}

// 1^T (hadamard_k A_k^T B_k) 1 = <CP(A), CP(B)>.
inline double cp_inner(const std::vector<Eigen::MatrixXd>& a,
                       const std::vector<Eigen::MatrixXd>& b) {
  if (a.front().cols() == 0 || b.front().cols() == 0) return 0.0;
  Eigen::MatrixXd g = Eigen::MatrixXd::Ones(a.front().cols(), b.front().cols());
  for (std::size_t k = 0; k < a.size(); ++k) g.array() *= (a[k].transpose() * b[k]).array();
  return g.sum();
}

}  // namespace detail

/// Posterior-mean CP model of the current state (standardized units).
inline CpModel posterior_mean_model(const PosteriorState& s) { return CpModel(s.means); }

/// Initial posterior: rank = max_rank, all covariances identity, Gamma
/// factors at their priors except q(tau) (see init_noise_fraction). Random
/// mode draws N(0,1) means scaled by std(observed)^(1/d) and falls back to
/// spectral when the observed values have no spread; spectral mode uses the
/// leading eigenvectors of each zero-filled mode unfolding's Gram matrix.
inline PosteriorState init_state(const ObservationSet& obs, const HyperParams& hyper,
                                 const SolverConfig& cfg) {
  hyper.validate();
  cfg.validate();
  if (obs.empty()) throw ArgumentError("observation set is empty");

  PosteriorState s;
  auto cache = std::make_shared<ObservationCache>(ObservationCache::build(obs, cfg.standardize));
  const Dims& dims = cache->dims;
  const std::size_t d = dims.size();
  const auto r = static_cast<Eigen::Index>(hyper.max_rank);

  const auto& vals = cache->values;
  const double n = static_cast<double>(vals.size());
  double mean = 0.0, sq = 0.0;
  for (double v : vals) {
    mean += v;
    sq += v * v;
  }
  mean /= n;
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean);
  var = vals.size() > 1 ? var / (n - 1.0) : 0.0;
  double spread = std::sqrt(var);
  const double rms = std::sqrt(sq / n);
  // Observed values without spread give the random draw no scale to work
  // with; the unfolding subspaces still carry the signal.
  const bool flat = !(spread > 1e-12 * rms);
  if (flat) spread = rms;
  if (!(spread > 0.0)) spread = 1.0;
  const double scale = std::pow(spread, 1.0 / static_cast<double>(d));

  auto gen = make_engine(cfg.seed, streams::init);
  std::normal_distribution<double> normal(0.0, 1.0);
  s.means.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    auto& m = s.means[k];
    m.resize(static_cast<Eigen::Index>(dims[k]), r);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < r; ++j) m(i, j) = scale * normal(gen);
  }

  if (cfg.init_mode == InitMode::spectral || flat) {
    // Zero-filled data rescaled by 1/ratio so singular values estimate the
    // full tensor's.
    const std::size_t total = num_elements(dims);
    const double inv_ratio = static_cast<double>(total) / n;
    for (std::size_t k = 0; k < d; ++k) {
      const auto nk = static_cast<Eigen::Index>(dims[k]);
      const std::size_t cols = total / dims[k];
      Eigen::MatrixXd unfold = Eigen::MatrixXd::Zero(nk, static_cast<Eigen::Index>(cols));
      for (std::size_t e = 0; e < cache->size(); ++e) {
        std::size_t col = 0;
        for (std::size_t m = 0; m < d; ++m)
          if (m != k) col = col * dims[m] + cache->row(e, m);
        unfold(static_cast<Eigen::Index>(cache->row(e, k)), static_cast<Eigen::Index>(col)) =
            vals[e] * inv_ratio;
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(unfold * unfold.transpose());
      const Eigen::Index take = std::min(r, nk);
      for (Eigen::Index j = 0; j < take; ++j) {
        Eigen::VectorXd v = eig.eigenvectors().col(nk - 1 - j);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0.0) v = -v;
        const double sigma = std::sqrt(std::max(eig.eigenvalues()(nk - 1 - j), 0.0));
        s.means[k].col(j) = v * std::pow(sigma, 1.0 / static_cast<double>(d));
      }
    }
  }

  s.covs.resize(d);
  for (std::size_t k = 0; k < d; ++k)
    s.covs[k].assign(dims[k], Eigen::MatrixXd::Identity(r, r));
  s.c0 = Eigen::Map<const Eigen::VectorXd>(hyper.c0.data(), r);
  s.d0 = Eigen::Map<const Eigen::VectorXd>(hyper.d0.data(), r);
  s.c = s.c0;
  s.d = s.d0;
  s.a0 = s.a = hyper.a0;
  s.b0 = s.b = hyper.b0;
  if (cfg.init_noise_fraction > 0.0) s.b = s.a * cfg.init_noise_fraction * spread * spread;
  s.obs = std::move(cache);
  return s;
}

/// Closed-form update of q(U_k) for mode (1-based). For each row:
///   V    = (E[tau] sum_i B_i + diag(E[lambda]))^-1
///   mean = E[tau] V sum_i y_i h_i
/// with h_i the Hadamard product of the other modes' row means and B_i the
/// Hadamard product of their second moments. Rows without observations get
/// the prior N(0, diag(E[lambda])^-1).
inline void update_factor(PosteriorState& s, std::size_t mode, unsigned threads = 0) {
  detail::require_mode(s, mode);
  const std::size_t k = mode - 1;
  const auto& obs = *s.obs;
  const std::size_t d = s.order();
  const std::size_t ru = s.rank();
  const auto r = static_cast<Eigen::Index>(ru);
  const double e_tau = s.expected_tau();
  const Eigen::VectorXd e_lambda = s.expected_lambda();
  const auto pm = detail::PackedMoments::build(s);
  const std::size_t np = pm.packed;
  const auto& start = obs.row_start[k];
  const auto& entries = obs.row_entries[k];

  parallel_for(obs.dims[k], threads, [&](std::size_t begin, std::size_t end) {
    Eigen::MatrixXd p(r, r);
    Eigen::VectorXd rhs(r);
    std::vector<double> h(ru), w(np), acc(np), rhs_acc(ru);
    Eigen::LLT<Eigen::MatrixXd> llt(r);
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      if (start[i] == start[i + 1]) {
        s.means[k].row(row).setZero();
        s.covs[k][i] = e_lambda.cwiseInverse().asDiagonal();
        continue;
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      std::fill(rhs_acc.begin(), rhs_acc.end(), 0.0);
      for (std::size_t t = start[i]; t < start[i + 1]; ++t) {
        const std::size_t e = entries[t];
        // Products over all other modes but the last one, which is fused
        // into the accumulation.
        std::fill(h.begin(), h.end(), 1.0);
        std::fill(w.begin(), w.end(), 1.0);
        if (d == 1) {
          for (std::size_t q = 0; q < np; ++q) acc[q] += 1.0;
          for (std::size_t j = 0; j < ru; ++j) rhs_acc[j] += obs.values[e];
          continue;
        }
        const std::size_t last = k + 1 == d ? d - 2 : d - 1;
        for (std::size_t m = 0; m < last; ++m) {
          if (m == k) continue;
          const double* mm = pm.mean(m, obs.row(e, m));
          const double* wm = pm.mom(m, obs.row(e, m));
          for (std::size_t j = 0; j < ru; ++j) h[j] *= mm[j];
          for (std::size_t q = 0; q < np; ++q) w[q] *= wm[q];
        }
        const double* ml = pm.mean(last, obs.row(e, last));
        const double* wl = pm.mom(last, obs.row(e, last));
        const double y = obs.values[e];
        for (std::size_t q = 0; q < np; ++q) acc[q] += w[q] * wl[q];
        for (std::size_t j = 0; j < ru; ++j) rhs_acc[j] += y * h[j] * ml[j];
      }
      for (std::size_t j = 0; j < ru; ++j) rhs(static_cast<Eigen::Index>(j)) = rhs_acc[j];
      std::size_t q = 0;
      for (Eigen::Index j = 0; j < r; ++j)
        for (Eigen::Index l = j; l < r; ++l) p(j, l) = p(l, j) = e_tau * acc[q++];
      p.diagonal() += e_lambda;
      if (!detail::robust_llt(p, llt))
        throw SolverError("factor posterior precision is not positive definite", mode, i + 1);
      Eigen::MatrixXd v = llt.solve(Eigen::MatrixXd::Identity(r, r));
      s.covs[k][i] = 0.5 * (v + v.transpose());
      s.means[k].row(row) = (e_tau * llt.solve(rhs)).transpose();
    }
  });
}

/// q(lambda): c_j = c0_j + (1/2) sum_k n_k,
///            d_j = d0_j + (1/2) sum_k sum_i (mean_ij^2 + V_i(j,j)).
inline void update_lambda(PosteriorState& s) {
  const auto r = static_cast<Eigen::Index>(s.rank());
  double rows = 0.0;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(r);
  for (std::size_t k = 0; k < s.order(); ++k) {
    const auto& m = s.means[k];
    rows += static_cast<double>(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      acc += m.row(i).transpose().cwiseAbs2() +
             s.covs[k][static_cast<std::size_t>(i)].diagonal();
  }
  s.c = s.c0.array() + 0.5 * rows;
  s.d = (s.d0 + 0.5 * acc).cwiseMax(kRateFloor);
}

/// q(tau): a = a0 + |Omega|/2, b = b0 + (1/2) sum_Omega E[(y - <u...>)^2].
/// Returns the expected squared residual sum it used.
inline double update_tau(PosteriorState& s) {
  const double resid = detail::expected_sq_residual_sum(s);
  if (!std::isfinite(resid)) throw DomainError("expected residual is not finite");
  s.a = s.a0 + 0.5 * static_cast<double>(s.obs->size());
  s.b = std::max(s.b0 + 0.5 * resid, kRateFloor);
  return resid;
}

/// Optimal rescaling of each component across modes. Scaling column j of
/// mode k by s_k (prod_k s_k = 1, covariances by s_k s_k') leaves the
/// likelihood term unchanged, so the ELBO depends on s only through
///   sum_k n_k log s_k - (1/2) E[lambda_j] sum_k s_k^2 M_kj,
/// M_kj = sum_i (mean_ij^2 + V_i(j,j)). Its maximizer is
/// s_k^2 = (n_k - mu) / (E[lambda_j] M_kj) with mu fixed by prod_k s_k = 1.
/// This moves along the directions plain coordinate ascent crawls along.
inline void rebalance_components(PosteriorState& s) {
  const std::size_t d = s.order();
  const auto r = static_cast<Eigen::Index>(s.rank());
  if (d < 2 || r == 0) return;
  const Eigen::VectorXd e_lambda = s.expected_lambda();
  Eigen::MatrixXd scale = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(d), r);
  std::vector<double> n(d), weight(d);
  for (Eigen::Index j = 0; j < r; ++j) {
    bool ok = true;
    double n_min = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < d; ++k) {
      const auto& m = s.means[k];
      double mk = m.col(j).squaredNorm();
      for (const auto& v : s.covs[k]) mk += v(j, j);
      n[k] = static_cast<double>(m.rows());
      weight[k] = e_lambda(j) * mk;
      n_min = std::min(n_min, n[k]);
      if (!(weight[k] > 0.0) || !std::isfinite(weight[k])) ok = false;
    }
    if (!ok) continue;
    // f(mu) = sum_k log((n_k - mu) / w_k) is decreasing on (-inf, n_min).
    auto f = [&](double mu) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += std::log((n_min - mu + (n[k] - n_min)) / weight[k]);
      return acc;
    };
    double hi_gap = 1.0;  // mu = n_min - gap
    while (f(n_min - hi_gap) > 0.0 && hi_gap > 1e-300) hi_gap *= 0.5;
    double lo_gap = 1.0;
    while (f(n_min - lo_gap) < 0.0) lo_gap *= 2.0;
    // Root lies between gaps hi_gap (f <= 0) and lo_gap (f >= 0).
    double a = std::min(hi_gap, lo_gap), b = std::max(hi_gap, lo_gap);
    for (int it = 0; it < 200 && b - a > 1e-15 * b; ++it) {
      const double mid = 0.5 * (a + b);
      if (f(n_min - mid) > 0.0) b = mid;
      else a = mid;
    }
    const double gap = 0.5 * (a + b);
    double log_prod = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double sk = std::sqrt((gap + n[k] - n_min) / weight[k]);
      scale(static_cast<Eigen::Index>(k), j) = sk;
      log_prod += std::log(sk);
    }
    // Remove the residual of the root solve so the product is exactly 1.
    const double fix = std::exp(-log_prod / static_cast<double>(d));
    scale.col(j) *= fix;
  }
  for (std::size_t k = 0; k < d; ++k) {
    const Eigen::VectorXd sk = scale.row(static_cast<Eigen::Index>(k)).transpose();
    s.means[k] = s.means[k] * sk.asDiagonal();
    for (auto& v : s.covs[k]) v = sk.asDiagonal() * v * sk.asDiagonal();
  }
}

namespace detail {

// ELBO given the expected squared residual sum of the current factors.
inline double compute_elbo(const PosteriorState& s, double resid) {
  using std::log;
  constexpr double log2pi = 1.8378770664093454835606594728112;  // log(2 pi)
  const auto& obs = *s.obs;
  const auto r = static_cast<Eigen::Index>(s.rank());
  const double rd = static_cast<double>(r);
  const double n_obs = static_cast<double>(obs.size());
  const double e_tau = s.a / s.b;
  const double e_log_tau = boost::math::digamma(s.a) - log(s.b);

  // Likelihood.
  double elbo = 0.5 * n_obs * (e_log_tau - log2pi) -
                0.5 * e_tau * resid;

  // Factor priors and Gaussian entropies.
  Eigen::VectorXd e_lambda(r), e_log_lambda(r);
  for (Eigen::Index j = 0; j < r; ++j) {
    e_lambda(j) = s.c(j) / s.d(j);
    e_log_lambda(j) = boost::math::digamma(s.c(j)) - log(s.d(j));
  }
  Eigen::LLT<Eigen::MatrixXd> llt(r);
  for (std::size_t k = 0; k < s.order(); ++k) {
    for (std::size_t i = 0; i < s.covs[k].size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const Eigen::VectorXd m2 =
          s.means[k].row(row).transpose().cwiseAbs2() + s.covs[k][i].diagonal();
      elbo += -0.5 * rd * log2pi + 0.5 * e_log_lambda.sum() -
              0.5 * e_lambda.dot(m2);
      llt.compute(s.covs[k][i]);
      if (llt.info() != Eigen::Success)
        throw SolverError("posterior covariance is not positive definite", k + 1, i + 1);
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      elbo += 0.5 * rd * (1.0 + log2pi) + 0.5 * logdet;
    }
  }

  for (Eigen::Index j = 0; j < r; ++j) {
    elbo += detail::gamma_expected_log_prior(s.c0(j), s.d0(j), s.c(j), s.d(j));
    elbo += detail::gamma_entropy(s.c(j), s.d(j));
  }
  elbo += detail::gamma_expected_log_prior(s.a0, s.b0, s.a, s.b);
  elbo += detail::gamma_entropy(s.a, s.b);
  return elbo;
}

}  // namespace detail

/// Evidence lower bound E_q[log p(Y, U, lambda, tau)] + H[q].
inline double compute_elbo(const PosteriorState& s) {
  return detail::compute_elbo(s, detail::expected_sq_residual_sum(s));
}

namespace detail {

inline void keep_components(PosteriorState& s, const std::vector<Eigen::Index>& keep) {
  const auto nr = static_cast<Eigen::Index>(keep.size());
  const Eigen::Map<const Eigen::Array<Eigen::Index, Eigen::Dynamic, 1>> sel(keep.data(), nr);
  for (std::size_t k = 0; k < s.order(); ++k) {
    s.means[k] = Eigen::MatrixXd(s.means[k](Eigen::all, sel));
    for (auto& v : s.covs[k]) v = Eigen::MatrixXd(v(sel, sel));
  }
  s.c = Eigen::VectorXd(s.c(sel));
  s.d = Eigen::VectorXd(s.d(sel));
  s.c0 = Eigen::VectorXd(s.c0(sel));
  s.d0 = Eigen::VectorXd(s.d0(sel));
}

}  // namespace detail

/// Drops components whose power prod_k ||mean_k(:, j)|| is below
/// threshold * max_j power (or exactly zero). At least one component is
/// always kept. Returns the number removed.
inline std::size_t prune_components(PosteriorState& s, double threshold) {
  const auto r = static_cast<Eigen::Index>(s.rank());
  if (r <= 1) return 0;
  std::vector<double> power(static_cast<std::size_t>(r));
  double max_power = 0.0;
  Eigen::Index best = 0;
  for (Eigen::Index j = 0; j < r; ++j) {
    power[static_cast<std::size_t>(j)] = detail::l2_norm_product(s, j);
    if (power[static_cast<std::size_t>(j)] > max_power) {
      max_power = power[static_cast<std::size_t>(j)];
      best = j;
    }
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < r; ++j) {
    const double pj = power[static_cast<std::size_t>(j)];
    if (pj > 0.0 && pj >= threshold * max_power) keep.push_back(j);
  }
  if (keep.empty()) keep.push_back(best);
  if (static_cast<Eigen::Index>(keep.size()) == r) return 0;
  detail::keep_components(s, keep);
  return static_cast<std::size_t>(r - static_cast<Eigen::Index>(keep.size()));
}

/// Evidence check on the weakest components: the lowest-power component is
/// removed while doing so does not lower the ELBO. Catches components that
/// settle on fitting noise with a large but finite lambda, which the power
/// threshold alone keeps. Returns the number removed.
inline std::size_t prune_by_evidence(PosteriorState& s, std::optional<double> elbo_now = {}) {
  std::size_t removed = 0;
  double base = elbo_now ? *elbo_now : compute_elbo(s);
  while (s.rank() > 1) {
    const auto r = static_cast<Eigen::Index>(s.rank());
    Eigen::Index weakest = 0;
    double min_power = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < r; ++j) {
      const double pj = detail::l2_norm_product(s, j);
      if (pj < min_power) {
        min_power = pj;
        weakest = j;
      }
    }
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < r; ++j)
      if (j != weakest) keep.push_back(j);
    PosteriorState trial = s;
    detail::keep_components(trial, keep);
    const double elbo = compute_elbo(trial);
    if (!(elbo >= base)) break;
    s = std::move(trial);
    base = elbo;
    ++removed;
  }
  return removed;
}

/// Evidence check on duplicated components. A true component is sometimes
/// split into two nearly parallel ones, each too strong to drop on its own.
/// The most parallel pair (|cosine| >= min_cosine in every mode) is fused:
/// modes 2..d keep the direction of the stronger member and mode 1 absorbs
/// the projection of the weaker one. The fused state and an unfused copy
/// both get `sweeps` coordinate sweeps; the fused one replaces s only if its
/// ELBO is at least the unfused one's (which is never below s's own).
/// Repeats until a merge is rejected. Returns the number of merges.
inline std::size_t merge_by_evidence(PosteriorState& s, std::size_t sweeps = 5,
                                     unsigned threads = 0, bool rebalance = true,
                                     double min_cosine = 0.9) {
  auto advance = [&](PosteriorState& t) {
    for (std::size_t sw = 0; sw < std::max<std::size_t>(sweeps, 1); ++sw) {
      for (std::size_t k = 1; k <= t.order(); ++k) update_factor(t, k, threads);
      if (rebalance) rebalance_components(t);
      update_tau(t);
      update_lambda(t);
    }
    return compute_elbo(t);
  };
  std::size_t merged = 0;
  while (s.rank() > 1) {
    const auto r = static_cast<Eigen::Index>(s.rank());
    const std::size_t d = s.order();
    Eigen::Index pj = -1, pl = -1;
    double best = min_cosine;
    for (Eigen::Index j = 0; j < r; ++j)
      for (Eigen::Index l = j + 1; l < r; ++l) {
        double worst = 1.0;
        for (std::size_t k = 0; k < d && worst >= best; ++k) {
          const auto a = s.means[k].col(j), b = s.means[k].col(l);
          const double na = a.norm(), nb = b.norm();
          worst = (na > 0.0 && nb > 0.0) ? std::min(worst, std::abs(a.dot(b)) / (na * nb)) : 0.0;
        }
        if (worst >= best) {
          best = worst;
          pj = j;
          pl = l;
        }
      }
    if (pj < 0) break;
    if (detail::l2_norm_product(s, pl) > detail::l2_norm_product(s, pj)) std::swap(pj, pl);

    PosteriorState trial = s;
    double coupling = 1.0;
    for (std::size_t k = 1; k < d; ++k) {
      const auto a = s.means[k].col(pj), b = s.means[k].col(pl);
      coupling *= a.dot(b) / a.squaredNorm();
    }
    trial.means[0].col(pj) += coupling * s.means[0].col(pl);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < r; ++j)
      if (j != pl) keep.push_back(j);
    detail::keep_components(trial, keep);
    PosteriorState unfused = s;
    const double elbo_fused = advance(trial);
    const double elbo_unfused = advance(unfused);
    if (!(elbo_fused >= elbo_unfused)) break;
    s = std::move(trial);
    ++merged;
  }
  return merged;
}

/// Completion result for a state: undoes standardization by folding the
/// scale into the first factor and reporting the shift as offset.
inline CompletionResult make_result(const PosteriorState& s) {
  const auto& obs = *s.obs;
  std::vector<Eigen::MatrixXd> factors = s.means;
  factors.front() *= obs.scale;
  CpModel model(std::move(factors));
  DenseTensor pred = cp_reconstruct(model);
  if (obs.shift != 0.0) {
    std::vector<double> v(pred.values().begin(), pred.values().end());
    for (double& x : v) x += obs.shift;
    pred = DenseTensor(obs.dims, std::move(v));
  }
  return CompletionResult{
      .prediction = std::move(pred),
      .model = std::move(model),
      .predicted_rank = s.rank(),
      .iterations = 0,
      .final_elbo = s.elbo_trace.empty() ? compute_elbo(s) : s.elbo_trace.back(),
      .expected_tau = s.expected_tau() / (obs.scale * obs.scale),
      .expected_lambda = s.expected_lambda(),
      .converged = false,
      .elbo_trace = s.elbo_trace,
      .offset = obs.shift,
  };
}

/// Coordinate ascent from a given state: each sweep updates every factor in
/// mode order, rebalances component scales (if enabled and settled),
/// updates tau, then lambda, records the ELBO and optionally prunes. Stops
/// when the relative change of the chosen objective drops below cfg.tol in
/// a sweep that did not prune.
inline CompletionResult run_from(PosteriorState s, const SolverConfig& cfg) {
  cfg.validate();
  double prev_elbo = compute_elbo(s);
  std::vector<Eigen::MatrixXd> prev_means = s.means;
  bool converged = false;
  std::size_t iter = 0;
  std::size_t next_merge = 0;
  // Set once the objective first changes by less than evidence_tol. Early
  // rebalancing speeds up shrinkage while tau is still small and can remove
  // real components, so it waits for this.
  bool settled = false;
  while (iter < cfg.max_iters) {
    ++iter;
    for (std::size_t k = 1; k <= s.order(); ++k) update_factor(s, k, cfg.threads);
    if (cfg.rebalance && settled) rebalance_components(s);
    // Neither update_lambda nor the ELBO's other terms touch the factors, so
    // the residual from update_tau is still current.
    const double resid = update_tau(s);
    update_lambda(s);
    const double elbo = detail::compute_elbo(s, resid);
    s.elbo_trace.push_back(elbo);

    double change;
    if (cfg.convergence == ConvergenceMode::elbo) {
      change = std::abs(elbo - prev_elbo) / std::max(std::abs(prev_elbo), 1e-300);
    } else {
      const double old_sq = detail::cp_inner(prev_means, prev_means);
      const double new_sq = detail::cp_inner(s.means, s.means);
      const double cross = detail::cp_inner(s.means, prev_means);
      const double diff = std::sqrt(std::max(old_sq + new_sq - 2.0 * cross, 0.0));
      change = old_sq > 0.0 ? diff / std::sqrt(old_sq) : (new_sq > 0.0 ? 1.0 : 0.0);
    }
    prev_elbo = elbo;
    if (change < cfg.evidence_tol) settled = true;

    std::size_t pruned = 0;
    if (cfg.prune_enabled && iter > cfg.prune_after) {
      pruned = prune_components(s, cfg.prune_threshold);
      if (cfg.evidence_pruning && change < cfg.evidence_tol) {
        std::optional<double> now;
        if (!pruned) now = elbo;
        if (cfg.merge_sweeps > 0 && iter >= next_merge) {
          const std::size_t m = merge_by_evidence(s, cfg.merge_sweeps, cfg.threads, cfg.rebalance);
          // A rejected merge is not retried for a while.
          if (m == 0) next_merge = iter + 4 * cfg.merge_sweeps;
          else now.reset();
          pruned += m;
        }
        pruned += prune_by_evidence(s, now);
      }
    }
    if (pruned) prev_elbo = compute_elbo(s);
    prev_means = s.means;
    if (!pruned && change < cfg.tol) {
      converged = true;
      break;
    }
  }
  CompletionResult res = make_result(s);
  res.iterations = iter;
  res.converged = converged;
  return res;
}

inline CompletionResult run(const ObservationSet& obs, const HyperParams& hyper,
                            const SolverConfig& cfg) {
  return run_from(init_state(obs, hyper, cfg), cfg);
}

inline std::size_t predicted_rank(const CompletionResult& result) {
  return result.predicted_rank;
}

}  // namespace tenfill
