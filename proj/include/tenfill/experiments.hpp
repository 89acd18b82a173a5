#pragma once

// Experiment protocols shared by the command-line tool and the tests:
// sampling-ratio sweeps, max-rank studies and the completion vs. virtual
// probe comparison. Every protocol takes a clean truth tensor; noise, when
// requested, is added once (seeded) before sampling, and errors are always
// measured against the clean truth.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tenfill/bayes_cp.hpp"
#include "tenfill/error.hpp"
#include "tenfill/lasso.hpp"
#include "tenfill/synth.hpp"
#include "tenfill/tensor.hpp"
#include "tenfill/tns.hpp"
#include "tenfill/virtual_probe.hpp"

namespace tenfill {

/// n log-spaced points from lo to hi (inclusive), each rounded to 6 decimals.
inline std::vector<double> log_spaced_ratios(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0) || !(hi >= lo)) throw ArgumentError("log grid needs 0 < lo <= hi");
  if (n < 1) throw ArgumentError("log grid needs at least one point");
  std::vector<double> out(n);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    out[i] = std::round(std::exp(a + t * (b - a)) * 1e6) / 1e6;
  }
  return out;
}

/// The default sweep grid: 10 log-spaced ratios in [0.03, 0.5].
inline std::vector<double> default_sweep_ratios() { return log_spaced_ratios(0.03, 0.5, 10); }

inline void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw ArgumentError("sampling ratio " + format_double(ratio) + " outside (0, 1]");
}

struct TimedCompletion {
  CompletionResult result;
  double wall_time = 0.0;  // seconds, solver only
};

inline TimedCompletion timed_complete(const ObservationSet& obs, const HyperParams& hyper,
                                      const SolverConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  CompletionResult res = run(obs, hyper, cfg);
  const auto t1 = std::chrono::steady_clock::now();
  return {std::move(res), std::chrono::duration<double>(t1 - t0).count()};
}

struct TimedVp {
  VpStackResult result;
  double wall_time = 0.0;
};

inline TimedVp timed_vp(const ObservationSet& obs, const LassoConfig& cfg, unsigned threads) {
  const auto t0 = std::chrono::steady_clock::now();
  VpStackResult res = vp_recover_stack_detailed(obs, cfg, threads);
  const auto t1 = std::chrono::steady_clock::now();
  return {std::move(res), std::chrono::duration<double>(t1 - t0).count()};
}

/// Settings common to the protocols.
struct ProtocolConfig {
  std::uint64_t seed = 0;
  NoiseSpec noise = NoiseSpec::noiseless();
  std::size_t max_rank = 15;
  SolverConfig solver;
};

/// The tensor observations are drawn from: truth plus seeded noise.
inline DenseTensor observable_tensor(const DenseTensor& truth, const ProtocolConfig& cfg) {
  return cfg.noise.mode == NoiseSpec::Mode::none ? truth
                                                 : add_gaussian_noise(truth, cfg.noise, cfg.seed);
}

// ---------------------------------------------------------------------------
// Sampling-ratio sweep

struct SweepRow {
  double ratio = 0.0;
  std::uint64_t seed = 0;  // mask and solver seed of this repetition
  double relative_error = 0.0;
  std::size_t predicted_rank = 0;
  std::size_t iterations = 0;
  double wall_time = 0.0;
};

/// For every ratio and repetition r = 0..reps-1, samples with seed
/// cfg.seed + r and completes with the same solver seed. Rows are ordered by
/// ratio, then repetition.
inline std::vector<SweepRow> run_sweep(const DenseTensor& truth, const std::vector<double>& ratios,
                                       std::size_t reps, const ProtocolConfig& cfg) {
  if (ratios.empty()) throw ArgumentError("ratio grid is empty");
  if (reps < 1) throw ArgumentError("reps must be at least 1");
  for (double r : ratios) check_ratio(r);
  const DenseTensor source = observable_tensor(truth, cfg);
  const HyperParams hyper = HyperParams::defaults(cfg.max_rank);
  std::vector<SweepRow> rows;
  for (double ratio : ratios)
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const std::uint64_t seed = cfg.seed + rep;
      const ObservationSet obs = observe(source, sample_mask(truth.dims(), ratio, seed));
      SolverConfig sc = cfg.solver;
      sc.seed = seed;
      const auto tc = timed_complete(obs, hyper, sc);
      rows.push_back({ratio, seed, relative_error(tc.result.prediction, truth),
                      tc.result.predicted_rank, tc.result.iterations, tc.wall_time});
    }
  return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "ratio,seed,relative_error,predicted_rank,iterations,wall_time\n";
  for (const auto& r : rows)
    out << format_double(r.ratio) << ',' << r.seed << ',' << format_double(r.relative_error)
        << ',' << r.predicted_rank << ',' << r.iterations << ',' << format_double(r.wall_time)
        << '\n';
}

// ---------------------------------------------------------------------------
// Max-rank study

struct RankStudyRow {
  std::size_t max_rank = 0;
  std::size_t predicted_rank = 0;
  double relative_error = 0.0;
};

/// One observation set at `ratio` (mask seed cfg.seed) completed with each
/// max rank in turn. cfg.max_rank is ignored.
inline std::vector<RankStudyRow> run_rank_study(const DenseTensor& truth, double ratio,
                                                const std::vector<std::size_t>& max_ranks,
                                                const ProtocolConfig& cfg) {
  check_ratio(ratio);
  if (max_ranks.empty()) throw ArgumentError("max-rank list is empty");
  const ObservationSet obs =
      observe(observable_tensor(truth, cfg), sample_mask(truth.dims(), ratio, cfg.seed));
  SolverConfig sc = cfg.solver;
  sc.seed = cfg.seed;
  std::vector<RankStudyRow> rows;
  for (std::size_t mr : max_ranks) {
    const CompletionResult res = run(obs, HyperParams::defaults(mr), sc);
    rows.push_back({mr, res.predicted_rank, relative_error(res.prediction, truth)});
  }
  return rows;
}

/// Columns follow the usual "maximum rank / predicted rank / relative error"
/// table layout.
inline void write_rank_study_csv(std::ostream& out, const std::vector<RankStudyRow>& rows) {
  out << "max_rank,predicted_rank,relative_error\n";
  for (const auto& r : rows)
    out << r.max_rank << ',' << r.predicted_rank << ',' << format_double(r.relative_error)
        << '\n';
}

// ---------------------------------------------------------------------------
// Completion vs. virtual probe

struct CompareRow {
  std::string method;  // "bayes-cp" or "vp"
  double relative_error = 0.0;
  std::optional<std::size_t> predicted_rank;  // bayes-cp only
  std::size_t iterations = 0;
  double wall_time = 0.0;
  std::string status = "ok";  // "ok" or the error message of a failed run
  bool ok() const { return status == "ok"; }
};

/// Runs both methods on the same observations (ratio, mask seed cfg.seed).
/// A failure of one method is recorded in its row; the other still runs.
inline std::vector<CompareRow> run_compare(const DenseTensor& truth, double ratio,
                                           const ProtocolConfig& cfg, const LassoConfig& vp) {
  check_ratio(ratio);
  if (truth.order() != 3)
    throw ArgumentError("comparison needs an order-3 truth, got order " +
                        std::to_string(truth.order()));
  const ObservationSet obs =
      observe(observable_tensor(truth, cfg), sample_mask(truth.dims(), ratio, cfg.seed));
  std::vector<CompareRow> rows;

  CompareRow tc;
  tc.method = "bayes-cp";
  try {
    SolverConfig sc = cfg.solver;
    sc.seed = cfg.seed;
    const auto t = timed_complete(obs, HyperParams::defaults(cfg.max_rank), sc);
    tc.relative_error = relative_error(t.result.prediction, truth);
    tc.predicted_rank = t.result.predicted_rank;
    tc.iterations = t.result.iterations;
    tc.wall_time = t.wall_time;
  } catch (const Error& e) {
    tc.status = e.what();
  }
  rows.push_back(std::move(tc));

  CompareRow v;
  v.method = "vp";
  try {
    LassoConfig lc = vp;
    lc.seed = cfg.seed;
    const auto t = timed_vp(obs, lc, cfg.solver.threads);
    v.relative_error = relative_error(t.result.tensor, truth);
    v.iterations = t.result.iterations;
    v.wall_time = t.wall_time;
  } catch (const Error& e) {
    v.status = e.what();
  }
  rows.push_back(std::move(v));
  return rows;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace detail

inline void write_compare_csv(std::ostream& out, const std::vector<CompareRow>& rows,
                              double ratio, std::uint64_t seed) {
  out << "method,ratio,seed,relative_error,predicted_rank,iterations,wall_time,status\n";
  for (const auto& r : rows) {
    out << r.method << ',' << format_double(ratio) << ',' << seed << ',';
    if (r.ok()) out << format_double(r.relative_error);
    out << ',';
    if (r.predicted_rank) out << *r.predicted_rank;
    out << ',' << r.iterations << ',';
    if (r.ok()) out << format_double(r.wall_time);
    out << ',' << detail::csv_field(r.status) << '\n';
  }
}

}  // namespace tenfill
