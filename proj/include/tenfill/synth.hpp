#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tenfill/error.hpp"
#include "tenfill/log.hpp"
#include "tenfill/observations.hpp"
#include "tenfill/random.hpp"
#include "tenfill/tensor.hpp"

namespace tenfill {

// Stream tags used with sub_seed(). Kept in one place so the manifest
// printed by the CLI can list them.
namespace streams {
inline constexpr const char* factors = "factors";
inline constexpr const char* noise = "noise";
inline constexpr const char* mask = "mask";
inline constexpr const char* wafer = "wafer";
inline constexpr const char* init = "init";
inline constexpr const char* cv = "cv";
}  // namespace streams

struct SyntheticCp {
  CpModel model;
  DenseTensor tensor;
};

/// Random CP tensor with i.i.d. standard-normal factor entries, drawn mode by
/// mode, row by row, column by column from the "factors" stream.
inline SyntheticCp random_cp_tensor(const Dims& dims, std::size_t rank,
                                    std::uint64_t seed) {
  check_dims(dims);
  if (rank < 1) throw ArgumentError("rank must be at least 1");
  const auto largest = std::max_element(dims.begin(), dims.end());
  std::size_t bound = 1;
  for (auto it = dims.begin(); it != dims.end(); ++it)
    if (it != largest) bound *= *it;
  if (rank > bound)
    warn("rank " + std::to_string(rank) + " exceeds generic bound " +
         std::to_string(bound) + " for extents " + detail::format_dims(dims));

  auto gen = make_engine(seed, streams::factors);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::MatrixXd> factors;
  factors.reserve(dims.size());
  for (std::size_t n : dims) {
    Eigen::MatrixXd f(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rank));
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      for (Eigen::Index j = 0; j < f.cols(); ++j) f(i, j) = normal(gen);
    factors.push_back(std::move(f));
  }
  CpModel model(std::move(factors));
  DenseTensor tensor = cp_reconstruct(model);
  return {std::move(model), std::move(tensor)};
}

/// Either a target SNR in dB, an exact noise precision tau, or no noise.
struct NoiseSpec {
  enum class Mode { none, snr_db, precision };
  Mode mode = Mode::none;
  double value = 0.0;

  static NoiseSpec noiseless() { return {}; }
  static NoiseSpec from_snr_db(double snr) {
    if (!std::isfinite(snr)) throw ArgumentError("SNR must be finite");
    return {Mode::snr_db, snr};
  }
  static NoiseSpec from_precision(double tau) {
    if (!(tau > 0.0)) throw ArgumentError("noise precision must be positive");
    return {Mode::precision, tau};
  }
};

/// Noise standard deviation implied by spec for signal x.
inline double noise_sigma(const DenseTensor& x, const NoiseSpec& spec) {
  switch (spec.mode) {
    case NoiseSpec::Mode::none:
      return 0.0;
    case NoiseSpec::Mode::precision:
      if (std::isinf(spec.value)) return 0.0;
      return 1.0 / std::sqrt(spec.value);
    case NoiseSpec::Mode::snr_db: {
      const double norm = frobenius_norm(x);
      if (!(norm > 0.0)) throw DomainError("SNR noise requested for a zero signal");
      const double power = norm * norm / static_cast<double>(x.size());
      return std::sqrt(power * std::pow(10.0, -spec.value / 10.0));
    }
  }
  return 0.0;
}

/// y = x + eps, eps i.i.d. N(0, sigma^2) from the "noise" stream.
inline DenseTensor add_gaussian_noise(const DenseTensor& x, const NoiseSpec& spec,
                                      std::uint64_t seed) {
  const double sigma = noise_sigma(x, spec);
  if (sigma == 0.0) return x;
  auto gen = make_engine(seed, streams::noise);
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v += normal(gen);
  return DenseTensor(x.dims(), std::move(out));
}

/// Number of samples for a ratio: round half away from zero, at least one.
inline std::size_t sample_count(const Dims& dims, double ratio) {
  if (!(ratio > 0.0) || ratio > 1.0)
    throw ArgumentError("sampling ratio " + std::to_string(ratio) +
                        " outside (0, 1]");
  const double total = static_cast<double>(num_elements(dims));
  const auto n = static_cast<std::size_t>(std::round(ratio * total));
  return std::clamp<std::size_t>(n, 1, num_elements(dims));
}

/// Uniform sample without replacement via partial Fisher-Yates over the
/// linear index space. Returned in ascending linear order.
inline std::vector<MultiIndex> sample_mask(const Dims& dims, double ratio,
                                           std::uint64_t seed) {
  check_dims(dims);
  const std::size_t n = sample_count(dims, ratio);
  const std::size_t total = num_elements(dims);
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto gen = make_engine(seed, streams::mask);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(perm[i], perm[pick(gen)]);
  }
  perm.resize(n);
  std::sort(perm.begin(), perm.end());
  std::vector<MultiIndex> mask;
  mask.reserve(n);
  for (std::size_t off : perm) mask.push_back(multi_index(dims, off));
  return mask;
}

inline ObservationSet observe(const DenseTensor& truth,
                              const std::vector<MultiIndex>& mask) {
  ObservationSet obs(truth.dims());
  for (const auto& idx : mask) obs.insert(idx, truth(idx));
  return obs;
}

/// Parameters of the wafer-like generator. The shared die surface is
/// s(x, y) = c0 + c1 x + c2 y + c3 x^2 + c4 x y + c5 y^2 over x, y in [-1, 1].
struct WaferParams {
  std::array<double, 6> surface{5.0, 1.0, -0.6, 1.2, 0.4, 0.9};
  double gain_mean = 1.0;
  double gain_std = 0.15;
  double offset_std = 0.5;
  double roughness = 0.05;
};

struct WaferSample {
  DenseTensor tensor;
  Eigen::MatrixXd surface;       // n1 x n2
  std::vector<double> gains;     // per die
  std::vector<double> offsets;   // per die
};

/// Die slice i3 = gain[i3] * surface + offset[i3] + roughness * N(0,1).
inline WaferSample wafer_pattern_detailed(const Dims& dims3, const WaferParams& p,
                                          std::uint64_t seed) {
  if (dims3.size() != 3)
    throw ArgumentError("wafer pattern needs 3 extents, got " +
                        std::to_string(dims3.size()));
  check_dims(dims3);
  const std::size_t n1 = dims3[0], n2 = dims3[1], n3 = dims3[2];
  auto coord = [](std::size_t i, std::size_t n) {
    return n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  Eigen::MatrixXd surface(static_cast<Eigen::Index>(n1), static_cast<Eigen::Index>(n2));
  const auto& c = p.surface;
  for (std::size_t i = 0; i < n1; ++i) {
    const double x = coord(i, n1);
    for (std::size_t j = 0; j < n2; ++j) {
      const double y = coord(j, n2);
      surface(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y;
    }
  }

  auto gen = make_engine(seed, streams::wafer);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> gains(n3), offsets(n3);
  for (std::size_t d = 0; d < n3; ++d) {
    gains[d] = p.gain_mean + p.gain_std * normal(gen);
    offsets[d] = p.offset_std * normal(gen);
  }
  std::vector<double> data(n1 * n2 * n3);
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j)
      for (std::size_t d = 0; d < n3; ++d) {
        double v = gains[d] * surface(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +
                   offsets[d];
        if (p.roughness != 0.0) v += p.roughness * normal(gen);
        data[(i * n2 + j) * n3 + d] = v;
      }
  return {DenseTensor(dims3, std::move(data)), std::move(surface), std::move(gains),
          std::move(offsets)};
}

inline DenseTensor wafer_pattern(const Dims& dims3, const WaferParams& p,
                                 std::uint64_t seed) {
  return wafer_pattern_detailed(dims3, p, seed).tensor;
}

}  // namespace tenfill
