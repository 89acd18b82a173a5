#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "oracles/als.hpp"
#include "tenfill/log.hpp"
#include "tenfill/synth.hpp"

using namespace tenfill;

namespace {

// Captures warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture()
      : old_(set_warning_sink([this](const std::string& m) { messages.push_back(m); })) {}
  ~WarningCapture() { set_warning_sink(old_); }
  std::vector<std::string> messages;

 private:
  WarningSink old_;
};

}  // namespace

TEST(RandomCp, ExactRankThreeByAlsFit) {
  const auto syn = random_cp_tensor({30, 30, 15}, 3, 7);
  EXPECT_LT(oracle::als_residual(syn.tensor, 3, 200), 1e-10);
  EXPECT_GT(oracle::als_residual(syn.tensor, 2, 200), 1e-2);
}

TEST(RandomCp, RankOneMatrixIsSingular) {
  const auto syn = random_cp_tensor({2, 2}, 1, 3);
  const auto& x = syn.tensor;
  const double det = x({1, 1}) * x({2, 2}) - x({1, 2}) * x({2, 1});
  EXPECT_NEAR(det, 0.0, 1e-12 * std::max(1.0, frobenius_norm(x) * frobenius_norm(x)));
}

TEST(RandomCp, DeterministicPerSeed) {
  const auto a = random_cp_tensor({5, 4, 3}, 2, 99);
  const auto b = random_cp_tensor({5, 4, 3}, 2, 99);
  const auto c = random_cp_tensor({5, 4, 3}, 2, 100);
  EXPECT_EQ(a.tensor, b.tensor);
  EXPECT_NE(a.tensor, c.tensor);
  EXPECT_EQ(cp_reconstruct(a.model), a.tensor);
}

TEST(RandomCp, LargeRankWarnsOnly) {
  WarningCapture cap;
  const auto syn = random_cp_tensor({2, 2, 2}, 5, 1);
  EXPECT_EQ(syn.model.rank(), 5u);
  EXPECT_EQ(cap.messages.size(), 1u);
  EXPECT_THROW(random_cp_tensor({2, 2}, 0, 1), ArgumentError);
}

TEST(Noise, InfinitePrecisionPassesThrough) {
  const auto x = random_cp_tensor({4, 4}, 2, 1).tensor;
  EXPECT_EQ(add_gaussian_noise(x, NoiseSpec::from_precision(INFINITY), 5), x);
  EXPECT_EQ(add_gaussian_noise(x, NoiseSpec::noiseless(), 5), x);
}

TEST(Noise, SnrThirtyDbPowerRatio) {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(20000);
  for (double& e : v) e = normal(gen);
  const DenseTensor x({100, 200}, v);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto y = add_gaussian_noise(x, NoiseSpec::from_snr_db(30.0), seed);
    double en = 0.0, ex = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = y.at_linear(i) - x.at_linear(i);
      en += d * d;
      ex += x.at_linear(i) * x.at_linear(i);
    }
    const double ratio = en / ex;
    EXPECT_GE(ratio, 0.0008);
    EXPECT_LE(ratio, 0.00125);
  }
}

TEST(Noise, SeedsDifferInDrawNotScale) {
  const auto x = random_cp_tensor({30, 30, 15}, 3, 2).tensor;
  const auto spec = NoiseSpec::from_snr_db(20.0);
  const auto y1 = add_gaussian_noise(x, spec, 1), y2 = add_gaussian_noise(x, spec, 2);
  double n1 = 0.0, n2 = 0.0;
  bool differ = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e1 = y1.at_linear(i) - x.at_linear(i), e2 = y2.at_linear(i) - x.at_linear(i);
    n1 += e1 * e1;
    n2 += e2 * e2;
    differ = differ || e1 != e2;
  }
  EXPECT_TRUE(differ);
  EXPECT_NEAR(std::sqrt(n1 / n2), 1.0, 0.05);
  EXPECT_EQ(add_gaussian_noise(x, spec, 1), y1);
}

TEST(Noise, ZeroSignalInSnrModeThrows) {
  EXPECT_THROW(add_gaussian_noise(DenseTensor::zeros({3, 3}), NoiseSpec::from_snr_db(10), 1),
               DomainError);
  EXPECT_THROW(NoiseSpec::from_snr_db(INFINITY), ArgumentError);
  EXPECT_THROW(NoiseSpec::from_precision(0.0), ArgumentError);
}

TEST(SampleMask, FullScaleCount) {
  const auto mask = sample_mask({144, 256, 20}, 0.15, 1);
  EXPECT_EQ(mask.size(), 110592u);
}

TEST(SampleMask, FullRatioCoversEverything) {
  const Dims dims{3, 4, 2};
  const auto mask = sample_mask(dims, 1.0, 5);
  ASSERT_EQ(mask.size(), 24u);
  std::set<std::size_t> offs;
  for (const auto& m : mask) offs.insert(linear_offset(dims, m));
  EXPECT_EQ(offs.size(), 24u);
}

TEST(SampleMask, SmallMatrixQuarter) {
  const auto mask = sample_mask({4, 4}, 0.25, 17);
  ASSERT_EQ(mask.size(), 4u);
  std::set<std::size_t> offs;
  for (const auto& m : mask) {
    EXPECT_GE(m[0], 1u);
    EXPECT_LE(m[0], 4u);
    EXPECT_GE(m[1], 1u);
    EXPECT_LE(m[1], 4u);
    offs.insert(linear_offset({4, 4}, m));
  }
  EXPECT_EQ(offs.size(), 4u);
}

TEST(SampleMask, RejectsBadRatios) {
  EXPECT_THROW(sample_mask({4, 4}, 0.0, 1), ArgumentError);
  EXPECT_THROW(sample_mask({4, 4}, -0.1, 1), ArgumentError);
  EXPECT_THROW(sample_mask({4, 4}, 1.01, 1), ArgumentError);
}

TEST(SampleMask, SizeAndDistinctnessOverRandomTriples) {
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    Dims dims(1 + gen() % 3);
    for (auto& n : dims) n = 1 + gen() % 12;
    const double ratio = std::max(1e-3, unit(gen));
    const std::uint64_t seed = gen();
    const auto mask = sample_mask(dims, ratio, seed);
    const double total = static_cast<double>(num_elements(dims));
    const auto expect = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(ratio * total)));
    ASSERT_EQ(mask.size(), expect);
    std::set<std::size_t> offs;
    for (const auto& m : mask) offs.insert(linear_offset(dims, m));
    ASSERT_EQ(offs.size(), mask.size());
    ASSERT_EQ(sample_mask(dims, ratio, seed).size(), mask.size());
  }
}

TEST(SampleMask, InclusionFrequencyIsUniform) {
  const Dims dims{4, 4};
  const int seeds = 10000;
  std::vector<int> hits(16, 0);
  for (int s = 0; s < seeds; ++s)
    for (const auto& m : sample_mask(dims, 0.25, static_cast<std::uint64_t>(s)))
      ++hits[linear_offset(dims, m)];
  const double sd = std::sqrt(seeds * 0.25 * 0.75);
  for (int h : hits) EXPECT_LE(std::abs(h - seeds * 0.25), 5.0 * sd) << h;
}

TEST(SampleMask, DeterministicPerSeed) {
  const auto a = sample_mask({10, 10, 5}, 0.3, 4);
  const auto b = sample_mask({10, 10, 5}, 0.3, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].values(), b[i].values());
}

TEST(Observe, FullMask) {
  const auto x = random_cp_tensor({3, 4}, 2, 1).tensor;
  const auto obs = observe(x, sample_mask(x.dims(), 1.0, 1));
  EXPECT_EQ(obs.size(), 12u);
  EXPECT_EQ(obs.to_dense(), x);
}

TEST(Observe, SingletonAtOrigin) {
  const auto x = random_cp_tensor({3, 4, 2}, 2, 1).tensor;
  const auto obs = observe(x, {MultiIndex({1, 1, 1})});
  ASSERT_EQ(obs.size(), 1u);
  EXPECT_EQ(obs.value(0), x.at_linear(0));
}

TEST(Observe, ValuesMatchModelEntries) {
  const auto syn = random_cp_tensor({30, 30, 15}, 3, 9);
  const auto obs = observe(syn.tensor, sample_mask(syn.tensor.dims(), 0.15, 9));
  for (std::size_t e = 0; e < obs.size(); ++e)
    ASSERT_EQ(obs.value(e), cp_evaluate_entry(syn.model, obs.index(e)));
}

TEST(Observe, OutOfBoundsMaskThrows) {
  const auto x = DenseTensor::zeros({2, 2});
  EXPECT_THROW(observe(x, {MultiIndex({3, 1})}), IndexError);
}

TEST(Wafer, SingleSmoothDieIsTheSurface) {
  WaferParams p;
  p.roughness = 0.0;
  p.gain_std = 0.0;
  p.offset_std = 0.0;
  const auto w = wafer_pattern_detailed({9, 7, 1}, p, 3);
  for (std::size_t i = 1; i <= 9; ++i)
    for (std::size_t j = 1; j <= 7; ++j) {
      const double x = -1.0 + 2.0 * static_cast<double>(i - 1) / 8.0;
      const double y = -1.0 + 2.0 * static_cast<double>(j - 1) / 6.0;
      const auto& c = p.surface;
      const double s = c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y;
      EXPECT_NEAR(w.tensor({i, j, 1}), s, 1e-14);
    }
}

TEST(Wafer, DiesAreScaledCopies) {
  WaferParams p;
  p.roughness = 0.0;
  const auto w = wafer_pattern_detailed({8, 6, 2}, p, 5);
  ASSERT_NE(w.gains[0], w.gains[1]);
  const double k = w.gains[1] / w.gains[0];
  for (std::size_t i = 1; i <= 8; ++i)
    for (std::size_t j = 1; j <= 6; ++j) {
      const double a = w.tensor({i, j, 1}) - w.offsets[0];
      const double b = w.tensor({i, j, 2}) - w.offsets[1];
      EXPECT_NEAR(b, k * a, 1e-12 * std::max(1.0, std::abs(b)));
    }
}

TEST(Wafer, DefaultPatternIsNearlyLowRank) {
  const auto x = wafer_pattern({64, 64, 8}, WaferParams{}, 1);
  EXPECT_LT(oracle::als_residual(x, 10, 60, 1), 0.05);
}

TEST(Wafer, RejectsOtherOrders) {
  EXPECT_THROW(wafer_pattern({4, 4}, WaferParams{}, 1), ArgumentError);
  EXPECT_THROW(wafer_pattern({4, 4, 4, 4}, WaferParams{}, 1), ArgumentError);
}

TEST(Wafer, DeterministicPerSeed) {
  EXPECT_EQ(wafer_pattern({6, 5, 3}, WaferParams{}, 8), wafer_pattern({6, 5, 3}, WaferParams{}, 8));
}
