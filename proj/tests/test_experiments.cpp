#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "tenfill/dct.hpp"
#include "tenfill/experiments.hpp"

using namespace tenfill;

namespace {

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

// Rank-2 tensor whose mode-1 and mode-2 vectors are low-frequency DCT basis
// functions, so every slice is 2-sparse in the 2-D DCT domain.
DenseTensor smooth_low_rank(std::size_t n1, std::size_t n2, std::size_t n3) {
  const auto d1 = dct_matrix(n1), d2 = dct_matrix(n2);
  Eigen::MatrixXd u1(static_cast<Eigen::Index>(n1), 2), u2(static_cast<Eigen::Index>(n2), 2),
      u3(static_cast<Eigen::Index>(n3), 2);
  u1.col(0) = d1.row(0).transpose();
  u1.col(1) = d1.row(1).transpose();
  u2.col(0) = d2.row(1).transpose();
  u2.col(1) = d2.row(2).transpose();
  for (Eigen::Index k = 0; k < u3.rows(); ++k) {
    u3(k, 0) = 20.0 + static_cast<double>(k % 3);
    u3(k, 1) = 10.0 - 3.0 * static_cast<double>(k % 4);
  }
  return cp_reconstruct(CpModel({u1, u2, u3}));
}

}  // namespace

TEST(SweepGrid, DefaultEndpoints) {
  const auto r = default_sweep_ratios();
  ASSERT_EQ(r.size(), 10u);
  EXPECT_EQ(r.front(), 0.03);
  EXPECT_EQ(r.back(), 0.5);
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_GT(r[i], r[i - 1]);
  EXPECT_EQ(r[1], 0.041009);
}

TEST(SweepGrid, RejectsBadRatios) {
  EXPECT_THROW(check_ratio(0.0), ArgumentError);
  EXPECT_THROW(check_ratio(1.5), ArgumentError);
  const auto truth = random_cp_tensor({4, 4, 4}, 1, 1).tensor;
  EXPECT_THROW(run_sweep(truth, {0.5, 1.2}, 1, ProtocolConfig{}), ArgumentError);
  EXPECT_THROW(run_sweep(truth, {}, 1, ProtocolConfig{}), ArgumentError);
  EXPECT_THROW(run_sweep(truth, {0.5}, 0, ProtocolConfig{}), ArgumentError);
}

TEST(Sweep, FullObservationIsExact) {
  const auto truth = random_cp_tensor({10, 8, 6}, 2, 3).tensor;
  ProtocolConfig cfg;
  cfg.seed = 3;
  cfg.max_rank = 5;
  const auto rows = run_sweep(truth, {1.0}, 2, cfg);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].seed, 3u);
  EXPECT_EQ(rows[1].seed, 4u);
  for (const auto& r : rows) EXPECT_LE(r.relative_error, 1e-6);
}

TEST(Sweep, CsvLayout) {
  const auto truth = random_cp_tensor({6, 6, 4}, 1, 2).tensor;
  ProtocolConfig cfg;
  cfg.max_rank = 3;
  const auto rows = run_sweep(truth, {0.5, 0.8}, 1, cfg);
  std::ostringstream os;
  write_sweep_csv(os, rows);
  const std::string csv = os.str();
  EXPECT_EQ(first_line(csv), "ratio,seed,relative_error,predicted_rank,iterations,wall_time");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(RankStudy, CannotExceedMaxRank) {
  const auto truth = random_cp_tensor({15, 12, 10}, 3, 4).tensor;
  ProtocolConfig cfg;
  cfg.seed = 4;
  const auto rows = run_rank_study(truth, 0.3, {1}, cfg);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].predicted_rank, 1u);
  std::ostringstream os;
  write_rank_study_csv(os, rows);
  EXPECT_EQ(first_line(os.str()), "max_rank,predicted_rank,relative_error");
}

TEST(Compare, RandomLowRankFavoursCompletion) {
  const auto truth = random_cp_tensor({30, 30, 15}, 3, 7).tensor;
  ProtocolConfig cfg;
  cfg.seed = 7;
  const auto rows = run_compare(truth, 0.1, cfg, LassoConfig{});
  ASSERT_EQ(rows.size(), 2u);
  ASSERT_TRUE(rows[0].ok() && rows[1].ok());
  EXPECT_EQ(rows[0].method, "bayes-cp");
  EXPECT_LE(rows[0].relative_error, 1e-3);
  EXPECT_GE(rows[1].relative_error, 0.5);
  EXPECT_FALSE(rows[1].predicted_rank.has_value());
}

TEST(Compare, SmoothLowRankSuitsBoth) {
  const auto truth = smooth_low_rank(24, 24, 10);
  ProtocolConfig cfg;
  cfg.seed = 2;
  cfg.max_rank = 8;
  const auto rows = run_compare(truth, 0.3, cfg, LassoConfig{});
  for (const auto& r : rows) {
    ASSERT_TRUE(r.ok()) << r.status;
    EXPECT_LT(r.relative_error, 0.1) << r.method;
  }
}

TEST(Compare, FailureIsRecordedPerRow) {
  const auto truth = random_cp_tensor({8, 8, 3}, 2, 1).tensor;
  LassoConfig bad;
  bad.cv_folds = 1;
  ProtocolConfig cfg;
  cfg.max_rank = 4;
  const auto rows = run_compare(truth, 0.5, cfg, bad);
  EXPECT_TRUE(rows[0].ok());
  EXPECT_FALSE(rows[1].ok());
  std::ostringstream os;
  write_compare_csv(os, rows, 0.5, 0);
  EXPECT_EQ(first_line(os.str()),
            "method,ratio,seed,relative_error,predicted_rank,iterations,wall_time,status");
  EXPECT_NE(os.str().find("vp,0.5,0,,,0,,"), std::string::npos) << os.str();
}

TEST(Compare, NeedsOrderThree) {
  EXPECT_THROW(run_compare(random_cp_tensor({5, 5}, 1, 1).tensor, 0.5, ProtocolConfig{}, LassoConfig{}),
               ArgumentError);
}

TEST(Csv, QuotesFieldsWithSeparators) {
  EXPECT_EQ(detail::csv_field("ok"), "ok");
  EXPECT_EQ(detail::csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(detail::csv_field("say \"x\""), "\"say \"\"x\"\"\"");
}
