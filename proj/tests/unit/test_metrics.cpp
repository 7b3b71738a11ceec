#include <gtest/gtest.h>

#include <cmath>

#include "json.hpp"
#include "magnet/checksum.hpp"
#include "magnet/metrics.hpp"
#include "magnet/oracles/backtest.hpp"
#include "test_util.hpp"

namespace magnet {
namespace {

TEST(ClassificationMetrics, ConfusionCounts) {
  const std::vector<double> p{0.9, 0.8, 0.3, 0.6, 0.1};
  const std::vector<int> y{1, 0, 1, 1, 0};
  const ClassificationMetrics m = classification_metrics(p, y);
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_EQ(m.tn, 1u);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.6);
  EXPECT_DOUBLE_EQ(m.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.f1, 2.0 / 3.0);
}

TEST(ClassificationMetrics, HalfIsNegative) {
  const std::vector<double> p{0.5};
  const std::vector<int> y{1};
  EXPECT_EQ(classification_metrics(p, y).fn, 1u);
}

TEST(ClassificationMetrics, ZeroDivisionConventions) {
  const std::vector<double> p{0.1, 0.2};
  const std::vector<int> y{0, 0};
  const ClassificationMetrics m = classification_metrics(p, y);
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  EXPECT_TRUE(m.auc_degenerate);
  EXPECT_EQ(m.auc, 0.5);
}

TEST(ClassificationMetrics, RejectsBadInput) {
  const std::vector<double> p{0.1, 0.2};
  const std::vector<int> y{0};
  EXPECT_THROW(classification_metrics(p, y), std::invalid_argument);
  EXPECT_THROW(classification_metrics({}, {}), std::invalid_argument);
}

TEST(RankAuc, ReferenceValues) {
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_EQ(rank_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y), 1.0);
  EXPECT_EQ(rank_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, y), 0.0);
  EXPECT_EQ(rank_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y), 0.5);
  EXPECT_EQ(rank_auc(std::vector<double>{0.1, 0.8, 0.4, 0.9}, y), 0.75);
  EXPECT_FALSE(rank_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());
}

TEST(RankAuc, MatchesTrapezoidOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(40);
    std::vector<int> y(40);
    for (std::size_t i = 0; i < 40; ++i) {
      s[i] = std::round(rng.uniform() * 10.0) / 10.0;  // many ties
      y[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(*rank_auc(s, y), oracles::trapezoid_auc(s, y), 1e-12);
  }
}

TEST(BacktestMetrics, MonotoneGrowth) {
  // 1% a day for 252 days.
  std::vector<double> v{100.0};
  for (int i = 0; i < 252; ++i) v.push_back(v.back() * 1.01);
  const BacktestMetrics m = backtest_metrics(v);
  EXPECT_NEAR(m.ar, std::pow(1.01, 252) - 1.0, 1e-9);
  EXPECT_EQ(m.mdd, 0.0);
  EXPECT_FALSE(m.cr.has_value());
  EXPECT_FALSE(m.sr.has_value());  // constant returns have no volatility
  EXPECT_EQ(m.returns.size(), 252u);
  EXPECT_EQ(m.drawdown.size(), 253u);
}

TEST(BacktestMetrics, DrawdownAndRatios) {
  const std::vector<double> v{100, 120, 90, 110, 80, 130};
  const BacktestMetrics m = backtest_metrics(v, 0.0, 5.0);
  EXPECT_NEAR(m.mdd, 80.0 / 120.0 - 1.0, 1e-15);
  EXPECT_NEAR(m.mdd, oracles::max_drawdown(v), 1e-15);
  EXPECT_NEAR(m.ar, 0.3, 1e-12);  // five periods make one year
  ASSERT_TRUE(m.cr.has_value());
  EXPECT_NEAR(*m.cr, m.ar / std::abs(m.mdd), 1e-15);
  ASSERT_TRUE(m.sr.has_value());
  double mean = 0.0, var = 0.0;
  for (double r : m.returns) mean += r / 5.0;
  for (double r : m.returns) var += (r - mean) * (r - mean) / 5.0;
  EXPECT_NEAR(*m.sr, m.ar / (std::sqrt(var) * std::sqrt(5.0)), 1e-12);
  EXPECT_NEAR(m.drawdown[2], -0.25, 1e-15);
}

TEST(BacktestMetrics, RejectsInvalidSeries) {
  EXPECT_THROW(backtest_metrics(std::vector<double>{100.0}), std::invalid_argument);
  EXPECT_THROW(backtest_metrics(std::vector<double>{100.0, 0.0}), std::invalid_argument);
}

TEST(MetricsJson, KeysAndNulls) {
  const std::vector<double> flat{100, 100, 100};
  const std::vector<double> p{0.2, 0.7};
  const std::vector<int> y{0, 1};
  const auto j = nlohmann::json::parse(metrics_json(classification_metrics(p, y), backtest_metrics(flat)));
  for (const char* key : {"AR", "SR", "CR", "MDD", "ACC", "PRE", "REC", "F1", "AUC", "SR_defined", "CR_defined", "AUC_degenerate"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_TRUE(j["SR"].is_null());
  EXPECT_TRUE(j["CR"].is_null());
  EXPECT_FALSE(j["SR_defined"].get<bool>());
  EXPECT_EQ(j["AUC"].get<double>(), 1.0);
}

TEST(FormatNumber, ShortestRoundTrip) {
  EXPECT_EQ(format_number(1e6), "1000000");
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(-2.5), "-2.5");
  EXPECT_EQ(format_number(0.0), "0");
  EXPECT_EQ(format_number(1e-300), "1e-300");
  for (double v : {1.0 / 3.0, 497506.23441396514, 2.2250738585072014e-308, 12345678901234567.0})
    EXPECT_EQ(std::stod(format_number(v)), v);
}

}  // namespace
}  // namespace magnet
