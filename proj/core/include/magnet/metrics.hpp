#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace magnet {

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;  // 0 when nothing is predicted positive
  double recall = 0.0;     // 0 when there are no positives
  double f1 = 0.0;         // 0 when precision + recall = 0
  double auc = 0.5;
  bool auc_degenerate = false;  // single-class labels: auc reported as 0.5
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

/// Hard decisions at prob > 0.5; AUC from the Mann-Whitney statistic with
/// ties credited 0.5. Throws std::invalid_argument on empty or mismatched input.
ClassificationMetrics classification_metrics(std::span<const double> probs, std::span<const int> labels);

/// Mann-Whitney AUC; nullopt when labels hold a single class.
std::optional<double> rank_auc(std::span<const double> scores, std::span<const int> labels);

struct BacktestMetrics {
  double ar = 0.0;               // annualized return
  std::optional<double> sr;      // Sharpe ratio; nullopt when volatility is zero
  std::optional<double> cr;      // Calmar ratio; nullopt when drawdown is zero
  double mdd = 0.0;              // maximum drawdown, <= 0
  double volatility = 0.0;       // annualized
  std::vector<double> returns;   // r_t = V_t / V_{t-1} - 1, length T
  std::vector<double> drawdown;  // (V_t - running max) / running max, length T + 1
};

inline constexpr double kTradingDays = 252.0;
inline constexpr double kRiskFreeRate = 0.02;

/// Throws std::invalid_argument for fewer than 2 values or non-positive values.
BacktestMetrics backtest_metrics(std::span<const double> values, double risk_free = kRiskFreeRate,
                                 double periods_per_year = kTradingDays);

/// JSON object with keys AR, SR, CR, MDD, ACC, PRE, REC, F1, AUC (undefined
/// ratios are null) plus SR_defined, CR_defined and AUC_degenerate flags.
std::string metrics_json(const ClassificationMetrics& cls, const BacktestMetrics& bt);

}  // namespace magnet
