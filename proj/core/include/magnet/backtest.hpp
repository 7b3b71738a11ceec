#pragma once

// Daily top-n equal-weight long-only strategy with a stop-loss exit to cash.

#include <span>
#include <string>
#include <vector>

#include "magnet/metrics.hpp"
#include "magnet/tensor.hpp"

namespace magnet {

struct StrategyParams {
  double p = 0.5;   // target portfolio size as a fraction of N, in (0, 1]
  double q = 0.5;   // stop-loss fraction of the target size, in (0, 1)
  double r = 0.5;   // fraction of predicted risers held in the reduced regime, in [0, 1]
  double tau = 0.0025;
  double initial_capital = 1'000'000.0;

  /// Throws std::invalid_argument.
  void validate() const;
};

// Tolerance for the branch comparisons and floors, so grid values such as
// 0.15 * 20 = 3.0000000000000004 behave like their decimal meaning.
inline constexpr double kBranchEpsilon = 1e-9;
// Rebalancing trades smaller than this fraction of portfolio value are skipped.
inline constexpr double kDustFraction = 1e-6;

struct Trade {
  std::size_t day = 0;
  std::size_t stock = 0;
  double shares = 0.0;  // positive buy, negative sell
  double price = 0.0;
  double notional = 0.0;  // |shares| * price
  double cost = 0.0;      // tau * notional
};

struct PortfolioState {
  double cash = 0.0;
  std::vector<double> shares;
  std::vector<double> values;  // marked-to-market value series, starts with the initial capital
  std::vector<Trade> trades;
  std::size_t day = 0;

  static PortfolioState initial(std::size_t stocks, double capital);
  double value(std::span<const double> prices) const;
};

enum class Regime { kFull, kReduced, kExit };

struct StepReport {
  std::size_t predicted_up = 0;  // M
  std::size_t targets = 0;       // n_t
  Regime regime = Regime::kExit;
  double traded_notional = 0.0;
  double costs = 0.0;
};

/// Number of stocks to hold and the regime for M predicted risers out of N.
StepReport target_count(std::size_t predicted_up, std::size_t stocks, const StrategyParams& params);

/// Indices of the n highest probabilities; ties go to the lower index
/// (tickers are stored in lexicographic order).
std::vector<std::size_t> top_n(std::span<const double> probs, std::size_t n);

/// Trades at today's prices, then marks the portfolio to tomorrow's prices.
/// `cost_sign` exists for fault injection in the verification suite and is +1 in normal use.
StepReport daily_step(std::span<const double> probs, std::span<const double> prices_today,
                      std::span<const double> prices_next, PortfolioState& state, const StrategyParams& params,
                      double cost_sign = 1.0);

struct BacktestResult {
  PortfolioState state;
  std::vector<StepReport> steps;
  BacktestMetrics metrics;
};

/// predictions [days, N] of rise probabilities; prices [days + 1, N].
BacktestResult run_backtest(const Tensor& predictions, const Tensor& prices, const StrategyParams& params,
                            double cost_sign = 1.0);

struct GridSpec {
  std::vector<double> p, q, r;

  /// p in {0.05, ..., 1}, q in {0.05, ..., 0.95}, r in {0, ..., 1}, step 0.05.
  static GridSpec standard();
};

struct GridResult {
  StrategyParams best;
  BacktestMetrics metrics;
  std::size_t evaluated = 0;
};

/// Exhaustive search maximizing the Sharpe ratio; ties go to the higher
/// annualized return, then the lexicographically smallest (p, q, r); points
/// with an undefined ratio rank last.
GridResult grid_search(const Tensor& predictions, const Tensor& prices, const GridSpec& grid,
                       const StrategyParams& base = {});

/// date,value,daily_return,drawdown with one row per value (first return empty).
std::string equity_curve_csv(const BacktestResult& result, std::span<const std::string> dates);
/// day,date,ticker,side,shares,price,notional,cost
std::string trade_log_csv(const BacktestResult& result, std::span<const std::string> dates,
                          std::span<const std::string> tickers);

}  // namespace magnet
