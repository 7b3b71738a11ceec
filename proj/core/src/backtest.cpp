#include "magnet/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "magnet/checksum.hpp"

namespace magnet {

namespace {

// Strict ordering of grid candidates: better first.
bool better(const BacktestMetrics& a, const StrategyParams& pa, const BacktestMetrics& b, const StrategyParams& pb) {
  if (a.sr.has_value() != b.sr.has_value()) return a.sr.has_value();
  if (a.sr && *a.sr != *b.sr) return *a.sr > *b.sr;
  if (a.ar != b.ar) return a.ar > b.ar;
  if (pa.p != pb.p) return pa.p < pb.p;
  if (pa.q != pb.q) return pa.q < pb.q;
  return pa.r < pb.r;
}

std::vector<double> steps_of(int first, int last) {
  std::vector<double> out;
  for (int k = first; k <= last; ++k) out.push_back(static_cast<double>(k) / 20.0);
  return out;
}

}  // namespace

void StrategyParams::validate() const {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("strategy p must lie in (0, 1]");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("strategy q must lie in (0, 1)");
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("strategy r must lie in [0, 1]");
  if (!(tau >= 0.0 && tau < 1.0)) throw std::invalid_argument("transaction cost must lie in [0, 1)");
  if (!(initial_capital > 0.0) || !std::isfinite(initial_capital)) {
    throw std::invalid_argument("initial capital must be positive");
  }
}

PortfolioState PortfolioState::initial(std::size_t stocks, double capital) {
  PortfolioState s;
  s.cash = capital;
  s.shares.assign(stocks, 0.0);
  s.values.push_back(capital);
  return s;
}

double PortfolioState::value(std::span<const double> prices) const {
  double v = cash;
  for (std::size_t i = 0; i < shares.size(); ++i) v += shares[i] * prices[i];
  return v;
}

StepReport target_count(std::size_t predicted_up, std::size_t stocks, const StrategyParams& params) {
  StepReport rep;
  rep.predicted_up = predicted_up;
  const double m = static_cast<double>(predicted_up);
  const double pn = params.p * static_cast<double>(stocks);
  if (m + kBranchEpsilon >= pn) {
    rep.regime = Regime::kFull;
    rep.targets = static_cast<std::size_t>(std::floor(pn + kBranchEpsilon));
  } else if (m + kBranchEpsilon >= pn * params.q) {
    rep.regime = Regime::kReduced;
    rep.targets = static_cast<std::size_t>(std::floor(params.r * m + kBranchEpsilon));
  } else {
    rep.regime = Regime::kExit;
    rep.targets = 0;
  }
  return rep;
}

std::vector<std::size_t> top_n(std::span<const double> probs, std::size_t n) {
  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  idx.resize(std::min(n, idx.size()));
  return idx;
}

StepReport daily_step(std::span<const double> probs, std::span<const double> prices_today,
                      std::span<const double> prices_next, PortfolioState& state, const StrategyParams& params,
                      double cost_sign) {
  const std::size_t n = state.shares.size();
  if (probs.size() != n || prices_today.size() != n || prices_next.size() != n) {
    throw std::invalid_argument("daily_step: length mismatch");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(prices_today[i] > 0.0) || !(prices_next[i] > 0.0)) throw std::invalid_argument("prices must be positive");
  }
  const double tau = params.tau * cost_sign;
  const std::size_t up = static_cast<std::size_t>(std::count_if(probs.begin(), probs.end(), [](double x) { return x > 0.5; }));
  StepReport rep = target_count(up, n, params);
  const std::vector<std::size_t> targets = top_n(probs, rep.targets);
  std::vector<char> is_target(n, 0);
  for (std::size_t i : targets) is_target[i] = 1;

  const double dust = kDustFraction * state.value(prices_today);
  auto trade = [&](std::size_t i, double shares) {
    const double notional = std::abs(shares) * prices_today[i];
    const double cost = tau * notional;
    state.cash += shares > 0.0 ? -(notional + cost) : notional - cost;
    state.shares[i] += shares;
    state.trades.push_back(Trade{state.day, i, shares, prices_today[i], notional, cost});
    rep.traded_notional += notional;
    rep.costs += cost;
  };

  // Liquidate everything outside the target set.
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_target[i] && state.shares[i] != 0.0) {
      trade(i, -state.shares[i]);
    }
  }
  if (!targets.empty()) {
    const double target_value = state.value(prices_today) / static_cast<double>(targets.size());
    // Sells first so the freed cash funds the purchases.
    for (std::size_t i : targets) {
      const double excess = state.shares[i] * prices_today[i] - target_value;
      if (excess > dust) trade(i, -excess / prices_today[i]);
    }
    for (std::size_t i : targets) {
      const double shortfall = target_value - state.shares[i] * prices_today[i];
      if (shortfall <= dust) continue;
      const double affordable = std::max(state.cash, 0.0) / (1.0 + tau);
      const double notional = std::min(shortfall, affordable);
      if (notional > 0.0) trade(i, notional / prices_today[i]);
      state.cash = std::max(state.cash, 0.0);  // a capped buy spends all cash; drop the rounding residue
    }
  }
  state.values.push_back(state.value(prices_next));
  ++state.day;
  return rep;
}

BacktestResult run_backtest(const Tensor& predictions, const Tensor& prices, const StrategyParams& params,
                            double cost_sign) {
  params.validate();
  if (predictions.rank() != 2 || prices.rank() != 2) throw std::invalid_argument("run_backtest expects 2-D inputs");
  const std::size_t days = predictions.dim(0), n = predictions.dim(1);
  if (prices.dim(0) != days + 1 || prices.dim(1) != n) {
    throw std::invalid_argument("run_backtest: prices must be [days + 1, N] for predictions [days, N]");
  }
  BacktestResult out;
  out.state = PortfolioState::initial(n, params.initial_capital);
  for (std::size_t d = 0; d < days; ++d) {
    const auto row = [&](const Tensor& t, std::size_t k) { return t.data().subspan(k * n, n); };
    out.steps.push_back(daily_step(row(predictions, d), row(prices, d), row(prices, d + 1), out.state, params, cost_sign));
  }
  out.metrics = backtest_metrics(out.state.values);
  return out;
}

GridSpec GridSpec::standard() { return GridSpec{steps_of(1, 20), steps_of(1, 19), steps_of(0, 20)}; }

GridResult grid_search(const Tensor& predictions, const Tensor& prices, const GridSpec& grid,
                       const StrategyParams& base) {
  if (grid.p.empty() || grid.q.empty() || grid.r.empty()) throw std::invalid_argument("grid_search: empty grid");
  GridResult best;
  bool have = false;
  for (double p : grid.p) {
    for (double q : grid.q) {
      for (double r : grid.r) {
        StrategyParams s = base;
        s.p = p;
        s.q = q;
        s.r = r;
        const BacktestResult res = run_backtest(predictions, prices, s);
        ++best.evaluated;
        if (!have || better(res.metrics, s, best.metrics, best.best)) {
          best.best = s;
          best.metrics = res.metrics;
          have = true;
        }
      }
    }
  }
  return best;
}

std::string equity_curve_csv(const BacktestResult& result, std::span<const std::string> dates) {
  const auto& v = result.state.values;
  if (dates.size() != v.size()) throw std::invalid_argument("equity_curve_csv: one date per value required");
  std::string out = "date,value,daily_return,drawdown\n";
  for (std::size_t t = 0; t < v.size(); ++t) {
    out += dates[t] + "," + format_number(v[t]) + "," + (t == 0 ? "" : format_number(result.metrics.returns[t - 1])) + "," +
           format_number(result.metrics.drawdown[t]) + "\n";
  }
  return out;
}

std::string trade_log_csv(const BacktestResult& result, std::span<const std::string> dates,
                          std::span<const std::string> tickers) {
  std::string out = "day,date,ticker,side,shares,price,notional,cost\n";
  for (const Trade& t : result.state.trades) {
    out += std::to_string(t.day) + "," + dates[t.day] + "," + tickers[t.stock] + "," + (t.shares > 0 ? "buy" : "sell") +
           "," + format_number(std::abs(t.shares)) + "," + format_number(t.price) + "," + format_number(t.notional) + "," + format_number(t.cost) + "\n";
  }
  return out;
}

}  // namespace magnet
