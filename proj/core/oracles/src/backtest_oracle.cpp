#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "magnet/oracles/backtest.hpp"

namespace magnet::oracles {

std::vector<double> simulate_strategy(const std::vector<std::vector<double>>& predictions,
                                      const std::vector<std::vector<double>>& prices, const SimParams& sp) {
  if (prices.size() != predictions.size() + 1) throw std::invalid_argument("simulate_strategy: need days + 1 prices");
  const double eps = 1e-9;
  const std::size_t n = prices.at(0).size();
  double cash = sp.capital;
  std::vector<double> held(n, 0.0);
  std::vector<double> values{sp.capital};
  auto worth = [&](const std::vector<double>& px) {
    double total = cash;
    for (std::size_t s = 0; s < n; ++s) total += held[s] * px[s];
    return total;
  };

  for (std::size_t day = 0; day < predictions.size(); ++day) {
    const auto& prob = predictions[day];
    const auto& px = prices[day];
    std::size_t rising = 0;
    for (double x : prob) rising += x > 0.5 ? 1 : 0;
    const double portfolio_size = sp.p * static_cast<double>(n);
    std::size_t hold = 0;
    if (static_cast<double>(rising) >= portfolio_size - eps) {
      hold = static_cast<std::size_t>(portfolio_size + eps);
    } else if (static_cast<double>(rising) >= portfolio_size * sp.q - eps) {
      hold = static_cast<std::size_t>(sp.r * static_cast<double>(rising) + eps);
    }

    std::vector<std::size_t> ranked(n);
    std::iota(ranked.begin(), ranked.end(), 0);
    std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
      return prob[a] != prob[b] ? prob[a] > prob[b] : a < b;
    });
    ranked.resize(hold);
    const double dust = 1e-6 * worth(px);

    for (std::size_t s = 0; s < n; ++s) {
      if (std::find(ranked.begin(), ranked.end(), s) != ranked.end() || held[s] == 0.0) continue;
      cash += held[s] * px[s] * (1.0 - sp.tau);
      held[s] = 0.0;
    }
    if (hold > 0) {
      double invested = cash;
      for (std::size_t s : ranked) invested += held[s] * px[s];
      const double each = invested / static_cast<double>(hold);
      for (std::size_t s : ranked) {
        const double over = held[s] * px[s] - each;
        if (over > dust) {
          cash += over * (1.0 - sp.tau);
          held[s] -= over / px[s];
        }
      }
      for (std::size_t s : ranked) {
        const double under = each - held[s] * px[s];
        if (under <= dust) continue;
        const double spend = std::min(under, std::max(cash, 0.0) / (1.0 + sp.tau));
        if (spend <= 0.0) continue;
        cash -= spend * (1.0 + sp.tau);
        held[s] += spend / px[s];
      }
    }
    values.push_back(worth(prices[day + 1]));
  }
  return values;
}

double trapezoid_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double pos = 0.0, neg = 0.0;
  for (int y : labels) (y ? pos : neg) += 1.0;
  if (pos == 0.0 || neg == 0.0) throw std::invalid_argument("trapezoid_auc: single-class labels");
  double tp = 0.0, fp = 0.0, prev_tpr = 0.0, prev_fpr = 0.0, area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp) += 1.0;
      ++j;
    }
    const double tpr = tp / pos, fpr = fp / neg;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_tpr = tpr;
    prev_fpr = fpr;
    i = j;
  }
  return area;
}

double max_drawdown(const std::vector<double>& values) {
  double worst = 0.0;
  for (std::size_t j = 0; j < values.size(); ++j) {
    double peak = values[0];
    for (std::size_t k = 0; k <= j; ++k) peak = std::max(peak, values[k]);
    worst = std::min(worst, (values[j] - peak) / peak);
  }
  return worst;
}

}  // namespace magnet::oracles
