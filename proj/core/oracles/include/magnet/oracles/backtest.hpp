#pragma once

#include <cstddef>
#include <vector>

namespace magnet::oracles {

struct SimParams {
  double p = 0.5, q = 0.5, r = 0.5;
  double tau = 0.0025;
  double capital = 1'000'000.0;
};

/// Day-by-day simulation of the top-n equal-weight strategy:
/// predictions[day][stock], prices[day][stock] with one more price day than
/// prediction days. Returns the marked-to-market value after every day,
/// preceded by the initial capital.
std::vector<double> simulate_strategy(const std::vector<std::vector<double>>& predictions,
                                      const std::vector<std::vector<double>>& prices, const SimParams& params);

/// Area under the ROC curve by trapezoids over distinct thresholds.
double trapezoid_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Largest peak-to-trough relative decline, as a nonpositive number.
double max_drawdown(const std::vector<double>& values);

}  // namespace magnet::oracles
