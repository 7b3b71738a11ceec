#include "magnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace magnet {

namespace {

// Population standard deviation below this is treated as zero volatility.
constexpr double kZeroVolatility = 1e-15;

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::optional<double> rank_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty()) throw std::invalid_argument("rank_auc: bad input sizes");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mid-ranks (1-based) over tie groups.
  double rank_sum_pos = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum_pos += mid;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives);
  const double u = rank_sum_pos - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

ClassificationMetrics classification_metrics(std::span<const double> probs, std::span<const int> labels) {
  if (probs.empty() || probs.size() != labels.size()) {
    throw std::invalid_argument("classification_metrics: empty or mismatched input");
  }
  ClassificationMetrics m;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw std::invalid_argument("probabilities must lie in [0, 1]");
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("labels must be 0 or 1");
    const bool pred = probs[i] > 0.5;
    if (pred && labels[i]) ++m.tp;
    else if (pred) ++m.fp;
    else if (labels[i]) ++m.fn;
    else ++m.tn;
  }
  m.accuracy = ratio(m.tp + m.tn, probs.size());
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  const auto auc = rank_auc(probs, labels);
  m.auc_degenerate = !auc.has_value();
  m.auc = auc.value_or(0.5);
  return m;
}

BacktestMetrics backtest_metrics(std::span<const double> values, double risk_free, double periods_per_year) {
  if (values.size() < 2) throw std::invalid_argument("backtest_metrics needs at least 2 values");
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("portfolio values must be positive and finite");
  }
  BacktestMetrics m;
  const std::size_t t = values.size() - 1;
  double growth = 1.0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double r = values[i] / values[i - 1] - 1.0;
    m.returns.push_back(r);
    growth *= 1.0 + r;
  }
  m.ar = std::pow(growth, periods_per_year / static_cast<double>(t)) - 1.0;

  double mean = 0.0;
  for (double r : m.returns) mean += r;
  mean /= static_cast<double>(t);
  double var = 0.0;
  for (double r : m.returns) var += (r - mean) * (r - mean);
  const double daily_sd = std::sqrt(var / static_cast<double>(t));
  m.volatility = daily_sd * std::sqrt(periods_per_year);
  if (daily_sd > kZeroVolatility) m.sr = (m.ar - risk_free) / m.volatility;

  double peak = values[0];
  for (double v : values) {
    peak = std::max(peak, v);
    const double dd = (v - peak) / peak;
    m.drawdown.push_back(dd);
    m.mdd = std::min(m.mdd, dd);
  }
  if (m.mdd < 0.0) m.cr = m.ar / std::abs(m.mdd);
  return m;
}

std::string metrics_json(const ClassificationMetrics& cls, const BacktestMetrics& bt) {
  nlohmann::ordered_json j;
  j["AR"] = bt.ar;
  j["SR"] = bt.sr ? nlohmann::ordered_json(*bt.sr) : nlohmann::ordered_json(nullptr);
  j["CR"] = bt.cr ? nlohmann::ordered_json(*bt.cr) : nlohmann::ordered_json(nullptr);
  j["MDD"] = bt.mdd;
  j["ACC"] = cls.accuracy;
  j["PRE"] = cls.precision;
  j["REC"] = cls.recall;
  j["F1"] = cls.f1;
  j["AUC"] = cls.auc;
  j["SR_defined"] = bt.sr.has_value();
  j["CR_defined"] = bt.cr.has_value();
  j["AUC_degenerate"] = cls.auc_degenerate;
  return j.dump(2) + "\n";
}

}  // namespace magnet
