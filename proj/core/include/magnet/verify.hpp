#pragma once

// Invariant suite run by `magnet verify` and the acceptance tests. Each check
// compares production code against properties or the independent oracles.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "magnet/autodiff.hpp"
#include "magnet/tch.hpp"

namespace magnet::verify {

/// Fault injection for testing the checks themselves.
struct Hooks {
  /// Replaces the causal mask used by the causality check when set.
  std::function<Tensor(const tch::TimeStockLayout&)> causal_mask;
  /// Multiplies the transaction cost inside the backtest engine (+1 is correct).
  double cost_sign = 1.0;
};

struct Options {
  std::uint64_t seed = 2024;
  Hooks hooks;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double worst = 0.0;    // largest observed error or violation count
  double seconds = 0.0;  // wall time, reporting only
};

struct GradCase {
  std::string name;
  GradCheckReport report;
};

inline constexpr double kGradTolerance = 1e-4;

/// Central-difference gradient checks of every differentiable operation and
/// module, plus the full pipeline at N=2, T=4, F=3, D=8.
std::vector<GradCase> gradient_cases(std::uint64_t seed);

CheckResult check_gradients(const Options& opt);
CheckResult check_causality(const Options& opt);        // 1000 perturbation trials
CheckResult check_stochasticity(const Options& opt);    // incidence columns, weights, JSD bounds
CheckResult check_sparsification(const Options& opt);   // Top-K rows vs full softmax
CheckResult check_moe(const Options& opt);              // one expert per token, capacity sums
CheckResult check_conv_oracles(const Options& opt);     // hypergraph convolutions vs dense oracles
CheckResult check_backtest_oracle(const Options& opt);  // engine vs brute-force simulator
CheckResult check_conservation(const Options& opt);     // value drops by exactly the costs
CheckResult check_metrics(const Options& opt);          // drawdown, ratios, AUC

std::vector<CheckResult> run_suite(const Options& opt = {});

/// One line per check: status, name and detail; optionally with timings.
std::string format_report(const std::vector<CheckResult>& results, bool timings = false);

}  // namespace magnet::verify
