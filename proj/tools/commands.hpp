#pragma once

// Subcommand implementations behind the `magnet` binary. Each returns the
// process exit code; exceptions are mapped to codes by the caller.

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "magnet/run_config.hpp"
#include "magnet/verify.hpp"

namespace magnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Writes the panel CSV and manifest under paths.data_dir.
int cmd_synth(const RunConfig& cfg, std::ostream& out);

/// Trains on the train split with early stopping on the validation split.
/// Writes model.ckpt (+ manifest) after every epoch and history.csv.
int cmd_train(const RunConfig& cfg, bool resume, std::ostream& out);

/// Runs the best checkpoint over the test windows and writes predictions.csv,
/// metrics.json, equity.csv and trades.csv.
int cmd_backtest(const RunConfig& cfg, std::ostream& out);

/// Searches (p, q, r) on validation predictions, then backtests the test
/// windows with the winner; writes gridsearch.json.
int cmd_gridsearch(const RunConfig& cfg, std::ostream& out);

int cmd_verify(const verify::Options& opt, bool timings, std::ostream& out);

}  // namespace magnet::cli
