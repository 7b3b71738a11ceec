#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "magnet/tensor.hpp"

namespace magnet {

class PanelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense stock x day x feature panel with raw closes kept for labels and backtests.
struct MarketPanel {
  std::vector<std::string> tickers;        // N, lexicographic
  std::vector<std::string> dates;          // T_total, ISO-8601, strictly increasing
  std::vector<std::string> feature_names;  // F
  Tensor features;                         // [N, T_total, F]
  Tensor closes;                           // [N, T_total], strictly positive

  std::size_t stocks() const { return tickers.size(); }
  std::size_t days() const { return dates.size(); }
  std::size_t feature_count() const { return feature_names.size(); }

  /// Throws PanelError on any broken invariant.
  void validate() const;

  /// Sub-panel of days [begin, end).
  MarketPanel slice_days(std::size_t begin, std::size_t end) const;
};

enum class MissingPolicy {
  kIntersect,    // keep only dates every ticker has
  kForwardFill,  // fill gaps from the ticker's previous day
};

struct LoadOptions {
  /// Columns to use as features, in order. Empty means every numeric column.
  std::vector<std::string> feature_columns;
  MissingPolicy missing = MissingPolicy::kIntersect;
};

/// Reads a long-format CSV: date,ticker,open,high,low,close,volume[,extra...].
MarketPanel load_panel(const std::filesystem::path& csv, const LoadOptions& options = {});

struct PanelManifest {
  std::string csv_file;  // relative to the manifest
  std::size_t stocks = 0;
  std::size_t days = 0;
  std::vector<std::string> feature_names;
  std::vector<std::string> tickers;
  std::string checksum;    // "fnv1a64:<16 hex digits>" of the CSV bytes
  std::string extra_json;  // generator metadata, serialized JSON object or empty
};

/// Writes <stem>.csv and <stem>.manifest.json into `dir`; returns the manifest path.
std::filesystem::path save_panel(const MarketPanel& panel, const std::filesystem::path& dir,
                                 const std::string& stem = "panel", const std::string& extra_json = {});

PanelManifest read_manifest(const std::filesystem::path& manifest);

/// Loads the panel a manifest describes after verifying the CSV checksum.
MarketPanel load_panel_manifest(const std::filesystem::path& manifest);

/// y[i, t] = 1 iff close[i, t+1] > close[i, t]; shape [N, T_total - 1].
Tensor make_labels(const Tensor& closes);

struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;

  void validate() const;
};

struct SplitBounds {
  std::size_t train_end = 0;  // [0, train_end)
  std::size_t val_end = 0;    // [train_end, val_end)
  std::size_t total = 0;      // [val_end, total)
};

/// Validation and test take floor(fraction * days); the remainder goes to training.
SplitBounds split_bounds(std::size_t days, const SplitSpec& spec);

enum class NormalizationPooling {
  kFeature,       // statistics per feature over all stocks and days of the split
  kStockFeature,  // statistics per (stock, feature) over the days of the split
};

struct PanelSplits {
  MarketPanel train, val, test;
};

/// Chronological split; each split z-scored with its own statistics (std floored
/// at 1e-8). Raw closes are carried unchanged.
PanelSplits split_and_normalize(const MarketPanel& panel, const SplitSpec& spec,
                                NormalizationPooling pooling = NormalizationPooling::kFeature);

/// Z-scores one panel in isolation.
MarketPanel normalize_panel(const MarketPanel& panel, NormalizationPooling pooling);

// Sliding windows ----------------------------------------------------------

/// Last days of every full window that still has a next-day label: [lookback-1, days-2].
std::vector<std::size_t> window_ends(const MarketPanel& panel, std::size_t lookback);

/// Features of days (end - lookback, end]: [N, lookback, F].
Tensor window_features(const MarketPanel& panel, std::size_t end, std::size_t lookback);

/// Direction of close[end+1] vs close[end] per stock.
std::vector<int> next_day_labels(const MarketPanel& panel, std::size_t end);

// Synthetic planted-rule generator ------------------------------------------

struct SynthSpec {
  std::size_t stocks = 8;
  std::size_t days = 400;
  std::size_t features = 5;
  std::uint64_t seed = 7;
  double noise = 0.05;  // std of the Gaussian added to the planted score
  double move = 0.01;   // daily relative price move
};

struct SynthPanel {
  MarketPanel panel;
  std::vector<double> weights;  // planted unit-norm linear functional
  double threshold = 0.0;       // median planted score
  double rule_accuracy = 0.0;   // agreement of the noiseless rule with the labels
  double up_fraction = 0.0;
};

/// Features are iid standard normal; the next-day direction of each stock is
/// [w . x_t + noise > threshold]; closes move by a factor (1 +- move).
SynthPanel synth_panel(const SynthSpec& spec);

/// Metadata JSON describing a synthetic panel's generator (for manifests).
std::string synth_metadata_json(const SynthSpec& spec, const SynthPanel& panel);

}  // namespace magnet
