#include "commands.hpp"

#include <algorithm>
#include <ostream>

#include "json.hpp"
#include "magnet/backtest.hpp"
#include "magnet/checkpoint.hpp"
#include "magnet/checksum.hpp"
#include "magnet/metrics.hpp"

namespace magnet::cli {

namespace {

namespace fs = std::filesystem;

struct SplitPredictions {
  Tensor predictions;              // [windows, N]
  Tensor prices;                   // [windows + 1, N]
  std::vector<std::string> dates;  // windows + 1 trading dates
  Evaluation eval;
};

PanelSplits load_splits(const RunConfig& cfg) {
  return split_and_normalize(load_panel_manifest(cfg.manifest()), cfg.data.split, cfg.data.pooling);
}

/// Prediction made after the close of day ends[w] trades from closes[ends[w]] to closes[ends[w] + 1].
SplitPredictions predict_split(const ModelConfig& model, const ParamStore& params, const MarketPanel& split) {
  SplitPredictions out;
  out.eval = evaluate(model, params, split);
  const std::size_t w = out.eval.ends.size(), n = split.stocks(), t = split.days();
  out.predictions = Tensor({w, n});
  out.prices = Tensor({w + 1, n});
  for (std::size_t k = 0; k < w; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      out.predictions[k * n + i] = out.eval.prob_up[k * n + i];
      out.prices[k * n + i] = split.closes[i * t + out.eval.ends[k]];
    }
    out.dates.push_back(split.dates[out.eval.ends[k]]);
  }
  const std::size_t last = out.eval.ends.back() + 1;
  for (std::size_t i = 0; i < n; ++i) out.prices[w * n + i] = split.closes[i * t + last];
  out.dates.push_back(split.dates[last]);
  return out;
}

std::string predictions_csv(const SplitPredictions& sp, const MarketPanel& split) {
  std::string csv = "date,ticker,prob_up\n";
  const std::size_t n = split.stocks();
  for (std::size_t k = 0; k < sp.eval.ends.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      csv += sp.dates[k] + "," + split.tickers[i] + "," + format_number(sp.predictions[k * n + i]) + "\n";
    }
  }
  return csv;
}

std::string history_csv(const TrainState& state) {
  std::string csv = "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const EpochRecord& r : state.history) {
    csv += std::to_string(r.epoch) + "," + format_number(r.train_loss) + "," + format_number(r.train_accuracy) + "," +
           format_number(r.val_loss) + "," + format_number(r.val_accuracy) + "\n";
  }
  return csv;
}

nlohmann::ordered_json strategy_json(const StrategyParams& p) {
  return {{"p", p.p}, {"q", p.q}, {"r", p.r}, {"tau", p.tau}, {"initial_capital", p.initial_capital}};
}

TrainState load_trained(const RunConfig& cfg) {
  TrainState state = resume_checkpoint(cfg.checkpoint(), cfg.model, cfg.train);
  if (state.history.empty()) throw CheckpointError("checkpoint holds no completed epoch");
  return state;
}

}  // namespace

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  if (cfg.data.synth.days < cfg.model.steps + 2) {
    throw ConfigError("data.days must be at least model.steps + 2 (" + std::to_string(cfg.model.steps + 2) + ")");
  }
  const SynthPanel synth = synth_panel(cfg.data.synth);
  const fs::path manifest =
      save_panel(synth.panel, cfg.paths.data_dir, cfg.paths.panel, synth_metadata_json(cfg.data.synth, synth));
  out << "wrote " << manifest.string() << " (" << synth.panel.stocks() << " stocks, " << synth.panel.days()
      << " days, planted-rule accuracy " << format_number(synth.rule_accuracy) << ")\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, bool resume, std::ostream& out) {
  const PanelSplits splits = load_splits(cfg);
  const fs::path ckpt = cfg.checkpoint();
  fs::create_directories(ckpt.parent_path());
  TrainState state = resume ? resume_checkpoint(ckpt, cfg.model, cfg.train) : initial_state(cfg.model, cfg.train);
  if (resume) out << "resuming after epoch " << state.history.size() << "\n";

  const fs::path history = fs::path(cfg.paths.run_dir) / "history.csv";
  train(state, splits.train, splits.val, [&](const TrainState& s) {
    const EpochRecord& r = s.history.back();
    out << "epoch " << r.epoch << " train_loss " << format_number(r.train_loss) << " train_acc "
        << format_number(r.train_accuracy) << " val_loss " << format_number(r.val_loss) << " val_acc "
        << format_number(r.val_accuracy) << "\n";
    save_checkpoint(s, ckpt);
    write_file(history, history_csv(s));
  });
  if (state.history.empty()) throw TrainingError("no epoch was run");
  write_file(history, history_csv(state));
  out << "best epoch " << state.best_epoch << " val_acc " << format_number(state.best_val_accuracy) << "\n";
  return kExitOk;
}

int cmd_backtest(const RunConfig& cfg, std::ostream& out) {
  const TrainState state = load_trained(cfg);
  const PanelSplits splits = load_splits(cfg);
  const SplitPredictions sp = predict_split(state.model, state.best_params, splits.test);
  const BacktestResult bt = run_backtest(sp.predictions, sp.prices, cfg.strategy);
  const ClassificationMetrics cls = classification_metrics(sp.eval.prob_up, sp.eval.labels);

  const fs::path dir = cfg.paths.run_dir;
  write_file(dir / "predictions.csv", predictions_csv(sp, splits.test));
  write_file(dir / "metrics.json", metrics_json(cls, bt.metrics));
  write_file(dir / "equity.csv", equity_curve_csv(bt, sp.dates));
  write_file(dir / "trades.csv", trade_log_csv(bt, sp.dates, splits.test.tickers));
  out << metrics_json(cls, bt.metrics);
  return kExitOk;
}

int cmd_gridsearch(const RunConfig& cfg, std::ostream& out) {
  const TrainState state = load_trained(cfg);
  const PanelSplits splits = load_splits(cfg);
  const SplitPredictions val = predict_split(state.model, state.best_params, splits.val);
  const GridResult grid = grid_search(val.predictions, val.prices, GridSpec::standard(), cfg.strategy);

  const SplitPredictions test = predict_split(state.model, state.best_params, splits.test);
  const BacktestResult bt = run_backtest(test.predictions, test.prices, grid.best);
  const ClassificationMetrics cls = classification_metrics(test.eval.prob_up, test.eval.labels);

  nlohmann::ordered_json j;
  j["best"] = strategy_json(grid.best);
  j["evaluated"] = grid.evaluated;
  j["validation"] = nlohmann::ordered_json::parse(metrics_json(classification_metrics(val.eval.prob_up, val.eval.labels),
                                                               grid.metrics));
  j["test"] = nlohmann::ordered_json::parse(metrics_json(cls, bt.metrics));
  const std::string text = j.dump(2) + "\n";
  write_file(fs::path(cfg.paths.run_dir) / "gridsearch.json", text);
  out << text;
  return kExitOk;
}

int cmd_verify(const verify::Options& opt, bool timings, std::ostream& out) {
  const std::vector<verify::CheckResult> results = verify::run_suite(opt);
  out << verify::format_report(results, timings);
  const bool ok = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
  out << (ok ? "all checks passed\n" : "verification FAILED\n");
  return ok ? kExitOk : kExitValidation;
}

}  // namespace magnet::cli
