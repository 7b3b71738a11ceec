#include <charconv>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"
#include "magnet/checkpoint.hpp"

namespace {

using namespace magnet;

// Values given on the command line; unset ones keep the file/env values.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir, run_dir, panel;
  std::optional<std::size_t> stocks, days, features, epochs, patience;
  std::optional<double> noise, lr;
  bool no_mage = false, no_f2d = false, no_tch = false, no_s2d = false, no_gph = false;
};

std::uint64_t parse_seed(const std::string& text) {
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("MAGNET_SEED must be an unsigned integer, got '" + text + "'");
  }
  return value;
}

// Precedence: flag > MAGNET_SEED > config file > built-in defaults.
RunConfig resolve(const std::string& config_path, const Overrides& o) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  if (const char* env = std::getenv("MAGNET_SEED")) cfg.set_seed(parse_seed(env));
  if (o.seed) cfg.set_seed(*o.seed);
  if (o.data_dir) cfg.paths.data_dir = *o.data_dir;
  if (o.run_dir) cfg.paths.run_dir = *o.run_dir;
  if (o.panel) cfg.paths.panel = *o.panel;
  if (o.stocks) cfg.data.synth.stocks = cfg.model.stocks = *o.stocks;
  if (o.features) cfg.data.synth.features = cfg.model.features = *o.features;
  if (o.days) cfg.data.synth.days = *o.days;
  if (o.noise) cfg.data.synth.noise = *o.noise;
  if (o.epochs) cfg.train.max_epochs = *o.epochs;
  if (o.patience) cfg.train.patience = *o.patience;
  if (o.lr) cfg.train.learning_rate = *o.lr;
  if (o.no_mage) cfg.model.use_mage = false;
  if (o.no_f2d) cfg.model.use_f2d = false;
  if (o.no_tch) cfg.model.use_tch = false;
  if (o.no_s2d) cfg.model.use_s2d = false;
  if (o.no_gph) cfg.model.use_gph = false;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MaGNet stock-movement model: synthetic data, training, backtesting and verification"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  Overrides o;
  app.add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Seed for all randomness (overrides MAGNET_SEED and the file)");
  app.add_option("--data-dir", o.data_dir, "Directory of the panel CSV and manifest");
  app.add_option("--panel", o.panel, "Panel file stem");
  app.add_option("--run-dir", o.run_dir, "Directory for checkpoints and outputs");
  app.add_option("--stocks", o.stocks, "Number of stocks (data and model)");
  app.add_option("--features", o.features, "Number of features (data and model)");
  app.add_option("--days", o.days, "Synthetic trading days");
  app.add_option("--noise", o.noise, "Synthetic label noise");
  app.add_option("--epochs", o.epochs, "Maximum training epochs");
  app.add_option("--patience", o.patience, "Early-stopping patience in epochs");
  app.add_option("--lr", o.lr, "AdamW learning rate");
  app.add_flag("--no-mage", o.no_mage, "Ablate the temporal MAGE blocks");
  app.add_flag("--no-f2d", o.no_f2d, "Ablate feature-wise 2D attention");
  app.add_flag("--no-tch", o.no_tch, "Ablate the temporal-causal hypergraph");
  app.add_flag("--no-s2d", o.no_s2d, "Ablate stock-wise 2D attention");
  app.add_flag("--no-gph", o.no_gph, "Ablate the global probabilistic hypergraph");

  auto* synth = app.add_subcommand("synth", "Generate the planted synthetic panel");
  auto* train = app.add_subcommand("train", "Train with early stopping; writes a checkpoint and history.csv");
  bool resume = false;
  train->add_flag("--resume", resume, "Continue from the run directory's checkpoint");
  auto* backtest = app.add_subcommand("backtest", "Backtest the trained model on the test split");
  auto* gridsearch = app.add_subcommand("gridsearch", "Select (p, q, r) on validation, report on test");
  auto* verify = app.add_subcommand("verify", "Run the invariant suite");
  bool timings = false, mask_bug = false, cost_bug = false;
  verify->add_flag("--timings", timings, "Print per-check wall time");
  // Fault injection for testing the suite itself.
  verify->add_flag("--inject-mask-bug", mask_bug)->group("");
  verify->add_flag("--inject-cost-sign-bug", cost_bug)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitValidation;
  }

  try {
    if (verify->parsed()) {
      magnet::verify::Options opt;
      if (o.seed) opt.seed = *o.seed;
      if (mask_bug) opt.hooks.causal_mask = [](const tch::TimeStockLayout& l) { return Tensor({l.nodes(), l.nodes()}, 0.0); };
      if (cost_bug) opt.hooks.cost_sign = -1.0;
      return cli::cmd_verify(opt, timings, std::cout);
    }
    const RunConfig cfg = resolve(config_path, o);
    if (synth->parsed()) return cli::cmd_synth(cfg, std::cout);
    if (train->parsed()) return cli::cmd_train(cfg, resume, std::cout);
    if (backtest->parsed()) return cli::cmd_backtest(cfg, std::cout);
    if (gridsearch->parsed()) return cli::cmd_gridsearch(cfg, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "magnet: invalid configuration: " << e.what() << "\n";
    return cli::kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "magnet: error: " << e.what() << "\n";
    return cli::kExitRuntime;
  }
  return cli::kExitRuntime;
}
