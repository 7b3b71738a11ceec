#include "magnet/run_config.hpp"

#include "json.hpp"
#include "json_fields.hpp"
#include "magnet/checksum.hpp"

namespace magnet {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

const char* pooling_name(NormalizationPooling p) {
  return p == NormalizationPooling::kFeature ? "feature" : "stock_feature";
}

void reject_nested_seed(const json* section, const char* name) {
  if (section && section->is_object() && section->contains("seed")) {
    throw ConfigError(std::string(name) + ".seed is not allowed; set the top-level seed");
  }
}

}  // namespace

void RunConfig::set_seed(std::uint64_t value) {
  seed = value;
  data.synth.seed = value;
  model.seed = value;
  train.seed = value;
}

void RunConfig::validate() const {
  data.split.validate();
  if (data.synth.stocks == 0 || data.synth.days < 2 || data.synth.features == 0) {
    throw ConfigError("data: stocks, days and features must be positive (days >= 2)");
  }
  if (!(data.synth.noise >= 0.0) || !(data.synth.move > 0.0 && data.synth.move < 1.0)) {
    throw ConfigError("data: noise must be >= 0 and move in (0, 1)");
  }
  model.validate();
  if (model.stocks != data.synth.stocks || model.features != data.synth.features) {
    throw ConfigError("model.stocks and model.features must match data.stocks and data.features");
  }
  train.validate();
  try {
    strategy.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (paths.data_dir.empty() || paths.panel.empty() || paths.run_dir.empty()) throw ConfigError("paths must be nonempty");
}

std::filesystem::path RunConfig::manifest() const {
  return std::filesystem::path(paths.data_dir) / (paths.panel + ".manifest.json");
}

std::filesystem::path RunConfig::checkpoint() const { return std::filesystem::path(paths.run_dir) / "model.ckpt"; }

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  detail::ObjectReader root(j, "config");
  root.read("seed", c.seed);

  if (const json* p = root.child("paths")) {
    detail::ObjectReader r(*p, "paths");
    r.read("data_dir", c.paths.data_dir);
    r.read("panel", c.paths.panel);
    r.read("run_dir", c.paths.run_dir);
    r.finish();
  }
  if (const json* d = root.child("data")) {
    reject_nested_seed(d, "data");
    detail::ObjectReader r(*d, "data");
    r.read("stocks", c.data.synth.stocks);
    r.read("days", c.data.synth.days);
    r.read("features", c.data.synth.features);
    r.read("noise", c.data.synth.noise);
    r.read("move", c.data.synth.move);
    std::string pooling = pooling_name(c.data.pooling);
    r.read("normalization", pooling);
    if (pooling == "feature") {
      c.data.pooling = NormalizationPooling::kFeature;
    } else if (pooling == "stock_feature") {
      c.data.pooling = NormalizationPooling::kStockFeature;
    } else {
      throw ConfigError("data.normalization must be \"feature\" or \"stock_feature\"");
    }
    if (const json* s = r.child("split")) {
      detail::ObjectReader sr(*s, "data.split");
      sr.read("train", c.data.split.train);
      sr.read("val", c.data.split.val);
      sr.read("test", c.data.split.test);
      sr.finish();
    }
    r.finish();
  }
  if (const json* m = root.child("model")) {
    reject_nested_seed(m, "model");
    c.model = model_config_from_json(m->dump());
  }
  if (const json* t = root.child("train")) {
    reject_nested_seed(t, "train");
    c.train = train_config_from_json(t->dump());
  }
  if (const json* s = root.child("strategy")) {
    detail::ObjectReader r(*s, "strategy");
    r.read("p", c.strategy.p);
    r.read("q", c.strategy.q);
    r.read("r", c.strategy.r);
    r.read("tau", c.strategy.tau);
    r.read("initial_capital", c.strategy.initial_capital);
    r.finish();
  }
  root.finish();
  c.set_seed(c.seed);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(text);
}

std::string to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["paths"] = {{"data_dir", c.paths.data_dir}, {"panel", c.paths.panel}, {"run_dir", c.paths.run_dir}};
  ordered_json data;
  data["stocks"] = c.data.synth.stocks;
  data["days"] = c.data.synth.days;
  data["features"] = c.data.synth.features;
  data["noise"] = c.data.synth.noise;
  data["move"] = c.data.synth.move;
  data["normalization"] = pooling_name(c.data.pooling);
  data["split"] = {{"train", c.data.split.train}, {"val", c.data.split.val}, {"test", c.data.split.test}};
  j["data"] = data;
  ordered_json model = ordered_json::parse(to_json(c.model));
  model.erase("seed");
  j["model"] = model;
  ordered_json train = ordered_json::parse(to_json(c.train));
  train.erase("seed");
  j["train"] = train;
  j["strategy"] = {{"p", c.strategy.p},
                   {"q", c.strategy.q},
                   {"r", c.strategy.r},
                   {"tau", c.strategy.tau},
                   {"initial_capital", c.strategy.initial_capital}};
  return j.dump(2) + "\n";
}

}  // namespace magnet
