#include "magnet/model.hpp"

#include "json.hpp"
#include "json_fields.hpp"

namespace magnet {

namespace {

using nlohmann::ordered_json;

std::string indexed(const char* stage, std::size_t i) { return stage + std::to_string(i); }

const char* gate_mode_name(mage::GateMode mode) {
  return mode == mage::GateMode::kLiteral ? "literal" : "convex";
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("model config: ") + what);
  };
  require(stocks >= 1 && steps >= 1 && features >= 1, "N, T and F must be positive");
  require(d_model >= 1, "D must be positive");
  require(heads >= 1 && d_model % heads == 0, "D must be divisible by the head count");
  require(experts >= 1 && moe_hidden >= 1 && ssm_state >= 1, "experts, MoE width and SSM state must be positive");
  require(channels >= 1 && fusion_hidden >= 1 && gph_ffn_hidden >= 1, "2D attention and GPH widths must be positive");
  require(tch_hyperedges >= 1 && gph_hyperedges >= 1, "M1 and M2 must be at least 1");
  require(top_k >= 1 && top_k <= steps * stocks, "K must lie in [1, T*N]");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
}

mage::MageConfig ModelConfig::mage() const {
  mage::MageConfig m;
  m.d_model = d_model;
  m.heads = heads;
  m.ssm.d_model = d_model;
  m.ssm.state = ssm_state;
  m.moe.d_model = d_model;
  m.moe.experts = experts;
  m.moe.hidden = moe_hidden;
  m.moe.scale_output = moe_scale_output;
  m.gate_mode = gate_mode;
  return m;
}

attn2d::Attn2DConfig ModelConfig::attn2d() const {
  attn2d::Attn2DConfig a;
  a.channels = channels;
  a.fusion_hidden = fusion_hidden;
  return a;
}

tch::TchConfig ModelConfig::tch() const {
  tch::TchConfig t;
  t.heads = heads;
  t.hyperedges = tch_hyperedges;
  t.top_k = top_k;
  return t;
}

gph::GphConfig ModelConfig::gph() const { return gph::GphConfig{gph_hyperedges, gph_ffn_hidden}; }

std::string to_json(const ModelConfig& c) {
  ordered_json j;
  j["stocks"] = c.stocks;
  j["steps"] = c.steps;
  j["features"] = c.features;
  j["d_model"] = c.d_model;
  j["experts"] = c.experts;
  j["heads"] = c.heads;
  j["channels"] = c.channels;
  j["mage_layers"] = c.mage_layers;
  j["f2d_layers"] = c.f2d_layers;
  j["tch_layers"] = c.tch_layers;
  j["s2d_layers"] = c.s2d_layers;
  j["gph_layers"] = c.gph_layers;
  j["tch_hyperedges"] = c.tch_hyperedges;
  j["top_k"] = c.top_k;
  j["gph_hyperedges"] = c.gph_hyperedges;
  j["ssm_state"] = c.ssm_state;
  j["moe_hidden"] = c.moe_hidden;
  j["fusion_hidden"] = c.fusion_hidden;
  j["gph_ffn_hidden"] = c.gph_ffn_hidden;
  j["dropout"] = c.dropout;
  j["use_mage"] = c.use_mage;
  j["use_f2d"] = c.use_f2d;
  j["use_tch"] = c.use_tch;
  j["use_s2d"] = c.use_s2d;
  j["use_gph"] = c.use_gph;
  j["gate_mode"] = gate_mode_name(c.gate_mode);
  j["moe_scale_output"] = c.moe_scale_output;
  j["seed"] = c.seed;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  ModelConfig c;
  detail::ObjectReader r(j, "model");
  r.read("stocks", c.stocks);
  r.read("steps", c.steps);
  r.read("features", c.features);
  r.read("d_model", c.d_model);
  r.read("experts", c.experts);
  r.read("heads", c.heads);
  r.read("channels", c.channels);
  r.read("mage_layers", c.mage_layers);
  r.read("f2d_layers", c.f2d_layers);
  r.read("tch_layers", c.tch_layers);
  r.read("s2d_layers", c.s2d_layers);
  r.read("gph_layers", c.gph_layers);
  r.read("tch_hyperedges", c.tch_hyperedges);
  r.read("top_k", c.top_k);
  r.read("gph_hyperedges", c.gph_hyperedges);
  r.read("ssm_state", c.ssm_state);
  r.read("moe_hidden", c.moe_hidden);
  r.read("fusion_hidden", c.fusion_hidden);
  r.read("gph_ffn_hidden", c.gph_ffn_hidden);
  r.read("dropout", c.dropout);
  r.read("use_mage", c.use_mage);
  r.read("use_f2d", c.use_f2d);
  r.read("use_tch", c.use_tch);
  r.read("use_s2d", c.use_s2d);
  r.read("use_gph", c.use_gph);
  std::string gate = gate_mode_name(c.gate_mode);
  r.read("gate_mode", gate);
  if (gate == "literal") {
    c.gate_mode = mage::GateMode::kLiteral;
  } else if (gate == "convex") {
    c.gate_mode = mage::GateMode::kConvex;
  } else {
    throw ConfigError("model.gate_mode must be \"literal\" or \"convex\"");
  }
  r.read("moe_scale_output", c.moe_scale_output);
  r.read("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

ParamStore init_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ParamStore store;
  const std::size_t n = cfg.stocks, t = cfg.steps, d = cfg.d_model;
  init_linear(store, "embed", cfg.features, d, rng);
  if (cfg.use_mage) {
    for (std::size_t i = 0; i < cfg.mage_layers; ++i) mage::init_block(store, indexed("mage", i), cfg.mage(), rng);
  }
  if (cfg.use_f2d) {
    for (std::size_t i = 0; i < cfg.f2d_layers; ++i) {
      attn2d::init_featurewise(store, indexed("f2d", i), n, t, d, cfg.attn2d(), rng);
      init_layer_norm(store, indexed("norm_f2d", i), d);
    }
  }
  if (cfg.use_tch) {
    for (std::size_t i = 0; i < cfg.tch_layers; ++i) {
      tch::init_layer(store, indexed("tch", i), tch::TimeStockLayout{n, t}, d, cfg.tch(), rng);
      init_layer_norm(store, indexed("norm_tch", i), d);
    }
  }
  if (cfg.use_s2d) {
    for (std::size_t i = 0; i < cfg.s2d_layers; ++i) {
      attn2d::init_stockwise(store, indexed("s2d", i), n, t, d, cfg.attn2d(), rng);
      init_layer_norm(store, indexed("norm_s2d", i), d);
    }
  }
  if (cfg.use_gph) {
    for (std::size_t i = 0; i < cfg.gph_layers; ++i) {
      gph::init_layer(store, indexed("gph", i), t, d, cfg.gph(), rng);
      init_layer_norm(store, indexed("norm_gph", i), d);
    }
  }
  init_linear(store, "head.hidden", t * d, d, rng);
  init_linear(store, "head.out", d, 2, rng);
  return store;
}

Var embed(Var x, const ParamScope& scope) {
  if (x.shape().size() != 3) throw ShapeError("embed expects [N, T, F], got " + shape_str(x.shape()));
  return gelu(linear(x, scope));
}

Var forward(Var x, const ParamScope& params, const ModelConfig& cfg, const ForwardContext& ctx) {
  const Shape expected{cfg.stocks, cfg.steps, cfg.features};
  if (x.shape() != expected) {
    throw ShapeError("forward expects " + shape_str(expected) + ", got " + shape_str(x.shape()));
  }
  Var z = embed(x, params.scope("embed"));
  if (cfg.use_mage) {
    for (std::size_t i = 0; i < cfg.mage_layers; ++i) z = mage::mage_block(z, params.scope(indexed("mage", i)), cfg.mage(), ctx);
  }
  if (cfg.use_f2d) {
    for (std::size_t i = 0; i < cfg.f2d_layers; ++i) {
      Var out = attn2d::featurewise_2d(z, params.scope(indexed("f2d", i)), cfg.attn2d()).output;
      z = residual_norm(z, out, params.scope(indexed("norm_f2d", i)), ctx);
    }
  }
  if (cfg.use_tch) {
    for (std::size_t i = 0; i < cfg.tch_layers; ++i) {
      Var out = tch::tch_layer(z, params.scope(indexed("tch", i)), cfg.tch()).output;
      z = residual_norm(z, out, params.scope(indexed("norm_tch", i)), ctx);
    }
  }
  if (cfg.use_s2d) {
    for (std::size_t i = 0; i < cfg.s2d_layers; ++i) {
      Var out = attn2d::stockwise_2d(z, params.scope(indexed("s2d", i)), cfg.attn2d()).output;
      z = residual_norm(z, out, params.scope(indexed("norm_s2d", i)), ctx);
    }
  }
  if (cfg.use_gph) {
    for (std::size_t i = 0; i < cfg.gph_layers; ++i) {
      Var out = gph::gph_layer(z, params.scope(indexed("gph", i))).output;
      z = residual_norm(z, out, params.scope(indexed("norm_gph", i)), ctx);
    }
  }
  Var flat = reshape(z, {cfg.stocks, cfg.steps * cfg.d_model});
  Var hidden = gelu(linear(flat, params.scope("head.hidden")));
  return softmax_last(linear(hidden, params.scope("head.out")));
}

Var loss(Var probs, std::span<const int> labels) {
  if (probs.shape().size() != 2 || probs.dim(1) != 2) throw ShapeError("loss expects probabilities [N, 2]");
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("labels must be 0 or 1");
  }
  return nll_loss(probs, labels, 1e-12);
}

Tensor predict(const ModelConfig& cfg, const ParamStore& params, const Tensor& x) {
  Tape tape;
  tape.set_training(false);
  tape.set_grad_enabled(false);
  const BoundParams bound(tape, params, false);
  return forward(tape.constant(x), ParamScope(bound), cfg, ForwardContext{}).value();
}

}  // namespace magnet
