#include "magnet/train.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "json.hpp"
#include "json_fields.hpp"

namespace magnet {

namespace {

// Stream selectors so window order and dropout masks never share draws.
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kDropoutStream = 0x44524f50ULL;

std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t stream, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(epoch)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

void require_windows(const MarketPanel& panel, const ModelConfig& cfg, const char* which) {
  if (panel.stocks() != cfg.stocks || panel.feature_count() != cfg.features) {
    throw TrainingError(std::string(which) + " split has a different stock or feature count than the model");
  }
  if (window_ends(panel, cfg.steps).empty()) {
    throw TrainingError(std::string(which) + " split has no complete window of " + std::to_string(cfg.steps) +
                        " days plus a next-day label");
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("train config: ") + what);
  };
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  require(epsilon > 0.0, "epsilon must be positive");
  require(weight_decay >= 0.0, "weight decay must be nonnegative");
  require(max_epochs >= 1, "max_epochs must be at least 1");
  require(patience >= 1, "patience must be at least 1");
}

std::string to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["weight_decay"] = c.weight_decay;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["shuffle"] = c.shuffle;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  TrainConfig c;
  detail::ObjectReader r(j, "train");
  r.read("learning_rate", c.learning_rate);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("epsilon", c.epsilon);
  r.read("weight_decay", c.weight_decay);
  r.read("max_epochs", c.max_epochs);
  r.read("patience", c.patience);
  r.read("seed", c.seed);
  r.read("shuffle", c.shuffle);
  r.finish();
  c.validate();
  return c;
}

AdamW::AdamW(const TrainConfig& cfg, const ParamStore& params)
    : lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.epsilon), wd_(cfg.weight_decay) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.add(params.names()[i], Tensor(params.tensors()[i].shape(), 0.0));
    v_.add(params.names()[i], Tensor(params.tensors()[i].shape(), 0.0));
  }
}

void AdamW::restore(std::uint64_t steps, ParamStore m, ParamStore v) {
  if (m.names() != m_.names() || v.names() != v_.names()) throw std::invalid_argument("optimizer state mismatch");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.tensors()[i].shape() != m_.tensors()[i].shape() || v.tensors()[i].shape() != v_.tensors()[i].shape()) {
      throw std::invalid_argument("optimizer state shape mismatch for " + m.names()[i]);
    }
  }
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

void AdamW::step(ParamStore& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size()) throw std::invalid_argument("AdamW: gradient count mismatch");
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params.tensors()[i];
    const Tensor& g = grads[i];
    if (g.shape() != w.shape()) throw std::invalid_argument("AdamW: gradient shape mismatch for " + params.names()[i]);
    Tensor& m = m_.tensors()[i];
    Tensor& v = v_.tensors()[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double m_hat = m[k] / c1, v_hat = v[k] / c2;
      w[k] -= lr_ * (m_hat / (std::sqrt(v_hat) + eps_) + wd_ * w[k]);
    }
  }
}

Evaluation evaluate(const ModelConfig& cfg, const ParamStore& params, const MarketPanel& panel) {
  require_windows(panel, cfg, "evaluation");
  Evaluation out;
  out.ends = window_ends(panel, cfg.steps);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t end : out.ends) {
    const Tensor probs = predict(cfg, params, window_features(panel, end, cfg.steps));
    const std::vector<int> y = next_day_labels(panel, end);
    for (std::size_t i = 0; i < cfg.stocks; ++i) {
      const double up = probs[i * 2 + 1];
      out.prob_up.push_back(up);
      out.labels.push_back(y[i]);
      loss_sum -= std::log(std::max(y[i] ? up : probs[i * 2], 1e-12));
      correct += (up > 0.5 ? 1 : 0) == y[i];
    }
  }
  const double count = static_cast<double>(out.labels.size());
  out.loss = loss_sum / count;
  out.accuracy = static_cast<double>(correct) / count;
  return out;
}

TrainState initial_state(const ModelConfig& model, const TrainConfig& train) {
  model.validate();
  train.validate();
  TrainState s;
  s.model = model;
  s.train = train;
  s.params = init_model(model);
  s.best_params = s.params;
  const AdamW fresh(train, s.params);
  s.adam_m = fresh.first_moment();
  s.adam_v = fresh.second_moment();
  return s;
}

void train(TrainState& state, const MarketPanel& train_split, const MarketPanel& val_split,
           const EpochCallback& on_epoch) {
  const ModelConfig& cfg = state.model;
  const TrainConfig& tc = state.train;
  cfg.validate();
  tc.validate();
  require_windows(train_split, cfg, "training");
  require_windows(val_split, cfg, "validation");

  AdamW opt(tc, state.params);
  opt.restore(state.optimizer_steps, state.adam_m, state.adam_v);
  const std::vector<std::size_t> ends = window_ends(train_split, cfg.steps);

  while (!state.finished) {
    const std::size_t epoch = state.history.size() + 1;
    std::vector<std::size_t> order = ends;
    if (tc.shuffle) {
      Rng rng(epoch_seed(tc.seed, kShuffleStream, epoch));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    }
    std::mt19937_64 dropout_rng(epoch_seed(tc.seed, kDropoutStream, epoch));
    const ForwardContext ctx{cfg.dropout, &dropout_rng};

    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t end : order) {
      Tape tape;
      tape.set_training(true);
      const BoundParams bound(tape, state.params, true);
      const Var probs = forward(tape.constant(window_features(train_split, end, cfg.steps)), ParamScope(bound), cfg, ctx);
      const std::vector<int> y = next_day_labels(train_split, end);
      const Var l = loss(probs, y);
      const double value = l.value()[0];
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "non-finite loss " << value << " in epoch " << epoch << " at window ending "
           << train_split.dates[end];
        throw TrainingError(os.str());
      }
      tape.backward(l);
      std::vector<Tensor> grads;
      grads.reserve(bound.vars().size());
      for (const Var& v : bound.vars()) grads.push_back(tape.grad(v));
      opt.step(state.params, grads);

      loss_sum += value * static_cast<double>(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) correct += (probs.value()[i * 2 + 1] > 0.5 ? 1 : 0) == y[i];
      seen += y.size();
    }

    const Evaluation val = evaluate(cfg, state.params, val_split);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    state.history.push_back(rec);
    if (val.accuracy > state.best_val_accuracy) {
      state.best_val_accuracy = val.accuracy;
      state.best_epoch = epoch;
      state.best_params = state.params;
    }
    state.optimizer_steps = opt.steps();
    state.adam_m = opt.first_moment();
    state.adam_v = opt.second_moment();
    state.finished = epoch >= tc.max_epochs || epoch - state.best_epoch >= tc.patience;
    if (on_epoch) on_epoch(state);
  }
}

TrainState train(const ModelConfig& model, const TrainConfig& cfg, const MarketPanel& train_split,
                 const MarketPanel& val_split) {
  TrainState state = initial_state(model, cfg);
  train(state, train_split, val_split);
  return state;
}

}  // namespace magnet
