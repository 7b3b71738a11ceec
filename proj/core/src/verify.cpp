#include "magnet/verify.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <cmath>
#include <numbers>
#include <sstream>

#include "magnet/attn2d.hpp"
#include "magnet/backtest.hpp"
#include "magnet/gph.hpp"
#include "magnet/layers.hpp"
#include "magnet/mage.hpp"
#include "magnet/metrics.hpp"
#include "magnet/model.hpp"
#include "magnet/oracles/attention.hpp"
#include "magnet/oracles/backtest.hpp"
#include "magnet/oracles/dense.hpp"
#include "magnet/params.hpp"
#include "magnet/tch.hpp"

namespace magnet::verify {

namespace {

using oracles::Dense;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

Dense to_dense(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("to_dense expects a matrix");
  return Dense(t.dim(0), t.dim(1), t.values());
}

/// sum(out * R) with R drawn from a fixed seed, so every evaluation projects identically.
Var project(Var out, std::uint64_t seed) {
  Rng rng(seed);
  return sum_all(mul(out, out.tape().constant(random_tensor(out.shape(), rng))));
}

template <typename F>
CheckResult timed(const char* name, F&& body) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = name;
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// Gradient cases --------------------------------------------------------------

class GradSuite {
 public:
  explicit GradSuite(std::uint64_t seed) : rng_(seed) {}

  /// Plain function of input tensors.
  void plain(std::string name, std::vector<Tensor> inputs, std::function<Var(Tape&, std::span<const Var>)> f) {
    const std::uint64_t proj = rng_.next();
    ScalarFn fn = [f, proj](Tape& t, std::span<const Var> v) { return project(f(t, v), proj); };
    cases_.push_back({std::move(name), grad_check(fn, inputs)});
  }

  /// Module with parameters: inputs followed by every parameter are checked.
  void module(std::string name, ParamStore store, std::vector<Tensor> inputs,
              std::function<Var(const ParamScope&, std::span<const Var>)> f, bool scalar = false) {
    const std::uint64_t proj = rng_.next();
    const std::size_t n_inputs = inputs.size();
    for (const Tensor& p : store.tensors()) inputs.push_back(p);
    auto shared = std::make_shared<ParamStore>(std::move(store));
    ScalarFn fn = [f, proj, n_inputs, shared, scalar](Tape& t, std::span<const Var> v) {
      const BoundParams bound(t, *shared, std::vector<Var>(v.begin() + static_cast<std::ptrdiff_t>(n_inputs), v.end()));
      Var out = f(ParamScope(bound), v.first(n_inputs));
      return scalar ? out : project(out, proj);
    };
    cases_.push_back({std::move(name), grad_check(fn, inputs)});
  }

  Rng& rng() { return rng_; }
  std::vector<GradCase> take() { return std::move(cases_); }

 private:
  Rng rng_;
  std::vector<GradCase> cases_;
};

}  // namespace

std::vector<GradCase> gradient_cases(std::uint64_t seed) {
  GradSuite s(seed);
  Rng& rng = s.rng();
  auto rt = [&](Shape shape, double lo = -1.0, double hi = 1.0) { return random_tensor(std::move(shape), rng, lo, hi); };

  // Elementwise and tensor algebra.
  s.plain("add_sub_mul_broadcast", {rt({3, 4}), rt({4}), rt({3, 4})}, [](Tape&, std::span<const Var> v) {
    return sub(mul(add(v[0], v[1]), v[2]), scale(v[1], 0.5));
  });
  s.plain("div", {rt({3, 4}), rt({4}, 0.5, 2.0)}, [](Tape&, std::span<const Var> v) { return div(v[0], v[1]); });
  s.plain("log_sqrt", {rt({2, 5}, 0.5, 2.0)}, [](Tape&, std::span<const Var> v) { return add(log(v[0]), sqrt(v[0])); });
  const std::pair<const char*, Activation> acts[] = {
      {"sigmoid", Activation::kSigmoid}, {"tanh", Activation::kTanh},         {"gelu", Activation::kGelu},
      {"elu", Activation::kElu},         {"silu", Activation::kSilu},         {"softplus", Activation::kSoftplus},
      {"retanh", Activation::kReTanh},   {"exp", Activation::kExp}};
  for (const auto& [name, kind] : acts) {
    s.plain(std::string("activation_") + name, {rt({2, 5}, -2.0, 2.0)},
            [kind](Tape&, std::span<const Var> v) { return activation(v[0], kind); });
  }
  s.plain("softmax_axis0", {rt({3, 4})}, [](Tape&, std::span<const Var> v) { return softmax(v[0], 0); });
  s.plain("softmax_last", {rt({2, 3, 4})}, [](Tape&, std::span<const Var> v) { return softmax_last(v[0]); });
  s.plain("layer_norm", {rt({2, 3, 5}), rt({5}), rt({5})},
          [](Tape&, std::span<const Var> v) { return layer_norm(v[0], v[1], v[2]); });
  s.plain("matmul", {rt({2, 3, 4}), rt({4, 5})}, [](Tape&, std::span<const Var> v) { return matmul(v[0], v[1]); });
  s.plain("bmm", {rt({2, 3, 4}), rt({2, 4, 5})}, [](Tape&, std::span<const Var> v) { return bmm(v[0], v[1]); });
  s.plain("bmm_transpose_b", {rt({2, 3, 4}), rt({2, 5, 4})},
          [](Tape&, std::span<const Var> v) { return bmm(v[0], v[1], true); });
  s.plain("shape_ops", {rt({2, 3, 4}), rt({2, 3, 2})}, [](Tape&, std::span<const Var> v) {
    Var p = permute(v[0], {2, 0, 1});
    Var c = concat({flip(v[0], 1), v[1]}, 2);
    Var sl = slice(c, 2, 1, 5);
    return add(add(add(reshape(p, {2, 3, 4}), sl), sum(v[0], 1)), mean(v[0], 2));
  });
  s.plain("transpose_reductions", {rt({3, 4})}, [](Tape&, std::span<const Var> v) {
    return add(matmul(transpose(v[0]), v[0]), add(sum_all(v[0]), mean_all(v[0])));
  });
  s.plain("gather_scatter_pick", {rt({4, 3})}, [](Tape&, std::span<const Var> v) {
    Var g = gather_rows(v[0], {3, 1, 3});
    Var sc = scatter_rows(g, {0, 2, 4}, 5);
    return add(sum_all(sc), sum_all(mul(pick(v[0], {2, 0, 1, 1}), pick(v[0], {0, 0, 2, 1}))));
  });
  s.plain("topk_softmax", {rt({4, 6}, -2.0, 2.0)}, [](Tape&, std::span<const Var> v) { return topk_softmax(v[0], 3); });
  s.plain("nll_loss", {rt({4, 3})}, [](Tape&, std::span<const Var> v) {
    const std::vector<int> labels{0, 2, 1, 2};
    return nll_loss(softmax_last(v[0]), labels);
  });

  // Temporal block pieces.
  s.plain("selective_scan", {rt({2, 5, 3}), rt({2, 5, 3}), rt({3, 2}), rt({2, 5, 2}), rt({2, 5, 2}), rt({3})},
          [](Tape&, std::span<const Var> v) {
            return mage::selective_scan(v[0], softplus(v[1]), neg(exp(v[2])), v[3], v[4], v[5]);
          });
  s.plain("causal_depthwise_conv", {rt({2, 5, 3}), rt({4, 3}), rt({3})},
          [](Tape&, std::span<const Var> v) { return mage::causal_depthwise_conv(v[0], v[1], v[2]); });
  {
    ParamStore store;
    mage::SsmConfig cfg{4, 3, 2, 4};
    mage::SsmParams::init(store, "ssm", cfg, rng);
    s.module("ssm_scan", std::move(store), {rt({2, 5, 4})}, [](const ParamScope& p, std::span<const Var> v) {
      return mage::ssm_scan(v[0], mage::SsmParams::bind(p.scope("ssm")));
    });
  }
  for (const auto mode : {mage::GateMode::kLiteral, mage::GateMode::kConvex}) {
    ParamStore store;
    mage::GateParams::init(store, "gate", 4, rng);
    s.module(mode == mage::GateMode::kLiteral ? "gate_literal" : "gate_convex", std::move(store),
             {rt({2, 3, 4}), rt({2, 3, 4})}, [mode](const ParamScope& p, std::span<const Var> v) {
               return mage::gate_fuse(v[0], v[1], mage::GateParams::bind(p.scope("gate")), mode);
             });
  }
  {
    ParamStore store;
    mage::MoEConfig cfg{4, 3, 5, 0.0, true};
    mage::MoEParams::init(store, "moe", cfg, rng);
    s.module("moe", std::move(store), {rt({2, 3, 4})}, [](const ParamScope& p, std::span<const Var> v) {
      const mage::MoEParams moe = mage::MoEParams::bind(p.scope("moe"), 3);
      return mage::moe_apply(v[0], mage::moe_route(v[0], moe), moe, true);
    });
  }
  {
    ParamStore store;
    mage::MhaParams::init(store, "mha", 4, 2, rng);
    s.module("mha", std::move(store), {rt({2, 4, 4})}, [](const ParamScope& p, std::span<const Var> v) {
      return mage::mha(v[0], mage::MhaParams::bind(p.scope("mha"), 2));
    });
  }
  {
    mage::MageConfig cfg;
    cfg.d_model = 4;
    cfg.heads = 2;
    cfg.ssm = mage::SsmConfig{4, 3, 2, 4};
    cfg.moe = mage::MoEConfig{4, 3, 5, 0.0, true};
    ParamStore store;
    mage::init_block(store, "mage", cfg, rng);
    s.module("mage_block", std::move(store), {rt({2, 4, 4})}, [cfg](const ParamScope& p, std::span<const Var> v) {
      return mage::mage_block(v[0], p.scope("mage"), cfg, ForwardContext{});
    });
  }

  // 2D attention.
  {
    attn2d::Attn2DConfig cfg{2, 5, 0};
    ParamStore store;
    attn2d::init_params(store, "a", attn2d::Attn2DShape{3, 2, 4}, cfg, rng);
    s.module("matrix_attention", std::move(store), {rt({3, 2, 4})}, [cfg](const ParamScope& p, std::span<const Var> v) {
      return attn2d::matrix_attention(v[0], p.scope("a"), cfg).output;
    });
  }
  {
    attn2d::Attn2DConfig cfg{2, 5, 0};
    ParamStore store;
    attn2d::init_featurewise(store, "f", 2, 3, 4, cfg, rng);
    attn2d::init_stockwise(store, "s", 2, 3, 4, cfg, rng);
    s.module("featurewise_stockwise_2d", std::move(store), {rt({2, 3, 4})},
             [cfg](const ParamScope& p, std::span<const Var> v) {
               Var f = attn2d::featurewise_2d(v[0], p.scope("f"), cfg).output;
               return attn2d::stockwise_2d(f, p.scope("s"), cfg).output;
             });
  }

  // Temporal-causal hypergraph.
  const tch::TimeStockLayout layout{2, 3};
  {
    ParamStore store;
    tch::CausalAttnParams::init(store, "attn", 4, 2, rng);
    s.module("causal_mha_topk", std::move(store), {rt({6, 4})}, [layout](const ParamScope& p, std::span<const Var> v) {
      return tch::topk_sparsify(tch::causal_mha(v[0], tch::CausalAttnParams::bind(p.scope("attn"), 2), layout), 3);
    });
  }
  s.plain("tch_build_incidence", {rt({6, 6}, 0.0, 1.0), rt({6, 5}), rt({5, 3})},
          [](Tape&, std::span<const Var> v) { return tch::build_incidence(v[0], v[1], v[2]).values; });
  s.plain("tch_conv", {rt({6, 3}, 0.0, 1.0), rt({6, 4}), rt({4, 4})}, [](Tape&, std::span<const Var> v) {
    return tch::tch_conv(IncidenceMatrix{v[0], IncidenceKind::kTch}, v[1], v[2]);
  });
  {
    tch::TchConfig cfg;
    cfg.heads = 2;
    cfg.hyperedges = 3;
    cfg.top_k = 4;
    ParamStore store;
    tch::init_layer(store, "tch", layout, 4, cfg, rng);
    s.module("tch_layer", std::move(store), {rt({2, 3, 4})}, [cfg](const ParamScope& p, std::span<const Var> v) {
      return tch::tch_layer(v[0], p.scope("tch"), cfg).output;
    });
  }

  // Global probabilistic hypergraph.
  s.plain("mean_divergence", {rt({4, 3}, -2.0, 2.0)},
          [](Tape&, std::span<const Var> v) { return gph::mean_divergence(softmax(v[0], 0)); });
  s.plain("hyperedge_weights", {rt({4, 3}, -2.0, 2.0)}, [](Tape&, std::span<const Var> v) {
    return gph::hyperedge_weights(IncidenceMatrix{softmax(v[0], 0), IncidenceKind::kGph}).w;
  });
  s.plain("gph_conv", {rt({3, 4}), rt({4}), rt({3, 6}), rt({6, 6})}, [](Tape&, std::span<const Var> v) {
    const IncidenceMatrix h{softmax(v[0], 0), IncidenceKind::kGph};
    const gph::HyperedgeWeights w{Var(), softmax_last(v[1])};
    return gph::gph_conv(h, w, v[2], v[3]);
  });
  {
    ParamStore store;
    gph::init_layer(store, "gph", 2, 4, gph::GphConfig{3, 6}, rng);
    s.module("gph_layer", std::move(store), {rt({3, 2, 4})}, [](const ParamScope& p, std::span<const Var> v) {
      return gph::gph_layer(v[0], p.scope("gph")).output;
    });
  }

  // Full pipeline at N=2, T=4, F=3, D=8.
  {
    ParamStore store;
    init_linear(store, "embed", 3, 8, rng);
    s.module("embed", std::move(store), {rt({2, 4, 3})},
             [](const ParamScope& p, std::span<const Var> v) { return embed(v[0], p.scope("embed")); });
  }
  {
    ModelConfig cfg;
    cfg.stocks = 2;
    cfg.steps = 4;
    cfg.features = 3;
    cfg.d_model = 8;
    cfg.channels = 2;
    cfg.tch_layers = 1;
    cfg.tch_hyperedges = 4;
    cfg.top_k = 4;
    cfg.gph_hyperedges = 3;
    cfg.ssm_state = 4;
    cfg.moe_hidden = 8;
    cfg.fusion_hidden = 8;
    cfg.gph_ffn_hidden = 8;
    cfg.dropout = 0.0;
    cfg.seed = rng.next();
    s.module("pipeline_loss", init_model(cfg), {rt({2, 4, 3})},
             [cfg](const ParamScope& p, std::span<const Var> v) {
               const std::vector<int> labels{1, 0};
               return loss(forward(v[0], p, cfg, ForwardContext{}), labels);
             },
             true);
  }
  return s.take();
}

CheckResult check_gradients(const Options& opt) {
  return timed("gradient fidelity", [&](CheckResult& r) {
    const std::vector<GradCase> cases = gradient_cases(opt.seed);
    std::string worst_name;
    for (const GradCase& c : cases) {
      if (c.report.max_rel_error >= r.worst) {
        r.worst = c.report.max_rel_error;
        worst_name = c.name;
      }
    }
    r.passed = r.worst < kGradTolerance;
    r.detail = std::to_string(cases.size()) + " cases, max rel error " + fmt(r.worst) + " (" + worst_name + ")";
  });
}

CheckResult check_causality(const Options& opt) {
  return timed("causality", [&](CheckResult& r) {
    Rng rng(opt.seed ^ 0xC0FFEEULL);
    std::size_t violations = 0, rows_checked = 0;
    constexpr std::size_t kTrials = 1000, kWidth = 4, kHeads = 2;
    for (std::size_t trial = 0; trial < kTrials; ++trial) {
      const std::size_t steps = 2 + rng.index(9);                 // 2..10
      const std::size_t stocks = 1 + rng.index(60 / steps);      // T * N <= 60
      const tch::TimeStockLayout layout{stocks, steps};
      const std::size_t m = layout.nodes();
      const Tensor w_q = random_tensor({kWidth, kWidth}, rng), w_k = random_tensor({kWidth, kWidth}, rng);
      Tensor z = random_tensor({m, kWidth}, rng);
      const Tensor mask = opt.hooks.causal_mask ? opt.hooks.causal_mask(layout) : tch::causal_mask(layout);

      auto attention = [&](const Tensor& input) {
        Tape tape;
        tape.set_grad_enabled(false);
        const tch::CausalAttnParams p{tape.constant(w_q), tape.constant(w_k), kHeads};
        return softmax_last(tch::causal_mha(tape.constant(input), p, layout, &mask)).value();
      };
      const Tensor before = attention(z);
      // Perturb every node at or after a random time step.
      const std::size_t cut = 1 + rng.index(steps - 1);
      for (std::size_t row = layout.row(cut, 0); row < m; ++row)
        for (std::size_t c = 0; c < kWidth; ++c) z[row * kWidth + c] += rng.uniform(-1.0, 1.0);
      const Tensor after = attention(z);
      for (std::size_t row = 0; row < layout.row(cut, 0); ++row) {
        ++rows_checked;
        for (std::size_t col = 0; col < m; ++col) {
          if (before[row * m + col] != after[row * m + col]) {
            ++violations;
            break;
          }
        }
      }
    }
    r.worst = static_cast<double>(violations);
    r.passed = violations == 0;
    r.detail = std::to_string(kTrials) + " trials, " + std::to_string(rows_checked) + " earlier rows, " +
               std::to_string(violations) + " changed";
  });
}

CheckResult check_stochasticity(const Options& opt) {
  return timed("stochasticity invariants", [&](CheckResult& r) {
    Rng rng(opt.seed ^ 0x570C4ULL);
    double col_err = 0.0, weight_err = 0.0;
    for (std::size_t trial = 0; trial < 100; ++trial) {
      const std::size_t n = 1 + rng.index(8), width = 1 + rng.index(12), m = 1 + rng.index(8);
      ParamStore store;
      init_linear(store, "hidden", width, 16, rng);
      init_linear(store, "out", 16, m, rng);
      Tape tape;
      tape.set_grad_enabled(false);
      const BoundParams bound(tape, store, false);
      const IncidenceMatrix h =
          gph::build_incidence(tape.constant(random_tensor({n, width}, rng, -3.0, 3.0)), ParamScope(bound));
      const Tensor& hv = h.values.value();
      for (std::size_t j = 0; j < m; ++j) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += hv[i * m + j];
        col_err = std::max(col_err, std::abs(total - 1.0));
      }
      double wsum = 0.0;
      for (double w : gph::hyperedge_weights(h).w.value().data()) wsum += w;
      weight_err = std::max(weight_err, std::abs(wsum - 1.0));
    }

    double min_jsd = INFINITY, max_jsd = -INFINITY, oracle_err = 0.0;
    for (std::size_t trial = 0; trial < 10000; ++trial) {
      const std::size_t len = 1 + rng.index(10);
      auto draw = [&] {
        std::vector<double> p(len);
        double total = 0.0;
        for (double& x : p) {
          x = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
          total += x;
        }
        if (total == 0.0) {
          p[rng.index(len)] = 1.0;
          return p;
        }
        for (double& x : p) x /= total;
        return p;
      };
      const std::vector<double> p = draw(), q = draw();
      const double d = gph::jsd(p, q);
      min_jsd = std::min(min_jsd, d);
      max_jsd = std::max(max_jsd, d);
      oracle_err = std::max(oracle_err, std::abs(d - oracles::jsd(p, q)));
    }
    const double extreme = gph::jsd(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0});
    const double extreme_err = std::abs(extreme - std::numbers::ln2);

    r.worst = std::max({col_err, weight_err, extreme_err});
    r.passed = col_err <= 1e-9 && weight_err <= 1e-9 && min_jsd >= 0.0 && max_jsd <= std::numbers::ln2 + 1e-12 &&
               extreme_err <= 1e-12 && oracle_err <= 1e-12;
    r.detail = "col sum err " + fmt(col_err) + ", weight sum err " + fmt(weight_err) + ", JSD in [" + fmt(min_jsd) +
               ", " + fmt(max_jsd) + "], ln2 err " + fmt(extreme_err) + ", oracle err " + fmt(oracle_err);
  });
}

CheckResult check_sparsification(const Options& opt) {
  return timed("top-k sparsification", [&](CheckResult& r) {
    Rng rng(opt.seed ^ 0x70BCULL);
    std::size_t count_violations = 0;
    double value_err = 0.0, oracle_err = 0.0;
    for (std::size_t trial = 0; trial < 100; ++trial) {
      const std::size_t rows = 1 + rng.index(20), cols = 1 + rng.index(20), k = 1 + rng.index(cols + 2);
      Tensor x = random_tensor({rows, cols}, rng, -4.0, 4.0);
      if (trial % 10 == 0) x[0] = x[cols > 1 ? 1 : 0];  // exercise ties
      Tape tape;
      tape.set_grad_enabled(false);
      const Tensor sparse = topk_softmax(tape.constant(x), k).value();
      const Tensor full = ops::softmax_last(x);
      const Dense ref = oracles::topk_softmax(to_dense(x), k);
      for (std::size_t i = 0; i < rows; ++i) {
        std::size_t nonzero = 0;
        for (std::size_t j = 0; j < cols; ++j) {
          const double v = sparse[i * cols + j];
          oracle_err = std::max(oracle_err, std::abs(v - ref(i, j)));
          if (v != 0.0) {
            ++nonzero;
            value_err = std::max(value_err, std::abs(v - full[i * cols + j]));
          }
        }
        count_violations += nonzero > k;
      }
    }
    r.worst = value_err;
    r.passed = count_violations == 0 && value_err <= 1e-9 && oracle_err <= 1e-9;
    r.detail = "100 matrices, rows over K: " + std::to_string(count_violations) + ", kept-value err " + fmt(value_err) +
               ", oracle err " + fmt(oracle_err);
  });
}

CheckResult check_moe(const Options& opt) {
  return timed("moe routing", [&](CheckResult& r) {
    Rng rng(opt.seed ^ 0x30EULL);
    std::size_t bad_rows = 0;
    double sum_err = 0.0, oracle_err = 0.0;
    for (std::size_t trial = 0; trial < 100; ++trial) {
      const std::size_t tokens = 1 + rng.index(40), d = 1 + rng.index(8), experts = 1 + rng.index(6);
      mage::MoEConfig cfg{d, experts, 4, 0.0, true};
      ParamStore store;
      mage::MoEParams::init(store, "moe", cfg, rng);
      Tape tape;
      tape.set_grad_enabled(false);
      const BoundParams bound(tape, store, false);
      const mage::MoEParams p = mage::MoEParams::bind(ParamScope(bound).scope("moe"), experts);
      const double capacity = trial % 2 ? rng.uniform(0.5, 5.0) : 0.0;
      const mage::MoERouting route = mage::moe_route(tape.constant(random_tensor({tokens, d}, rng, -2.0, 2.0)), p, capacity);
      const std::vector<std::size_t> best = mage::argmax_rows(route.probs.value());
      for (std::size_t i = 0; i < tokens; ++i) {
        std::size_t active = 0;
        for (std::size_t e = 0; e < experts; ++e) active += route.p_tilde[i * experts + e] != 0.0;
        bad_rows += active != 1 || route.expert[i] != best[i] || route.p_tilde[i * experts + route.expert[i]] == 0.0;
      }
      for (std::size_t e = 0; e < experts; ++e) {
        double total = 0.0;
        std::size_t routed = 0;
        for (std::size_t i = 0; i < tokens; ++i) {
          total += route.p_tilde[i * experts + e];
          routed += route.expert[i] == e;
        }
        if (routed > 0) sum_err = std::max(sum_err, std::abs(total - route.capacity));
      }
      const Dense ref = oracles::capacity_weights(to_dense(route.p_hat), route.capacity);
      for (std::size_t i = 0; i < ref.v.size(); ++i) oracle_err = std::max(oracle_err, std::abs(ref.v[i] - route.p_tilde[i]));
    }
    r.worst = sum_err;
    r.passed = bad_rows == 0 && sum_err <= 1e-9 && oracle_err <= 1e-12;
    r.detail = "100 routings, rows without exactly one expert: " + std::to_string(bad_rows) + ", capacity err " +
               fmt(sum_err) + ", oracle err " + fmt(oracle_err);
  });
}

CheckResult check_conv_oracles(const Options& opt) {
  return timed("hypergraph convolution oracles", [&](CheckResult& r) {
    Rng rng(opt.seed ^ 0xC0A7ULL);
    double tch_err = 0.0, gph_err = 0.0;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
    for (std::size_t trial = 0; trial < 100; ++trial) {
      const std::size_t nodes = 1 + rng.index(32), m = 1 + rng.index(8), d = 1 + rng.index(8);
      Tape tape;
      tape.set_grad_enabled(false);
      const Tensor h = random_tensor({nodes, m}, rng, 0.0, 0.999);
      const Tensor z = random_tensor({nodes, d}, rng);
      const Tensor p = random_tensor({d, d}, rng, -1.0 / static_cast<double>(d), 1.0 / static_cast<double>(d));
      const Tensor got = tch::tch_conv(IncidenceMatrix{tape.constant(h), IncidenceKind::kTch}, tape.constant(z),
                                       tape.constant(p)).value();
      const Dense ref = oracles::tch_conv(to_dense(h), to_dense(z), to_dense(p));
      for (std::size_t i = 0; i < ref.v.size(); ++i) tch_err = std::max(tch_err, rel(got[i], ref.v[i]));

      const Tensor hs = ops::softmax(random_tensor({nodes, m}, rng, -3.0, 3.0), 0);
      const Tensor w = ops::softmax_last(random_tensor({m}, rng));
      const gph::HyperedgeWeights hw{Var(), tape.constant(w)};
      const Tensor got2 = gph::gph_conv(IncidenceMatrix{tape.constant(hs), IncidenceKind::kGph}, hw, tape.constant(z),
                                        tape.constant(p)).value();
      const Dense ref2 = oracles::gph_conv(to_dense(hs), w.values(), to_dense(z), to_dense(p));
      for (std::size_t i = 0; i < ref2.v.size(); ++i) gph_err = std::max(gph_err, rel(got2[i], ref2.v[i]));
    }
    r.worst = std::max(tch_err, gph_err);
    r.passed = r.worst <= 1e-9;
    r.detail = "100 instances, tch err " + fmt(tch_err) + ", gph err " + fmt(gph_err);
  });
}

namespace {

struct RandomMarket {
  Tensor predictions, prices;
  StrategyParams params;
};

RandomMarket random_market(Rng& rng, std::size_t max_stocks, std::size_t max_days) {
  const std::size_t n = 1 + rng.index(max_stocks), days = 1 + rng.index(max_days);
  RandomMarket m;
  m.predictions = random_tensor({days, n}, rng, 0.0, 1.0);
  m.prices = Tensor({days + 1, n});
  for (std::size_t i = 0; i < n; ++i) {
    double px = rng.uniform(5.0, 200.0);
    for (std::size_t d = 0; d <= days; ++d) {
      m.prices[d * n + i] = px;
      px *= 1.0 + rng.uniform(-0.1, 0.1);
    }
  }
  m.params.p = 0.05 * static_cast<double>(1 + rng.index(20));
  m.params.q = 0.05 * static_cast<double>(1 + rng.index(19));
  m.params.r = 0.05 * static_cast<double>(rng.index(21));
  const std::size_t cost_kind = rng.index(3);
  m.params.tau = cost_kind == 0 ? 0.0 : cost_kind == 1 ? 0.0025 : rng.uniform(0.0, 0.01);
  return m;
}

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> out(t.dim(0));
  for (std::size_t i = 0; i < t.dim(0); ++i) out[i].assign(t.data().begin() + static_cast<std::ptrdiff_t>(i * t.dim(1)),
                                                       t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * t.dim(1)));
  return out;
}

}  // namespace

CheckResult check_backtest_oracle(const Options& opt) {
  return timed("backtest oracle", [&](CheckResult& r) {
    Rng rng(opt.seed ^ 0xBAC7ULL);
    double worst = 0.0;
    for (std::size_t trial = 0; trial < 100; ++trial) {
      const RandomMarket m = random_market(rng, 5, 10);
      const BacktestResult res = run_backtest(m.predictions, m.prices, m.params, opt.hooks.cost_sign);
      const oracles::SimParams sp{m.params.p, m.params.q, m.params.r, m.params.tau, m.params.initial_capital};
      const std::vector<double> ref = oracles::simulate_strategy(rows_of(m.predictions), rows_of(m.prices), sp);
      worst = std::max(worst, std::abs(res.state.values.back() - ref.back()) / ref.back());
    }
    r.worst = worst;
    r.passed = worst <= 1e-9;
    r.detail = "100 instances, max relative final-value difference " + fmt(worst);
  });
}

CheckResult check_conservation(const Options& opt) {
  return timed("cost conservation", [&](CheckResult& r) {
    Rng rng(opt.seed ^ 0xC05ULL);
    double worst = 0.0;
    std::size_t holding_violations = 0;
    for (std::size_t trial = 0; trial < 100; ++trial) {
      RandomMarket m = random_market(rng, 5, 10);
      if (m.params.tau == 0.0) m.params.tau = 0.0025;
      const std::size_t n = m.prices.dim(1);
      PortfolioState state = PortfolioState::initial(n, m.params.initial_capital);
      for (std::size_t d = 0; d < m.predictions.dim(0); ++d) {
        const auto today = m.prices.data().subspan(d * n, n);
        const double before = state.value(today);
        const StepReport rep =
            daily_step(m.predictions.data().subspan(d * n, n), today, today, state, m.params, opt.hooks.cost_sign);
        const double expected = before - m.params.tau * rep.traded_notional;
        worst = std::max(worst, std::abs(state.values.back() - expected) / before);
        const std::vector<std::size_t> targets = top_n(m.predictions.data().subspan(d * n, n), rep.targets);
        for (std::size_t i = 0; i < n; ++i) {
          const bool target = std::find(targets.begin(), targets.end(), i) != targets.end();
          holding_violations += (!target && state.shares[i] != 0.0) || state.cash < 0.0;
        }
      }
    }
    r.worst = worst;
    r.passed = worst <= 1e-12 && holding_violations == 0;
    r.detail = "100 instances at fixed prices, max relative deviation " + fmt(worst) + ", holding violations " +
               std::to_string(holding_violations);
  });
}

CheckResult check_metrics(const Options& opt) {
  return timed("metric exactness", [&](CheckResult& r) {
    std::vector<std::string> failures;
    auto expect = [&](bool ok, const char* what) {
      if (!ok) failures.push_back(what);
    };
    const std::vector<double> a{100, 80, 90}, b{100, 120, 90, 130}, flat{100, 100, 100, 100};
    expect(backtest_metrics(a).mdd == -0.20, "MDD([100,80,90]) == -0.20");
    expect(backtest_metrics(b).mdd == -0.25, "MDD([100,120,90,130]) == -0.25");
    const BacktestMetrics f = backtest_metrics(flat);
    expect(f.ar == 0.0, "AR of zero returns == 0");
    expect(!f.sr.has_value(), "SR undefined on zero variance");
    expect(!f.cr.has_value(), "CR undefined on zero drawdown");
    expect(f.mdd == 0.0, "MDD of flat series == 0");

    Rng rng(opt.seed ^ 0xA0CULL);
    double auc_err = 0.0, mdd_err = 0.0;
    std::size_t perfect_failures = 0;
    for (std::size_t trial = 0; trial < 100; ++trial) {
      const std::size_t n = 2 + rng.index(40);
      std::vector<double> scores(n);
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        scores[i] = static_cast<double>(rng.index(8)) / 8.0;  // coarse grid forces ties
        labels[i] = rng.uniform() < 0.5;
      }
      labels[0] = 0;
      labels[1] = 1;
      auc_err = std::max(auc_err, std::abs(*rank_auc(scores, labels) - oracles::trapezoid_auc(scores, labels)));
      // Perfect ranking: every positive scores above every negative.
      std::vector<double> perfect(n);
      for (std::size_t i = 0; i < n; ++i) perfect[i] = labels[i] ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4);
      perfect_failures += classification_metrics(perfect, labels).auc != 1.0;

      std::vector<double> values(2 + rng.index(30));
      for (double& v : values) v = rng.uniform(50.0, 150.0);
      mdd_err = std::max(mdd_err, std::abs(backtest_metrics(values).mdd - oracles::max_drawdown(values)));
    }
    expect(auc_err <= 1e-9, "rank AUC == trapezoidal AUC");
    expect(perfect_failures == 0, "AUC == 1 on perfect rankings");
    expect(mdd_err == 0.0, "MDD == brute-force drawdown");
    const std::vector<double> half_probs{0.9, 0.8, 0.7, 0.6};
    const std::vector<int> half_labels{1, 0, 1, 0};
    const ClassificationMetrics c = classification_metrics(half_probs, half_labels);
    expect(c.recall == 1.0 && c.precision == 0.5 && std::abs(c.f1 - 2.0 / 3.0) < 1e-15, "all-positive precision/recall/F1");

    r.worst = static_cast<double>(failures.size());
    r.passed = failures.empty();
    r.detail = failures.empty() ? "exact values, AUC vs trapezoid err " + fmt(auc_err) : "failed: " + failures.front();
  });
}

std::vector<CheckResult> run_suite(const Options& opt) {
  return {check_gradients(opt),     check_causality(opt),        check_stochasticity(opt),
          check_sparsification(opt), check_moe(opt),              check_conv_oracles(opt),
          check_backtest_oracle(opt), check_conservation(opt),    check_metrics(opt)};
}

std::string format_report(const std::vector<CheckResult>& results, bool timings) {
  std::ostringstream os;
  std::size_t width = 0;
  for (const auto& r : results) width = std::max(width, r.name.size());
  for (const auto& r : results) {
    os << (r.passed ? "PASS  " : "FAIL  ") << r.name << std::string(width - r.name.size() + 2, ' ') << r.detail;
    if (timings) os << "  [" << fmt(r.seconds) << " s]";
    os << "\n";
  }
  return os.str();
}

}  // namespace magnet::verify
