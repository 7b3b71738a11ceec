#include <gtest/gtest.h>

#include <cmath>

#include "magnet/mage.hpp"
#include "magnet/oracles/attention.hpp"
#include "test_util.hpp"

namespace magnet::mage {
namespace {

using testing::random_tensor;
using testing::to_dense;

// Straight-line evaluation of the zero-order-hold recurrence.
std::vector<double> scan_reference(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                                   const Tensor& c, const Tensor& d) {
  const std::size_t n = x.dim(0), t = x.dim(1), e = x.dim(2), s = a.dim(1);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < e; ++ch) {
      std::vector<double> h(s, 0.0);
      for (std::size_t step = 0; step < t; ++step) {
        const double xv = x.at({i, step, ch}), dv = delta.at({i, step, ch});
        double out = d[ch] * xv;
        for (std::size_t k = 0; k < s; ++k) {
          h[k] = std::exp(dv * a.at({ch, k})) * h[k] + dv * b.at({i, step, k}) * xv;
          out += c.at({i, step, k}) * h[k];
        }
        y[(i * t + step) * e + ch] = out;
      }
    }
  }
  return y;
}

struct ScanInputs {
  Tensor x, delta, a, b, c, d;
};

ScanInputs scan_inputs(Rng& rng, std::size_t n, std::size_t t, std::size_t e, std::size_t s) {
  ScanInputs in{random_tensor({n, t, e}, rng), random_tensor({n, t, e}, rng, 0.01, 1.0),
                random_tensor({e, s}, rng, -2.0, -0.1), random_tensor({n, t, s}, rng),
                random_tensor({n, t, s}, rng), random_tensor({e}, rng)};
  return in;
}

TEST(SelectiveScan, MatchesRecurrence) {
  Rng rng(11);
  const ScanInputs in = scan_inputs(rng, 2, 6, 3, 4);
  Tape tape;
  const Tensor y = selective_scan(tape.constant(in.x), tape.constant(in.delta), tape.constant(in.a),
                                  tape.constant(in.b), tape.constant(in.c), tape.constant(in.d))
                       .value();
  EXPECT_LT(testing::max_abs_diff(y, scan_reference(in.x, in.delta, in.a, in.b, in.c, in.d)), 1e-12);
}

TEST(SelectiveScan, ZeroInputAndSkipGiveZero) {
  Rng rng(12);
  ScanInputs in = scan_inputs(rng, 1, 5, 2, 3);
  in.x = Tensor(in.x.shape(), 0.0);
  in.d = Tensor(in.d.shape(), 0.0);
  Tape tape;
  const Tensor y = selective_scan(tape.constant(in.x), tape.constant(in.delta), tape.constant(in.a),
                                  tape.constant(in.b), tape.constant(in.c), tape.constant(in.d))
                       .value();
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(CausalConv, UsesOnlyPastSteps) {
  Tape tape;
  const Tensor x({1, 4, 1}, std::vector<double>{1, 2, 3, 4});
  const Tensor w = Tensor::matrix(2, 1, {1.0, 0.5});  // y_t = x_t + 0.5 x_{t-1}
  const Tensor y = causal_depthwise_conv(tape.constant(x), tape.constant(w), tape.constant(Tensor::vector({0}))).value();
  EXPECT_EQ(y.values(), (std::vector<double>{1, 2.5, 4, 5.5}));
}

class SsmFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(21);
    SsmParams::init(store, "fwd", SsmConfig{4, 3, 2, 3}, rng);
    SsmParams::init(store, "bwd", SsmConfig{4, 3, 2, 3}, rng);
  }
  Tensor scan(const Tensor& z, const char* prefix) {
    Tape tape;
    const BoundParams bound(tape, store, false);
    return ssm_scan(tape.constant(z), SsmParams::bind(ParamScope(bound).scope(prefix))).value();
  }
  Directions both(Tape& tape, const BoundParams& bound, const Tensor& z, const char* bwd = "bwd") {
    const ParamScope s(bound);
    return bidirectional(tape.constant(z), SsmParams::bind(s.scope("fwd")), SsmParams::bind(s.scope(bwd)));
  }
  ParamStore store;
};

TEST_F(SsmFixture, PerturbingStepFiveLeavesEarlierOutputsBitwise) {
  Rng rng(1);
  Tensor z = random_tensor({2, 8, 4}, rng);
  const Tensor before = scan(z, "fwd");
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 4; ++k) z.at({i, 5, k}) += 0.7;
  const Tensor after = scan(z, "fwd");
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t k = 0; k < 4; ++k) {
        if (t < 5) {
          EXPECT_EQ(before.at({i, t, k}), after.at({i, t, k}));
        }
      }
  EXPECT_NE(before, after);
}

TEST_F(SsmFixture, SingleStepDependsOnlyOnThatStep) {
  Rng rng(2);
  const Tensor z = random_tensor({1, 1, 4}, rng);
  Tensor longer({1, 3, 4});
  for (std::size_t k = 0; k < 4; ++k) longer.at({0, 0, k}) = z.at({0, 0, k});
  const Tensor single = scan(z, "fwd"), first = scan(longer, "fwd");
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(single.at({0, 0, k}), first.at({0, 0, k}));
}

TEST_F(SsmFixture, BackwardDirectionIsAntiCausal) {
  Rng rng(3);
  Tensor z = random_tensor({1, 8, 4}, rng);
  Tape t1;
  const BoundParams b1(t1, store, false);
  const Tensor before = both(t1, b1, z).bwd.value();
  for (std::size_t k = 0; k < 4; ++k) z.at({0, 0, k}) -= 1.1;
  Tape t2;
  const BoundParams b2(t2, store, false);
  const Tensor after = both(t2, b2, z).bwd.value();
  for (std::size_t t = 1; t < 8; ++t)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(before.at({0, t, k}), after.at({0, t, k}));
}

TEST_F(SsmFixture, PalindromeWithSharedParamsMirrors) {
  Tensor z({1, 5, 4});
  Rng rng(4);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < 4; ++k) z.at({0, t, k}) = z.at({0, 4 - t, k}) = rng.uniform(-1, 1);
  Tape tape;
  const BoundParams bound(tape, store, false);
  const Directions d = both(tape, bound, z, "fwd");
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(d.bwd.value().at({0, t, k}), d.fwd.value().at({0, 4 - t, k}));
}

TEST_F(SsmFixture, LengthOneBothDirectionsAreSingleScans) {
  Rng rng(5);
  const Tensor z = random_tensor({1, 1, 4}, rng);
  Tape tape;
  const BoundParams bound(tape, store, false);
  const Directions d = both(tape, bound, z);
  EXPECT_EQ(d.fwd.value(), scan(z, "fwd"));
  EXPECT_EQ(d.bwd.value(), scan(z, "bwd"));
}

TEST(Gate, ZeroParametersGiveOneHalfInLiteralMode) {
  Tape tape;
  const Tensor zero({3, 3}, 0.0), zb({3}, 0.0);
  const GateParams p{tape.constant(zero), tape.constant(zero), tape.constant(zb), tape.constant(zb)};
  Rng rng(6);
  const Tensor out = gate_fuse(tape.constant(random_tensor({2, 3}, rng)), tape.constant(random_tensor({2, 3}, rng)), p).value();
  for (double v : out.data()) EXPECT_EQ(v, 0.5);
}

TEST(Gate, ConvexModeSaturatesToForward) {
  Tape tape;
  const Tensor zero({3, 3}, 0.0);
  const GateParams p{tape.constant(zero), tape.constant(zero), tape.constant(Tensor({3}, 60.0)),
                     tape.constant(Tensor({3}, 0.0))};
  Rng rng(7);
  const Tensor fwd = random_tensor({2, 3}, rng);
  const Tensor out = gate_fuse(tape.constant(fwd), tape.constant(random_tensor({2, 3}, rng)), p, GateMode::kConvex).value();
  EXPECT_LT(testing::max_abs_diff(out, fwd.values()), 1e-12);
}

TEST(Gate, LiteralMatchesOracle) {
  Rng rng(8);
  const Tensor fwd = random_tensor({5, 4}, rng), bwd = random_tensor({5, 4}, rng);
  const Tensor wf = random_tensor({4, 4}, rng), wb = random_tensor({4, 4}, rng);
  const Tensor bf = random_tensor({4}, rng), bb = random_tensor({4}, rng);
  Tape tape;
  const GateParams p{tape.constant(wf), tape.constant(wb), tape.constant(bf), tape.constant(bb)};
  const Tensor out = gate_fuse(tape.constant(fwd), tape.constant(bwd), p).value();
  const auto ref = oracles::gate_literal(to_dense(fwd), to_dense(bwd), to_dense(wf), bf.values(), to_dense(wb), bb.values());
  EXPECT_LT(testing::max_abs_diff(out, ref.v), 1e-12);
}

class MoEFixture : public ::testing::Test {
 protected:
  MoERouting route(const Tensor& z, std::size_t experts, double capacity, const Tensor* gate = nullptr) {
    Rng rng(9);
    store = ParamStore();
    MoEParams::init(store, "moe", MoEConfig{z.dim(z.rank() - 1), experts, 3, 0.0, true}, rng);
    if (gate) store.get_mutable("moe.gate") = *gate;
    bound.emplace(tape, store, false);
    params = MoEParams::bind(ParamScope(*bound).scope("moe"), experts);
    return moe_route(tape.constant(z), params, capacity);
  }
  Tape tape;
  ParamStore store;
  std::optional<BoundParams> bound;
  MoEParams params;
};

TEST_F(MoEFixture, SingleTokenWithUnitCapacityGetsWeightOne) {
  Rng rng(1);
  const MoERouting r = route(random_tensor({1, 1, 3}, rng), 4, 1.0);
  EXPECT_EQ(r.p_tilde[r.expert[0]], 1.0);
}

TEST_F(MoEFixture, TwoTokensSharingAnExpertSplitCapacity) {
  // Both tokens prefer expert 0 with different confidence.
  const Tensor gate = Tensor::matrix(2, 2, {2.0, 0.0, 0.0, 0.0});
  const Tensor z = Tensor::matrix(2, 2, {1.0, 0.0, 0.5, 0.0});
  const MoERouting r = route(z, 2, 1.0, &gate);
  ASSERT_EQ(r.expert, (std::vector<std::size_t>{0, 0}));
  const double a = r.p_hat[0], b = r.p_hat[2];
  EXPECT_NEAR(r.p_tilde[0], a / (a + b), 1e-15);
  EXPECT_NEAR(r.p_tilde[2], b / (a + b), 1e-15);
}

TEST_F(MoEFixture, SingleExpertTakesEveryToken) {
  Rng rng(2);
  const MoERouting r = route(random_tensor({2, 3, 4}, rng), 1, 0.0);
  for (std::size_t e : r.expert) EXPECT_EQ(e, 0u);
  for (double p : r.probs.value().data()) EXPECT_EQ(p, 1.0);
}

TEST_F(MoEFixture, DefaultCapacityIsTokensPerExpert) {
  Rng rng(3);
  const MoERouting r = route(random_tensor({2, 5, 4}, rng), 4, 0.0);
  EXPECT_DOUBLE_EQ(r.capacity, 10.0 / 4.0);
}

TEST_F(MoEFixture, ZeroExpertWeightsGiveZeroOutput) {
  Rng rng(4);
  const Tensor z = random_tensor({2, 3, 4}, rng);
  route(z, 3, 0.0);
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.names()[i] != "moe.gate") store.tensors()[i] = Tensor(store.tensors()[i].shape(), 0.0);
  }
  bound.emplace(tape, store, false);
  params = MoEParams::bind(ParamScope(*bound).scope("moe"), 3);
  const MoERouting r = moe_route(tape.constant(z), params);
  const Tensor out = moe_apply(tape.constant(z), r, params).value();
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST_F(MoEFixture, IdenticalTokensGetIdenticalOutputs) {
  Tensor z({1, 2, 4});
  for (std::size_t k = 0; k < 4; ++k) z.at({0, 0, k}) = z.at({0, 1, k}) = 0.3 * static_cast<double>(k) - 0.4;
  const MoERouting r = route(z, 3, 0.0);
  const Tensor out = moe_apply(tape.constant(z), r, params).value();
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out.at({0, 0, k}), out.at({0, 1, k}));
}

TEST_F(MoEFixture, SingleUnscaledExpertIsPlainGeluNetwork) {
  Rng rng(5);
  const Tensor z = random_tensor({3, 2}, rng);
  const MoERouting r = route(z, 1, 0.0);
  const Tensor out = moe_apply(tape.constant(z), r, params, false).value();
  const Tensor& w1 = store.get("moe.expert0.w1");
  const Tensor& b1 = store.get("moe.expert0.b1");
  const Tensor& w2 = store.get("moe.expert0.w2");
  const Tensor& b2 = store.get("moe.expert0.b2");
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> hidden(3);
    for (std::size_t h = 0; h < 3; ++h) {
      double acc = b1[h];
      for (std::size_t k = 0; k < 2; ++k) acc += z.at({i, k}) * w1.at({k, h});
      hidden[h] = oracles::gelu(acc);
    }
    for (std::size_t k = 0; k < 2; ++k) {
      double acc = b2[k];
      for (std::size_t h = 0; h < 3; ++h) acc += hidden[h] * w2.at({h, k});
      EXPECT_NEAR(out.at({i, k}), acc, 1e-14);
    }
  }
}

TEST(CapacityNormalize, ColumnsSumToCapacity) {
  const Tensor p_hat = Tensor::matrix(3, 2, {0.6, 0, 0.2, 0, 0, 0.9});
  const Tensor t = capacity_normalize(p_hat, 2.0);
  EXPECT_NEAR(t[0] + t[2], 2.0, 1e-15);
  EXPECT_NEAR(t[5], 2.0, 1e-15);
  EXPECT_EQ(t[1], 0.0);
}

TEST(ArgmaxRows, TiesToLowestIndex) {
  EXPECT_EQ(argmax_rows(Tensor::matrix(2, 3, {0.2, 0.4, 0.4, 0.5, 0.5, 0.0})), (std::vector<std::size_t>{1, 0}));
}

class MhaFixture : public ::testing::Test {
 protected:
  Tensor run(const Tensor& z, std::size_t d, std::size_t heads) {
    Rng rng(13);
    store = ParamStore();
    MhaParams::init(store, "mha", d, heads, rng);
    Tape tape;
    const BoundParams bound(tape, store, false);
    return mha(tape.constant(z), MhaParams::bind(ParamScope(bound).scope("mha"), heads)).value();
  }
  oracles::Dense reference(const Tensor& z_seq, std::size_t heads) {
    return oracles::mha_sequence(to_dense(z_seq), to_dense(store.get("mha.w_q")), to_dense(store.get("mha.w_k")),
                                 to_dense(store.get("mha.w_v")), to_dense(store.get("mha.w_o")), heads);
  }
  ParamStore store;
};

TEST_F(MhaFixture, SingleStepAttendsToItself) {
  Rng rng(1);
  const Tensor z = random_tensor({1, 1, 4}, rng);
  const Tensor out = run(z, 4, 2);
  // Weight 1 on the only key: output = (z W_V) W_O.
  const Tensor expected = ops::matmul(ops::matmul(z, store.get("mha.w_v")), store.get("mha.w_o"));
  EXPECT_LT(testing::max_abs_diff(out, expected.values()), 1e-14);
}

TEST_F(MhaFixture, IdenticalStepsGetIdenticalOutputs) {
  Tensor z({1, 3, 4});
  Rng rng(2);
  for (std::size_t k = 0; k < 4; ++k) {
    z.at({0, 0, k}) = z.at({0, 2, k}) = rng.uniform(-1, 1);
    z.at({0, 1, k}) = rng.uniform(-1, 1);
  }
  const Tensor out = run(z, 4, 2);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out.at({0, 0, k}), out.at({0, 2, k}));
}

TEST_F(MhaFixture, MatchesOracleForOneAndTwoHeads) {
  Rng rng(3);
  for (std::size_t heads : {1u, 2u}) {
    const Tensor z = random_tensor({1, 5, 4}, rng);
    const Tensor out = run(z, 4, heads);
    EXPECT_LT(testing::max_abs_diff(out, reference(z.reshaped({5, 4}), heads).v), 1e-12) << heads << " heads";
  }
}

TEST(MageBlock, PreservesShape) {
  MageConfig cfg;
  ParamStore store;
  Rng rng(17);
  init_block(store, "mage", cfg, rng);
  Tape tape;
  const BoundParams bound(tape, store, false);
  const Var out = mage_block(tape.constant(random_tensor({3, 10, 32}, rng)), ParamScope(bound).scope("mage"), cfg, {});
  EXPECT_EQ(out.shape(), (Shape{3, 10, 32}));
}

TEST(MageBlock, ZeroedSublayersReduceToNormalizedResidualChain) {
  MageConfig cfg;
  cfg.d_model = 4;
  cfg.ssm = SsmConfig{4, 3, 2, 3};
  cfg.moe = MoEConfig{4, 2, 5, 0.0, true};
  ParamStore store;
  Rng rng(18);
  init_block(store, "mage", cfg, rng);
  // Gate output is sigmoid(0) = 0.5 everywhere; MoE and attention outputs vanish.
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.names()[i];
    const bool norm = name.find("norm") != std::string::npos;
    if (!norm) store.tensors()[i] = Tensor(store.tensors()[i].shape(), 0.0);
  }
  const Tensor z = random_tensor({2, 3, 4}, rng);
  Tape tape;
  const BoundParams bound(tape, store, false);
  const Tensor out = mage_block(tape.constant(z), ParamScope(bound).scope("mage"), cfg, {}).value();
  Tensor shifted = z;
  for (double& v : shifted.mutable_data()) v += 0.5;
  const Tensor ones({4}, 1.0), zeros({4}, 0.0);
  const Tensor expected = ops::layer_norm(ops::layer_norm(ops::layer_norm(shifted, ones, zeros), ones, zeros), ones, zeros);
  EXPECT_LT(testing::max_abs_diff(out, expected.values()), 1e-12);
}

TEST(MageBlock, MeanOutputPassesGradCheck) {
  MageConfig cfg;
  cfg.d_model = 4;
  cfg.ssm = SsmConfig{4, 2, 2, 3};
  cfg.moe = MoEConfig{4, 2, 3, 0.0, true};
  ParamStore store;
  Rng rng(19);
  init_block(store, "mage", cfg, rng);
  std::vector<Tensor> inputs{random_tensor({1, 4, 4}, rng)};
  for (const Tensor& p : store.tensors()) inputs.push_back(p);
  const ScalarFn f = [&](Tape& tape, std::span<const Var> v) {
    const BoundParams bound(tape, store, std::vector<Var>(v.begin() + 1, v.end()));
    return mean_all(mage_block(v[0], ParamScope(bound).scope("mage"), cfg, {}));
  };
  EXPECT_LT(grad_check(f, inputs).max_rel_error, 1e-4);
}

}  // namespace
}  // namespace magnet::mage
