#include <gtest/gtest.h>

#include <random>

#include "prosparse/autodiff.hpp"
#include "prosparse/grad_check.hpp"
#include "prosparse/parameters.hpp"
#include "test_util.hpp"

using namespace prosparse;
using G = Graph<double>;

namespace {

struct OpFixture {
  std::mt19937_64 rng{99};
  ParameterStore<double> store;

  Parameter<double>& param(const std::string& name, Shape shape, double sd = 1.0) {
    return store.add(name, shape, Init::kNormal, rng, sd);
  }

  // Random linear read-out to turn any output into a scalar.
  Var readout(G& g, Var y) {
    std::mt19937_64 r(7);
    std::normal_distribution<double> n(0, 1);
    std::vector<std::pair<std::size_t, double>> e;
    for (std::size_t i = 0; i < g.value(y).size(); ++i) e.push_back({i, n(r)});
    return ad::weighted_entries(g, y, e);
  }

  double check(const std::function<Var(G&)>& f) {
    GradCheckOptions o;
    o.samples_per_param = 50;
    auto r = grad_check<double>(f, store.all(), o);
    EXPECT_GT(r.checked, 0u);
    return r.max_rel_error;
  }
};

}  // namespace

TEST(Ops, SoftmaxUniform) {
  G g;
  Var x = g.constant(Tensor<double>({1, 4}, 0.0));
  const auto& y = g.value(ad::softmax(g, x));
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[i], 0.25);
}

TEST(Ops, SoftmaxSumsToOne) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 5);
  Tensor<float> t({6, 9});
  for (auto& v : t.values()) v = static_cast<float>(n(rng));
  Graph<float> g;
  Var x = g.constant(t);
  const auto& rows = g.value(ad::softmax(g, x, 1));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 9; ++c) s += rows(r, c);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  const auto& cols = g.value(ad::softmax(g, x, 0));
  for (std::size_t c = 0; c < 9; ++c) {
    double s = 0;
    for (std::size_t r = 0; r < 6; ++r) s += cols(r, c);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Ops, LayerNormConstantIsZero) {
  for (double eps : {1e-12, 1e-5, 0.1}) {
    G g;
    Var x = g.constant(Tensor<double>({2, 5}, 3.25));
    for (double v : g.value(ad::layer_norm(g, x, eps)).values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Ops, Conv1dIdentityFilter) {
  G g;
  Tensor<double> x({5, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  Tensor<double> w({2, 2}, std::vector<double>{1, 0, 0, 1});
  Var y = ad::conv1d(g, g.constant(x), g.constant(w), g.constant(Tensor<double>({1, 2}, 0.0)), 1);
  EXPECT_EQ(g.value(y), x);
}

TEST(Ops, MaxPoolReducesTime) {
  G g;
  Tensor<double> x({3, 2}, std::vector<double>{1, 9, 5, 2, 3, 4});
  const auto& y = g.value(ad::max_pool_over_time(g, g.constant(x)));
  EXPECT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_EQ(y[0], 5);
  EXPECT_EQ(y[1], 9);
}

TEST(Ops, DropoutIdentityOutsideTraining) {
  G g(false, 3);
  Tensor<double> x({2, 3}, 1.5);
  Var in = g.constant(x);
  EXPECT_EQ(g.value(ad::dropout(g, in, 0.5)), x);
}

TEST(Ops, DropoutDeterministicPerSeed) {
  auto run = [](std::uint64_t seed) {
    G g(true, seed);
    Var in = g.constant(Tensor<double>({4, 8}, 1.0));
    return g.value(ad::dropout(g, in, 0.5));
  };
  EXPECT_EQ(run(5), run(5));
  EXPECT_NE(run(5), run(6));
  auto kept = run(5);
  for (double v : kept.values()) EXPECT_TRUE(v == 0.0 || v == 2.0);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  G g;
  Var a = g.constant(Tensor<double>({2, 3}));
  Var b = g.constant(Tensor<double>({2, 3}));
  try {
    ad::matmul(g, a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
    std::string m = e.what();
    EXPECT_NE(m.find("matmul"), std::string::npos) << m;
    EXPECT_NE(m.find("[2x3]"), std::string::npos) << m;
  }
  try {
    ad::add(g, a, g.constant(Tensor<double>({3, 2})));
    FAIL();
  } catch (const Error& e) {
    std::string m = e.what();
    EXPECT_NE(m.find("add"), std::string::npos) << m;
    EXPECT_NE(m.find("[3x2]"), std::string::npos) << m;
  }
  EXPECT_THROW(ad::concat(g, {a, g.constant(Tensor<double>({3, 3}))}, 1), Error);
  EXPECT_THROW(ad::add_bias(g, a, g.constant(Tensor<double>({1, 2}))), Error);
}

TEST(GradCheck, SumOfSquares) {
  OpFixture f;
  auto& x = f.param("x", {3, 4});
  double err = f.check([&](G& g) {
    Var v = g.param(x);
    return ad::sum(g, ad::matmul(g, v, ad::transpose(g, v)));
  });
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, ReluAtZeroIsSkipped) {
  ParameterStore<double> store;
  std::mt19937_64 rng(1);
  auto& x = store.add("x", {1, 4}, Init::kZeros, rng);
  x.value[1] = 1.0;
  x.value[3] = -1.0;
  auto r = grad_check<double>([&](G& g) { return ad::sum(g, ad::relu(g, g.param(x))); }, store.all());
  EXPECT_EQ(r.skipped, 2u);
  EXPECT_EQ(r.checked, 2u);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, EveryOp) {
  OpFixture f;
  auto& a = f.param("a", {4, 5});
  auto& b = f.param("b", {5, 3});
  auto& bias = f.param("bias", {1, 5});
  auto& gain = f.param("gain", {1, 5});
  auto& c = f.param("c", {4, 5});
  auto& table = f.param("table", {6, 5});
  auto& x = f.param("x", {7, 2});
  auto& w = f.param("w", {6, 4});
  auto& wb = f.param("wb", {1, 4});

  std::map<std::string, std::function<Var(G&)>> ops = {
      {"matmul", [&](G& g) { return ad::matmul(g, g.param(a), g.param(b)); }},
      {"transpose", [&](G& g) { return ad::transpose(g, g.param(a)); }},
      {"add", [&](G& g) { return ad::add(g, g.param(a), g.param(c)); }},
      {"sub", [&](G& g) { return ad::sub(g, g.param(a), g.param(c)); }},
      {"add_bias", [&](G& g) { return ad::add_bias(g, g.param(a), g.param(bias)); }},
      {"mul_row", [&](G& g) { return ad::mul_row(g, g.param(a), g.param(gain)); }},
      {"scale", [&](G& g) { return ad::scale(g, g.param(a), 0.37); }},
      {"relu", [&](G& g) { return ad::relu(g, g.param(a)); }},
      {"softmax1", [&](G& g) { return ad::softmax(g, g.param(a), 1); }},
      {"softmax0", [&](G& g) { return ad::softmax(g, g.param(a), 0); }},
      {"layer_norm", [&](G& g) { return ad::layer_norm(g, g.param(a)); }},
      {"conv1d", [&](G& g) { return ad::conv1d(g, g.param(x), g.param(w), g.param(wb), 3); }},
      {"max_pool", [&](G& g) { return ad::max_pool_over_time(g, g.param(x)); }},
      {"embedding", [&](G& g) { return ad::embedding_lookup(g, g.param(table), {0, 3, 3, 5}); }},
      {"concat0", [&](G& g) { return ad::concat(g, {g.param(a), g.param(c)}, 0); }},
      {"concat1", [&](G& g) { return ad::concat(g, {g.param(a), ad::matmul(g, g.param(c), g.param(b))}, 1); }},
      {"slice_cols", [&](G& g) { return ad::slice_cols(g, g.param(a), 1, 3); }},
      {"slice_rows", [&](G& g) { return ad::slice_rows(g, g.param(a), 1, 2); }},
  };
  for (const auto& [name, op] : ops) {
    double err = f.check([&](G& g) { return f.readout(g, op(g)); });
    EXPECT_LT(err, 1e-4) << name;
  }
}

TEST(GradCheck, DropoutWithFixedSeed) {
  OpFixture f;
  auto& a = f.param("a", {3, 6});
  // The mask is drawn from the graph seed, so a training graph with a fixed
  // seed is a deterministic function of its input.
  Tensor<double> grad_a({3, 6});
  {
    G g(true, 11);
    Var y = f.readout(g, ad::dropout(g, g.param(a), 0.3));
    a.zero_grad();
    g.backward(y);
    grad_a = a.grad;
  }
  for (std::size_t i = 0; i < a.value.size(); ++i) {
    double orig = a.value[i];
    auto eval = [&](double v) {
      a.value[i] = v;
      G g(true, 11);
      double out = g.value(f.readout(g, ad::dropout(g, g.param(a), 0.3)))[0];
      a.value[i] = orig;
      return out;
    };
    double num = (eval(orig + 1e-5) - eval(orig - 1e-5)) / 2e-5;
    EXPECT_NEAR(num, grad_a[i], 1e-6);
  }
}

TEST(Backward, GradientsAccumulateAcrossCalls) {
  ParameterStore<double> store;
  std::mt19937_64 rng(1);
  auto& x = store.add("x", {1, 3}, Init::kOnes, rng);
  for (int k = 0; k < 2; ++k) {
    G g;
    g.backward(ad::sum(g, ad::scale(g, g.param(x), 2.0)));
  }
  for (double v : x.grad.values()) EXPECT_DOUBLE_EQ(v, 4.0);
  store.zero_grad();
  for (double v : x.grad.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NonScalarLossRejected) {
  G g;
  Var v = g.constant(Tensor<double>({2, 2}));
  EXPECT_THROW(g.backward(v), Error);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore<double> store;
  std::mt19937_64 rng(1);
  auto& p = store.add("p", {1, 3}, Init::kZeros, rng);
  p.grad[0] = 2.0;
  p.grad[1] = -0.5;
  p.grad[2] = 0.0;
  Adam<double> adam;
  double norm = adam.step(store, 0.1);
  EXPECT_NEAR(norm, std::sqrt(4.25), 1e-12);
  EXPECT_NEAR(p.value[0], -0.1, 1e-6);
  EXPECT_NEAR(p.value[1], 0.1, 1e-6);
  EXPECT_EQ(p.value[2], 0.0);
}

TEST(Adam, MinimizesQuadratic) {
  ParameterStore<double> store;
  std::mt19937_64 rng(2);
  auto& p = store.add("p", {1, 4}, Init::kNormal, rng, 1.0);
  Adam<double> adam;
  for (int i = 0; i < 2000; ++i) {
    store.zero_grad();
    G g;
    Var v = g.param(p);
    g.backward(ad::sum(g, ad::matmul(g, v, ad::transpose(g, v))));
    adam.step(store, 0.01);
  }
  for (double v : p.value.values()) EXPECT_NEAR(v, 0.0, 1e-2);
}

TEST(Adam, ClipNormScalesGradient) {
  ParameterStore<double> a_store, b_store;
  std::mt19937_64 rng(3);
  auto& a = a_store.add("p", {1, 2}, Init::kZeros, rng);
  auto& b = b_store.add("p", {1, 2}, Init::kZeros, rng);
  a.grad[0] = 30;
  a.grad[1] = 40;
  b.grad[0] = 3;
  b.grad[1] = 4;
  AdamOptions clip;
  clip.clip_norm = 5;
  Adam<double> x(clip), y;
  EXPECT_DOUBLE_EQ(x.step(a_store, 0.01), 50.0);
  y.step(b_store, 0.01);
  EXPECT_NEAR(a.value[0], b.value[0], 1e-12);
  EXPECT_NEAR(a.value[1], b.value[1], 1e-12);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto dir = testutil::temp_dir("ckpt");
  ParameterStore<float> store;
  std::mt19937_64 rng(4);
  store.add("enc.w", {3, 5}, Init::kXavier, rng);
  store.add("enc.b", {1, 5}, Init::kNormal, rng);
  CheckpointData ck;
  ck.metadata = "{\"k\": 1}";
  ck.tensors = snapshot(store);
  write_checkpoint(dir + "/m.ckpt", ck);
  auto back = read_checkpoint(dir + "/m.ckpt");
  EXPECT_EQ(back.metadata, ck.metadata);
  ParameterStore<float> other;
  std::mt19937_64 rng2(5);
  other.add("enc.w", {3, 5}, Init::kZeros, rng2);
  other.add("enc.b", {1, 5}, Init::kZeros, rng2);
  restore(other, back.tensors);
  EXPECT_EQ(other.get("enc.w").value, store.get("enc.w").value);
  EXPECT_EQ(other.get("enc.b").value, store.get("enc.b").value);
}

TEST(Checkpoint, MismatchListsShapes) {
  ParameterStore<float> a, b;
  std::mt19937_64 rng(4);
  a.add("w", {3, 5}, Init::kZeros, rng);
  a.add("extra", {1, 1}, Init::kZeros, rng);
  b.add("w", {4, 5}, Init::kZeros, rng);
  try {
    restore(b, snapshot(a));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCheckpoint);
    std::string m = e.what();
    EXPECT_NE(m.find("w expected [4x5] found [3x5]"), std::string::npos) << m;
    EXPECT_NE(m.find("unexpected extra"), std::string::npos) << m;
  }
}

TEST(Checkpoint, CorruptFileRejected) {
  auto dir = testutil::temp_dir("ckpt-bad");
  testutil::write_file(dir + "/x.ckpt", "PPCK\x01");
  EXPECT_THROW(read_checkpoint(dir + "/x.ckpt"), Error);
  testutil::write_file(dir + "/y.ckpt", "nope");
  EXPECT_THROW(read_checkpoint(dir + "/y.ckpt"), Error);
}
