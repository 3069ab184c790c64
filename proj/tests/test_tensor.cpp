#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rgbdsod/tensor.hpp"
#include "support/gradcheck.hpp"
#include "support/reference_ops.hpp"

using namespace rgbdsod;

namespace {

Parameter make_param(const std::string& name, Tensor t) {
  Parameter p;
  p.name = name;
  p.velocity.assign(t.numel(), 0.0f);
  p.value = std::move(t);
  return p;
}

Var sum_all(Var x) {
  double s = 0.0;
  for (float v : x.value().data()) s += v;
  const std::size_t xi = x.id;
  return x.graph->add_node(Tensor({1}, static_cast<float>(s)), {xi}, [xi](Graph& g, std::size_t self) {
    const float up = g.value(self).grad()[0];
    for (float& d : g.grad(xi)) d += up;
  });
}

BatchNormState fresh_state(std::size_t c) { return {Tensor({c}, 0.0f), Tensor({c}, 1.0f)}; }

}  // namespace

TEST(TensorTest, ShapeMismatchThrows) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.grad().size(), 6u);
}

TEST(GradientCheckTest, EveryOpMatchesFiniteDifferences) {
  for (const auto& r : gradcheck::run_all(20, 1234)) {
    SCOPED_TRACE(r.op);
    EXPECT_EQ(r.instances, 20);
    EXPECT_LT(r.worst_rel_error, 1e-3);
  }
}

TEST(Conv2dTest, AllOnesCenterAndCorner) {
  Graph g;
  Var x = g.constant(Tensor({1, 1, 3, 3}, 1.0f));
  Var w = g.constant(Tensor({1, 1, 3, 3}, 1.0f));
  Var b = g.constant(Tensor({1}, 0.0f));
  const Tensor& y = conv2d(x, w, b, 1, 1).value();
  EXPECT_FLOAT_EQ(y.at(0, 0, 1, 1), 9.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 0), 4.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 1), 6.0f);
}

TEST(Conv2dTest, IdentityKernel) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(-1, 1);
  Tensor in({2, 1, 4, 5});
  for (float& v : in.data()) v = u(rng);
  Tensor k({1, 1, 3, 3}, 0.0f);
  k[4] = 1.0f;
  Graph g;
  const Tensor& y = conv2d(g.constant(in), g.constant(k), g.constant(Tensor({1})), 1, 1).value();
  ASSERT_EQ(y.shape(), in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) EXPECT_EQ(y[i], in[i]);
}

TEST(Conv2dTest, OutputExtents) {
  Graph g;
  Var x = g.constant(Tensor({1, 2, 7, 6}));
  const Tensor& y = conv2d(x, g.constant(Tensor({4, 2, 3, 3})), g.constant(Tensor({4})), 2, 1).value();
  EXPECT_EQ(y.shape(), (Shape{1, 4, 4, 3}));
}

TEST(Conv2dTest, WeightGradientIsPatchSum) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> u(0, 1);
  Tensor in({1, 1, 4, 4});
  for (float& v : in.data()) v = u(rng);
  Parameter w = make_param("w", Tensor({1, 1, 3, 3}, 0.5f));
  Graph g;
  Var y = conv2d(g.constant(in), g.parameter(w), g.constant(Tensor({1})), 1, 0);
  g.backward(sum_all(y));
  // Output is 2x2; weight (ky,kx) touches in[oy+ky][ox+kx].
  for (std::size_t ky = 0; ky < 3; ++ky)
    for (std::size_t kx = 0; kx < 3; ++kx) {
      double s = 0.0;
      for (std::size_t oy = 0; oy < 2; ++oy)
        for (std::size_t ox = 0; ox < 2; ++ox) s += in.at(0, 0, oy + ky, ox + kx);
      EXPECT_NEAR(w.value.grad()[ky * 3 + kx], s, 1e-5);
    }
}

TEST(Conv2dTest, ChannelMismatchThrows) {
  Graph g;
  EXPECT_THROW(conv2d(g.constant(Tensor({1, 2, 4, 4})), g.constant(Tensor({1, 3, 3, 3})), g.constant(Tensor({1})), 1, 1),
               DimensionError);
  EXPECT_THROW(conv2d(g.constant(Tensor({1, 3, 4, 4})), g.constant(Tensor({1, 3, 2, 2})), g.constant(Tensor({1})), 1, 1),
               DimensionError);
}

TEST(MaxPoolTest, TextbookWindows) {
  Tensor in({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) in[i] = static_cast<float>((i * 7) % 16);
  Graph g;
  const Tensor& y = maxpool2d(g.constant(in), 2, 2, 0).value();
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (std::size_t oy = 0; oy < 2; ++oy)
    for (std::size_t ox = 0; ox < 2; ++ox) {
      float m = -1;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, in.at(0, 0, 2 * oy + dy, 2 * ox + dx));
      EXPECT_EQ(y.at(0, 0, oy, ox), m);
    }
}

TEST(MaxPoolTest, Pool4KeepsResolution) {
  Graph g;
  EXPECT_EQ(maxpool2d(g.constant(Tensor({1, 3, 8, 8})), 3, 1, 1).shape(), (Shape{1, 3, 8, 8}));
  EXPECT_EQ(maxpool2d(g.constant(Tensor({2, 1, 5, 7})), 3, 1, 1).shape(), (Shape{2, 1, 5, 7}));
}

TEST(MaxPoolTest, TiesRouteToFirstInScanOrder) {
  Parameter x = make_param("x", Tensor({1, 1, 2, 2}, 1.0f));
  Graph g;
  g.backward(sum_all(maxpool2d(g.parameter(x), 2, 2, 0)));
  EXPECT_EQ(x.value.grad()[0], 1.0f);
  EXPECT_EQ(x.value.grad()[1], 0.0f);
  EXPECT_EQ(x.value.grad()[2], 0.0f);
  EXPECT_EQ(x.value.grad()[3], 0.0f);
}

TEST(UpsampleTest, ConstantStaysConstant) {
  Graph g;
  const Tensor& y = upsample2x(g.constant(Tensor({1, 2, 3, 5}, 0.375f))).value();
  EXPECT_EQ(y.shape(), (Shape{1, 2, 6, 10}));
  for (float v : y.data()) EXPECT_FLOAT_EQ(v, 0.375f);
}

TEST(UpsampleTest, MonotoneWithEndpoints) {
  Graph g;
  const Tensor& y = upsample2x(g.constant(Tensor({1, 1, 1, 2}, std::vector<float>{0.0f, 2.0f}))).value();
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 4}));
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_FLOAT_EQ(y.at(0, 0, r, 0), 0.0f);
    EXPECT_FLOAT_EQ(y.at(0, 0, r, 3), 2.0f);
    for (std::size_t c = 1; c < 4; ++c) EXPECT_LE(y.at(0, 0, r, c - 1), y.at(0, 0, r, c));
  }
}

TEST(UpsampleTest, ResampleLadder) {
  Graph g;
  Var x = g.constant(Tensor({1, 1, 4, 4}));
  EXPECT_EQ(upsample_to(x, 16, 16).shape(), (Shape{1, 1, 16, 16}));
  EXPECT_EQ(downsample_to(x, 1, 1).shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(resample_to(x, 4, 4).id, x.id);
  EXPECT_THROW(upsample_to(x, 12, 12), DimensionError);
}

TEST(BatchNormTest, TrainModeNormalizes) {
  std::mt19937 rng(9);
  std::normal_distribution<float> nd(3.0f, 2.0f);
  Tensor in({2, 3, 4, 4});
  for (float& v : in.data()) v = nd(rng);
  BatchNormState st = fresh_state(3);
  Graph g;
  const Tensor& y =
      batchnorm(g.constant(in), g.constant(Tensor({3}, 1.0f)), g.constant(Tensor({3}, 0.0f)), st, Mode::Train).value();
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 16; ++i) m += y.at(n, c, i / 4, i % 4);
    m /= 32;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 16; ++i) v += (y.at(n, c, i / 4, i % 4) - m) * (y.at(n, c, i / 4, i % 4) - m);
    v /= 32;
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(BatchNormTest, ZeroGammaGivesBeta) {
  BatchNormState st = fresh_state(2);
  Graph g;
  Tensor in({1, 2, 3, 3});
  for (std::size_t i = 0; i < in.numel(); ++i) in[i] = static_cast<float>(i);
  const Tensor& y = batchnorm(g.constant(in), g.constant(Tensor({2}, 0.0f)),
                              g.constant(Tensor({2}, std::vector<float>{0.25f, -1.5f})), st, Mode::Train)
                        .value();
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_FLOAT_EQ(y[i], 0.25f);
    EXPECT_FLOAT_EQ(y[9 + i], -1.5f);
  }
}

TEST(BatchNormTest, RunningStatisticsPerMode) {
  Tensor in({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  const Tensor gamma({1}, 1.0f), beta({1}, 0.0f);
  BatchNormState st = fresh_state(1);
  {
    Graph g;
    batchnorm(g.constant(in), g.constant(gamma), g.constant(beta), st, Mode::Train);
  }
  // EMA with momentum 0.1 of mean 2.5 and unbiased variance 5/3.
  EXPECT_NEAR(st.running_mean[0], 0.25, 1e-6);
  EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-6);

  const float mean_before = st.running_mean[0], var_before = st.running_var[0];
  Graph g;
  const Tensor y_infer = batchnorm(g.constant(in), g.constant(gamma), g.constant(beta), st, Mode::Infer).value();
  EXPECT_EQ(st.running_mean[0], mean_before);
  EXPECT_EQ(st.running_var[0], var_before);
  EXPECT_NEAR(y_infer[0], (1 - 2.5) / std::sqrt(1.25 + 1e-5), 1e-5);

  const Tensor y_eval = batchnorm(g.constant(in), g.constant(gamma), g.constant(beta), st, Mode::Eval).value();
  EXPECT_NEAR(y_eval[3], (4 - mean_before) / std::sqrt(var_before + 1e-5), 1e-5);
  EXPECT_EQ(st.running_mean[0], mean_before);
}

TEST(BatchNormTest, ChannelMismatchThrows) {
  BatchNormState st = fresh_state(2);
  Graph g;
  EXPECT_THROW(batchnorm(g.constant(Tensor({1, 3, 2, 2})), g.constant(Tensor({3})), g.constant(Tensor({3})), st,
                         Mode::Train),
               DimensionError);
}

TEST(ConcatTest, ExtentsAndIdentity) {
  Graph g;
  Tensor a({2, 2, 3, 3}, 1.0f);
  EXPECT_EQ(concat(g.constant(a), g.constant(Tensor({2, 3, 3, 3}))).shape(), (Shape{2, 5, 3, 3}));
  const Tensor& same = concat(g.constant(a), g.constant(Tensor({2, 0, 3, 3}))).value();
  EXPECT_EQ(same.shape(), a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(same[i], a[i]);
  EXPECT_THROW(concat(g.constant(a), g.constant(Tensor({2, 1, 3, 4}))), DimensionError);
}

TEST(ConcatTest, BackwardSplitsExactly) {
  std::mt19937 rng(11);
  std::normal_distribution<float> nd;
  Parameter a = make_param("a", Tensor({2, 2, 2, 3})), b = make_param("b", Tensor({2, 1, 2, 3}));
  Graph g;
  Var y = concat(g.parameter(a), g.parameter(b));
  std::vector<float> r(y.value().numel());
  for (float& v : r) v = nd(rng);
  double s = 0.0;
  const std::size_t yi = y.id;
  Var loss = g.add_node(Tensor({1}, 0.0f), {yi}, [&](Graph& gr, std::size_t) {
    auto d = gr.grad(yi);
    for (std::size_t i = 0; i < r.size(); ++i) d[i] += r[i];
  });
  g.backward(loss);
  // Incoming gradient mass equals the sum over the split parts, element for element.
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t j = 0; j < 6; ++j) {
        const float up = r[(n * 3 + c) * 6 + j];
        const float got = c < 2 ? a.value.grad()[(n * 2 + c) * 6 + j] : b.value.grad()[n * 6 + j];
        EXPECT_EQ(got, up);
        s += up;
      }
  double split = 0.0;
  for (float v : a.value.grad()) split += v;
  for (float v : b.value.grad()) split += v;
  EXPECT_NEAR(split, s, 1e-5);
}

TEST(SigmoidBceTest, ReferencePoints) {
  Graph g;
  EXPECT_NEAR(sigmoid_bce(g.constant(Tensor({1}, 0.0f)), Tensor({1}, 0.5f)).value()[0], std::log(2.0), 1e-6);
  EXPECT_LT(sigmoid_bce(g.constant(Tensor({1}, 20.0f)), Tensor({1}, 1.0f)).value()[0], 1e-8);
  const float big = sigmoid_bce(g.constant(Tensor({2}, std::vector<float>{-500.0f, 500.0f})),
                                Tensor({2}, std::vector<float>{1.0f, 0.0f}))
                        .value()[0];
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_NEAR(big, 500.0, 1e-3);
}

TEST(SigmoidBceTest, MatchesUnfusedFormula) {
  std::mt19937 rng(13);
  std::normal_distribution<float> nd(0.0f, 2.0f);
  std::uniform_real_distribution<float> u(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x({1, 1, 2, 2}), t({1, 1, 2, 2});
    for (float& v : x.data()) v = nd(rng);
    for (float& v : t.data()) v = u(rng);
    Graph g;
    const double got = sigmoid_bce(g.constant(x), t).value()[0];
    const double want = ref::bce({x[0], x[1], x[2], x[3]}, {t[0], t[1], t[2], t[3]});
    EXPECT_NEAR(got, want, 1e-6);
  }
}

TEST(SigmoidBceTest, GradientIsResidualOverN) {
  Parameter x = make_param("x", Tensor({4}, std::vector<float>{-1.0f, 0.0f, 0.5f, 2.0f}));
  const Tensor t({4}, std::vector<float>{0.0f, 1.0f, 1.0f, 0.0f});
  Graph g;
  g.backward(sigmoid_bce(g.parameter(x), t));
  for (std::size_t i = 0; i < 4; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x.value[i])));
    EXPECT_NEAR(x.value.grad()[i], (s - t[i]) / 4.0, 1e-7);
  }
}

TEST(GraphTest, ParameterMapsToOneNode) {
  Parameter p = make_param("p", Tensor({2}, 1.0f));
  Graph g;
  EXPECT_EQ(g.parameter(p).id, g.parameter(p).id);
  EXPECT_EQ(g.size(), 1u);
}

TEST(GraphTest, NonFiniteForwardIsAnError) {
  Graph g;
  Var big = g.constant(Tensor({1, 1, 3, 3}, 1e30f));
  EXPECT_THROW(conv2d(big, big, g.constant(Tensor({1})), 1, 0), NumericalError);
}

TEST(GraphTest, ReusedNodeAccumulates) {
  Parameter p = make_param("p", Tensor({1}, 3.0f));
  Graph g;
  Var v = g.parameter(p);
  g.backward(weighted_sum({v, v}, {2.0, 0.5}));
  EXPECT_FLOAT_EQ(p.value.grad()[0], 2.5f);
}

TEST(GraphTest, GradDisabledRecordsNothing) {
  Parameter p = make_param("p", Tensor({1, 1, 2, 2}, 1.0f));
  Graph g;
  g.set_grad_enabled(false);
  Var y = relu(g.parameter(p));
  EXPECT_FALSE(g.requires_grad(y.id));
  g.backward(sum_all(y));
  EXPECT_FALSE(p.value.has_grad());
}

TEST(GraphTest, ForwardIsDeterministic) {
  auto run = [] {
    std::mt19937 rng(21);
    std::normal_distribution<float> nd;
    Tensor x({1, 2, 8, 8}), w({3, 2, 3, 3});
    for (float& v : x.data()) v = nd(rng);
    for (float& v : w.data()) v = nd(rng);
    BatchNormState st = fresh_state(3);
    Graph g;
    Var y = conv2d(g.constant(x), g.constant(w), g.constant(Tensor({3}, 0.1f)), 1, 1);
    y = batchnorm(y, g.constant(Tensor({3}, 1.0f)), g.constant(Tensor({3}, 0.0f)), st, Mode::Train);
    y = upsample2x(maxpool2d(relu(y), 2, 2, 0));
    return std::vector<float>(y.value().data().begin(), y.value().data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(SgdTest, VanillaStep) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor({2}, std::vector<float>{1.0f, -2.0f}));
  p.value.grad()[0] = 0.5f;
  p.value.grad()[1] = -1.0f;
  sgd_step(store, 0.1, 0.0, 0.0, 1);
  EXPECT_FLOAT_EQ(p.value[0], 0.95f);
  EXPECT_FLOAT_EQ(p.value[1], -1.9f);
  EXPECT_EQ(p.value.grad()[0], 0.0f);
}

TEST(SgdTest, WeightDecayShrinks) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor({1}, 2.0f));
  sgd_step(store, 0.5, 0.9, 0.0005, 1);
  EXPECT_NEAR(p.value[0], 2.0 - 0.5 * 0.0005 * 2.0, 2.5e-7);
}

TEST(SgdTest, MomentumAccumulates) {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor({1}, 0.0f));
  p.value.grad()[0] = 1.0f;
  sgd_step(store, 0.1, 0.9, 0.0, 1);
  p.value.grad()[0] = 1.0f;
  sgd_step(store, 0.1, 0.9, 0.0, 1);
  EXPECT_NEAR(p.value[0], -0.1 - 0.19, 1e-6);
}

TEST(SgdTest, IterSizeEquivalence) {
  std::mt19937 rng(17);
  std::normal_distribution<float> nd;
  Tensor x({2, 2, 5, 5}), t({2, 1, 5, 5});
  for (float& v : x.data()) v = nd(rng);
  for (float& v : t.data()) v = nd(rng) > 0 ? 1.0f : 0.0f;
  Tensor w0({1, 2, 3, 3});
  for (float& v : w0.data()) v = 0.3f * nd(rng);

  auto slice = [](const Tensor& full, std::size_t n) {
    const std::size_t per = full.numel() / full.dim(0);
    Shape s = full.shape();
    s[0] = 1;
    return Tensor(s, std::vector<float>(full.data().begin() + n * per, full.data().begin() + (n + 1) * per));
  };

  ParameterStore full, halves;
  full.add("w", w0);
  full.add("b", Tensor({1}));
  halves.add("w", w0);
  halves.add("b", Tensor({1}));
  for (int step = 0; step < 5; ++step) {
    {
      Graph g;
      g.backward(sigmoid_bce(conv2d(g.constant(x), g.parameter(full.get("w")), g.parameter(full.get("b")), 1, 1), t));
      sgd_step(full, 0.05, 0.9, 0.0005, 1);
    }
    for (std::size_t n = 0; n < 2; ++n) {
      Graph g;
      g.backward(sigmoid_bce(
          conv2d(g.constant(slice(x, n)), g.parameter(halves.get("w")), g.parameter(halves.get("b")), 1, 1),
          slice(t, n)));
    }
    sgd_step(halves, 0.05, 0.9, 0.0005, 2);
  }
  for (std::size_t i = 0; i < w0.numel(); ++i) EXPECT_NEAR(full.get("w").value[i], halves.get("w").value[i], 1e-6);
  EXPECT_NEAR(full.get("b").value[0], halves.get("b").value[0], 1e-6);
}

TEST(ParameterStoreTest, RegistrationIsUnique) {
  ParameterStore s;
  s.add("a", Tensor({2}));
  EXPECT_THROW(s.add("a", Tensor({2})), ConfigError);
  s.add_batchnorm_state("bn", 4);
  EXPECT_THROW(s.add_batchnorm_state("bn", 4), ConfigError);
  EXPECT_THROW(s.get("missing"), ConfigError);
  EXPECT_EQ(s.state("bn").running_var[0], 1.0f);
  ParameterStore copy = s;
  copy.get("a").value[0] = 5.0f;
  EXPECT_EQ(s.get("a").value[0], 0.0f);
}
