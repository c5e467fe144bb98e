#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>

#include "pali/numerics.hpp"

using namespace pali;

namespace {

TensorD random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  TensorD t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = nd(rng);
  return t;
}

// Builds a scalar loss from a graph over `params`; checks tape gradients
// against central differences for every coordinate.
using LossBuilder = std::function<Var<double>(Graph<double>&)>;

double max_grad_error(const ParamSet<double>& params, const LossBuilder& build) {
  Tape<double> tape;
  Graph<double> g(tape, params);
  for (const auto& name : params.names()) g[name];
  auto grads = backward(build(g));
  ScalarObjective<double> f = [&](const ParamSet<double>& p) {
    Tape<double> t;
    Graph<double> gg(t, p);
    return build(gg).value().item();
  };
  auto fd = finite_difference_grad(f, params, 1e-5);
  double worst = 0;
  for (const auto& [name, g_fd] : fd) {
    const auto& g_ad = grads.at(name);
    for (Index i = 0; i < g_fd.size(); ++i) worst = std::max(worst, relative_error(g_ad[i], g_fd[i], 1e-4));
  }
  return worst;
}

// Contracts an op output against fixed random weights so every output
// coordinate contributes to the loss.
Var<double> weighted_sum(Graph<double>& g, const Var<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = g.constant(random_tensor(y.shape(), rng));
  return sum(mul(y, w));
}

}  // namespace

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(TensorD(Shape{2, 3}, TensorD::Vector::Zero(5)), ShapeError);
  EXPECT_THROW(TensorD(Shape{0, 3}), ShapeError);
  TensorD t(Shape{2, 3});
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.rows(), 2);
  EXPECT_EQ(t.cols(), 3);
  EXPECT_EQ(TensorD::scalar(4.0).item(), 4.0);
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  auto y = softmax(TensorD(Shape{3}, {0.0, 0.0, 0.0}));
  for (Index i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(y[i], 1.0 / 3.0);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({3, 5, 4}, rng, 5.0);
    for (Index axis = 0; axis < 3; ++axis) {
      auto y = softmax(x, axis);
      const auto s = detail::split_axis(x.shape(), axis, "test");
      for (Index o = 0; o < s.outer; ++o)
        for (Index in = 0; in < s.inner; ++in) {
          double total = 0;
          for (Index i = 0; i < s.n; ++i) total += y[(o * s.n + i) * s.inner + in];
          EXPECT_NEAR(total, 1.0, 1e-12);
        }
    }
  }
}

TEST(Ops, CrossEntropyUniformTwoClass) {
  Tape<double> tape;
  auto logits = tape.constant(TensorD(Shape{1, 2}, {0.0, 0.0}));
  EXPECT_NEAR(cross_entropy(logits, {0}, -1).value().item(), std::log(2.0), 1e-15);
}

TEST(Ops, CrossEntropyIgnoresIndex) {
  Tape<double> tape;
  auto logits = tape.constant(TensorD(Shape{3, 2}, {0.0, 0.0, 5.0, -5.0, 0.0, 0.0}));
  EXPECT_NEAR(cross_entropy(logits, {0, 0, 0}, 0).value().item(), 0.0, 1e-15);
  EXPECT_NEAR(cross_entropy(logits, {1, 0, 1}, 0).value().item(), std::log(2.0), 1e-15);
}

TEST(Ops, MatmulIdentity) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 3}, rng);
  TensorD eye = TensorD::from_matrix(TensorD::Matrix::Identity(3, 3));
  EXPECT_TRUE(matmul(eye, a).bit_equal(a));
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  TensorD a(Shape{2, 3}), b(Shape{4, 5});
  try {
    matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[4,5]"), std::string::npos);
  }
}

TEST(Ops, NonFiniteInputRejected) {
  Tape<double> tape;
  TensorD bad(Shape{2}, {1.0, std::nan("")});
  EXPECT_THROW(tape.constant(bad), NumericError);
  auto x = tape.constant(TensorD(Shape{1}, {1e308}));
  EXPECT_THROW(scale(x, 1e10), NumericError);
}

TEST(Ops, LayerNormNormalizes) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({4, 16}, rng, 3.0);
    x.vec().array() += 2.0;
    auto y = layer_norm(x, TensorD::constant({16}, 1.0), TensorD::zeros({16}), 1e-12);
    for (Index r = 0; r < 4; ++r) {
      const double mu = y.matrix().row(r).mean();
      const double var = (y.matrix().row(r).array() - mu).square().mean();
      EXPECT_LT(std::abs(mu), 1e-10);
      EXPECT_NEAR(var, 1.0, 1e-8);
    }
  }
  EXPECT_THROW(layer_norm(TensorD(Shape{2, 2}), TensorD(Shape{2}), TensorD(Shape{2}), 0.0), std::invalid_argument);
}

TEST(Ops, ConcatAndSlice) {
  Tape<double> tape;
  auto a = tape.constant(TensorD(Shape{2, 2}, {1, 2, 3, 4}));
  auto b = tape.constant(TensorD(Shape{2, 1}, {5, 6}));
  auto c = concat<double>({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_TRUE(c.value().bit_equal(TensorD(Shape{2, 3}, {1, 2, 5, 3, 4, 6})));
  auto s = slice(c, 1, 1, 3);
  EXPECT_TRUE(s.value().bit_equal(TensorD(Shape{2, 2}, {2, 5, 4, 6})));
  EXPECT_THROW(concat<double>({a, tape.constant(TensorD(Shape{3, 1}))}, 1), ShapeError);
  EXPECT_THROW(slice(c, 1, 2, 2), ShapeError);
}

TEST(Ops, RelativeBucketsMatchT5) {
  // bidirectional, 32 buckets, max distance 128
  EXPECT_EQ(relative_position_bucket(0, true, 32, 128), 0);
  EXPECT_EQ(relative_position_bucket(-1, true, 32, 128), 1);
  EXPECT_EQ(relative_position_bucket(1, true, 32, 128), 17);
  EXPECT_EQ(relative_position_bucket(-7, true, 32, 128), 7);
  EXPECT_EQ(relative_position_bucket(-8, true, 32, 128), 8);
  EXPECT_EQ(relative_position_bucket(-1000, true, 32, 128), 15);
  EXPECT_EQ(relative_position_bucket(1000, true, 32, 128), 31);
  // causal: future offsets collapse to bucket 0
  EXPECT_EQ(relative_position_bucket(3, false, 32, 128), 0);
  EXPECT_EQ(relative_position_bucket(-15, false, 32, 128), 15);
  EXPECT_EQ(relative_position_bucket(-16, false, 32, 128), 16);
  EXPECT_EQ(relative_position_bucket(-5000, false, 32, 128), 31);
}

TEST(Backward, SquareAtThree) {
  ParamSet<double> p;
  p.add("x", TensorD(Shape{1}, {3.0}));
  Tape<double> tape;
  Graph<double> g(tape, p);
  auto x = g["x"];
  auto grads = backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(grads.at("x")[0], 6.0);
}

TEST(Backward, SoftmaxFirstComponent) {
  ParamSet<double> p;
  p.add("x", TensorD(Shape{2}, {0.0, 0.0}));
  LossBuilder f = [](Graph<double>& g) { return slice(softmax(g["x"]), 0, 0, 1); };
  Tape<double> tape;
  Graph<double> g(tape, p);
  auto grads = backward(f(g));
  // oracle: central differences at eps = 1e-6
  ScalarObjective<double> obj = [&](const ParamSet<double>& q) {
    Tape<double> t;
    Graph<double> gg(t, q);
    return f(gg).value().item();
  };
  auto fd = finite_difference_grad(obj, p, 1e-6);
  EXPECT_NEAR(fd.at("x")[0], 0.25, 1e-9);
  EXPECT_NEAR(fd.at("x")[1], -0.25, 1e-9);
  EXPECT_NEAR(grads.at("x")[0], 0.25, 1e-15);
  EXPECT_NEAR(grads.at("x")[1], -0.25, 1e-15);
}

TEST(Backward, DisconnectedParameterGetsZero) {
  ParamSet<double> p;
  p.add("used", TensorD(Shape{2}, {1.0, 2.0}));
  p.add("unused", TensorD(Shape{3}, {1.0, 2.0, 3.0}));
  Tape<double> tape;
  Graph<double> g(tape, p);
  g["unused"];
  auto grads = backward(sum(g["used"]));
  ASSERT_TRUE(grads.contains("unused"));
  EXPECT_TRUE(grads.at("unused").bit_equal(TensorD::zeros({3})));
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape<double> tape;
  auto x = tape.parameter_copy("x", TensorD(Shape{2}));
  EXPECT_THROW(backward(x), ShapeError);
  EXPECT_THROW(backward(Var<double>{}), std::invalid_argument);
}

TEST(Backward, Deterministic) {
  std::mt19937_64 rng(11);
  ParamSet<double> p;
  p.add("a", random_tensor({4, 5}, rng));
  p.add("b", random_tensor({5, 3}, rng));
  auto run = [&] {
    Tape<double> tape;
    Graph<double> g(tape, p);
    return backward(sum(gelu(matmul(g["a"], g["b"]))));
  };
  auto g1 = run(), g2 = run();
  for (const auto& [name, t] : g1) EXPECT_TRUE(t.bit_equal(g2.at(name)));
}

TEST(Tape, ReplayIsBitExact) {
  std::mt19937_64 rng(5);
  ParamSet<double> p;
  p.add("a", random_tensor({3, 8}, rng));
  p.add("g", random_tensor({8}, rng));
  p.add("b", random_tensor({8}, rng));
  Tape<double> tape;
  Graph<double> g(tape, p);
  auto h = layer_norm(g["a"], g["g"], g["b"], 1e-6);
  auto y = attention(h, h, h, Var<double>{}, AttentionSpec<double>{2, {}});
  sum(softmax(gelu(y)));
  auto replayed = tape.replay();
  ASSERT_EQ(replayed.size(), tape.size());
  for (std::size_t i = 0; i < tape.size(); ++i) EXPECT_TRUE(replayed[i].bit_equal(tape.value(i)));
}

TEST(FiniteDifference, SquareAtThree) {
  ParamSet<double> p;
  p.add("x", TensorD(Shape{1}, {3.0}));
  ScalarObjective<double> f = [](const ParamSet<double>& q) {
    const double x = q.value("x")[0];
    return x * x;
  };
  EXPECT_NEAR(finite_difference_grad(f, p, 1e-5).at("x")[0], 6.0, 1e-8);
}

TEST(FiniteDifference, ConstantObjective) {
  ParamSet<double> p;
  p.add("x", TensorD(Shape{4}, {1, 2, 3, 4}));
  ScalarObjective<double> f = [](const ParamSet<double>&) { return 2.5; };
  const double eps = 1e-4;
  const auto grads = finite_difference_grad(f, p, eps);
  for (double v : grads.at("x").values()) EXPECT_LE(std::abs(v), eps * eps);
}

TEST(FiniteDifference, RejectsNonDeterministicObjective) {
  ParamSet<double> p;
  p.add("x", TensorD(Shape{1}, {1.0}));
  int calls = 0;
  ScalarObjective<double> f = [&](const ParamSet<double>&) { return static_cast<double>(++calls); };
  EXPECT_THROW(finite_difference_grad(f, p, 1e-5), std::runtime_error);
  ScalarObjective<double> g = [](const ParamSet<double>&) { return 1.0; };
  EXPECT_THROW(finite_difference_grad(g, p, 0.1), std::invalid_argument);
}

TEST(FiniteDifference, MatchesBackwardOnTwoLayerModel) {
  std::mt19937_64 rng(2);
  ParamSet<double> p;
  p.add("w1", random_tensor({4, 6}, rng, 0.5));
  p.add("b1", random_tensor({6}, rng, 0.1));
  p.add("w2", random_tensor({6, 3}, rng, 0.5));
  const auto x = random_tensor({5, 4}, rng);
  LossBuilder f = [&](Graph<double>& g) {
    auto h = gelu(add(matmul(g.constant(x), g["w1"]), g["b1"]));
    return cross_entropy(matmul(h, g["w2"]), {0, 1, 2, 1, 0}, -1);
  };
  EXPECT_LT(max_grad_error(p, f), 1e-5);
}

// Every differentiable op against central differences over 20+ random
// shapes and seeds.
TEST(GradientProperty, EveryOpMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> ext(1, 5);
    const Index m = ext(rng), k = ext(rng), n = ext(rng);
    const Index heads = 1 + static_cast<Index>(seed % 2);
    const Index width = 2 * heads * ext(rng);
    ParamSet<double> p;
    p.add("a", random_tensor({m, k}, rng));
    p.add("b", random_tensor({k, n}, rng));
    p.add("c", random_tensor({m, n}, rng));
    p.add("bias", random_tensor({n}, rng));
    p.add("t3", random_tensor({m, k, n}, rng));
    p.add("q", random_tensor({m, width}, rng));
    p.add("kv", random_tensor({k + 1, width}, rng));
    p.add("gamma", random_tensor({width}, rng));
    p.add("beta", random_tensor({width}, rng));
    p.add("table", random_tensor({7, n}, rng));
    p.add("rel", random_tensor({8, heads}, rng));
    std::vector<int> ids;
    for (Index i = 0; i < m; ++i) ids.push_back(static_cast<int>(rng() % 7));
    std::vector<int> labels;
    for (Index i = 0; i < m; ++i) labels.push_back(static_cast<int>(rng() % n));
    labels[0] = -1;
    TensorD mask = TensorD::zeros({m, k + 1});
    mask.at({0, k}) = -std::numeric_limits<double>::infinity();

    std::vector<std::pair<std::string, LossBuilder>> cases = {
        {"matmul", [&](auto& g) { return weighted_sum(g, matmul(g["a"], g["b"]), seed); }},
        {"matmul_nt", [&](auto& g) { return weighted_sum(g, matmul_nt(g["c"], g["c"]), seed); }},
        {"add", [&](auto& g) { return weighted_sum(g, add(g["c"], g["c"]), seed); }},
        {"add_broadcast", [&](auto& g) { return weighted_sum(g, add(g["c"], g["bias"]), seed); }},
        {"mul", [&](auto& g) { return weighted_sum(g, mul(g["c"], g["c"]), seed); }},
        {"gelu", [&](auto& g) { return weighted_sum(g, gelu(g["t3"]), seed); }},
        {"softmax_axis0", [&](auto& g) { return weighted_sum(g, softmax(g["t3"], 0), seed); }},
        {"softmax_axis1", [&](auto& g) { return weighted_sum(g, softmax(g["t3"], 1), seed); }},
        {"layer_norm", [&](auto& g) { return weighted_sum(g, layer_norm(g["q"], g["gamma"], g["beta"], 1e-6), seed); }},
        {"embedding", [&](auto& g) { return weighted_sum(g, embedding(g["table"], ids), seed); }},
        {"concat", [&](auto& g) { return weighted_sum(g, concat<double>({g["c"], g["a"]}, 1), seed); }},
        {"slice", [&](auto& g) { return weighted_sum(g, slice(g["t3"], 1, 0, (k + 1) / 2), seed); }},
        {"reshape", [&](auto& g) { return weighted_sum(g, reshape(g["t3"], {m * k, n}), seed); }},
        {"sum_axis", [&](auto& g) { return weighted_sum(g, sum(g["t3"], 1), seed); }},
        {"mean", [&](auto& g) { return mean(mul(g["c"], g["c"])); }},
        {"mean_axis", [&](auto& g) { return weighted_sum(g, mean(g["t3"], 2), seed); }},
        {"cross_entropy", [&](auto& g) { return cross_entropy(g["c"], labels, -1); }},
        {"attention",
         [&](auto& g) {
           auto kv = g["kv"];
           auto bias = relative_position_bias(g["rel"], m, k + 1, true, 16);
           return weighted_sum(g, attention(g["q"], kv, mul(kv, kv), bias, AttentionSpec<double>{heads, mask}), seed);
         }},
    };
    for (const auto& [name, f] : cases) {
      EXPECT_LT(max_grad_error(p, f), 1e-5) << name << " seed " << seed;
    }
  }
}

TEST(Resize, SameSizeIsBitIdentical) {
  std::mt19937_64 rng(4);
  auto g = random_tensor({4, 5, 3}, rng);
  EXPECT_TRUE(bilinear_resize_grid(g, 4, 5).bit_equal(g));
}

TEST(Resize, TwoByTwoToThreeByThree) {
  TensorD g(Shape{2, 2, 1}, {0, 1, 2, 3});
  auto r = bilinear_resize_grid(g, 3, 3);
  TensorD expected(Shape{3, 3, 1}, {0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3});
  EXPECT_TRUE(r.bit_equal(expected));
}

TEST(Resize, CornersPreserved) {
  std::mt19937_64 rng(9);
  auto g = random_tensor({16, 16, 4}, rng);
  auto r = bilinear_resize_grid(g, 42, 42);
  for (auto [y, x, ry, rx] : {std::array<Index, 4>{0, 0, 0, 0}, {0, 15, 0, 41}, {15, 0, 41, 0}, {15, 15, 41, 41}}) {
    for (Index c = 0; c < 4; ++c) EXPECT_EQ(r.at({ry, rx, c}), g.at({y, x, c}));
  }
}

TEST(Resize, ConstantGridAndLinearity) {
  auto c = TensorD::constant({3, 4, 2}, 0.1);
  EXPECT_TRUE(bilinear_resize_grid(c, 7, 5).bit_equal(TensorD::constant({7, 5, 2}, 0.1)));
  std::mt19937_64 rng(12);
  auto a = random_tensor({3, 3, 2}, rng), b = random_tensor({3, 3, 2}, rng);
  TensorD combo = a;
  combo.vec() = 2.0 * a.vec() - 0.5 * b.vec();
  auto lhs = bilinear_resize_grid(combo, 6, 5);
  TensorD rhs = bilinear_resize_grid(a, 6, 5);
  rhs.vec() = 2.0 * rhs.vec() - 0.5 * bilinear_resize_grid(b, 6, 5).vec();
  EXPECT_LT((lhs.vec() - rhs.vec()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Resize, RejectsSmallExtents) {
  EXPECT_THROW(bilinear_resize_grid(TensorD(Shape{1, 3, 1}), 2, 2), ShapeError);
  EXPECT_THROW(bilinear_resize_grid(TensorD(Shape{2, 2, 1}), 1, 4), ShapeError);
}

TEST(Precision, FloatTensorsWork) {
  Tape<float> tape;
  auto x = tape.parameter_copy("x", TensorF(Shape{1, 3}, {0.f, 0.f, 0.f}));
  auto y = softmax(x);
  EXPECT_NEAR(y.value()[0], 1.0f / 3.0f, 1e-7f);
  auto grads = backward(cross_entropy(x, {1}, -1));
  EXPECT_NEAR(grads.at("x")[1], -2.0f / 3.0f, 1e-6f);
}
