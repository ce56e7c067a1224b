#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace sgmim;
using namespace sgmim::testing;

namespace {

// Contracts an arbitrary-shaped output against a fixed random tensor so every
// output entry carries a distinct weight.
Var<double> project(const Var<double>& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  auto weights = random_tensor(out.shape(), rng);
  return sum(mul(out, out.tape().constant(std::move(weights))));
}

ParamMap random_params(std::initializer_list<std::pair<std::string, Shape>> specs, std::uint64_t seed = 1) {
  Rng rng(seed);
  ParamMap p;
  for (const auto& [name, shape] : specs) p.emplace(name, random_tensor(shape, rng));
  return p;
}

void expect_gradients(const ScalarFn& fn, const ParamMap& params, double tol = 1e-6) {
  const auto r = grad_check(fn, params, 1e-6);
  EXPECT_LT(r.max_rel_error, tol) << "worst entry " << r.worst_param;
  EXPECT_EQ(r.unresolved_kinks, 0u);
}

Var<double> p(Tape<double>& t, const ParamMap& m, const std::string& name) { return t.param(name, m.at(name)); }

}  // namespace

TEST(Tensor, ShapeAndAccess) {
  Tensor<double> t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  t(1, 2) = 4.0;
  EXPECT_EQ(t[5], 4.0);
  EXPECT_EQ(t.reshaped({3, 2})(2, 1), 4.0);
  EXPECT_EQ(Tensor<double>::scalar(2.5).item(), 2.5);
  EXPECT_EQ(shape_string({2, 3}), "[2,3]");
}

TEST(Tensor, RejectsBadGeometry) {
  EXPECT_THROW(Tensor<double>({2, 0}), GeometryError);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), GeometryError);
  EXPECT_THROW(Tensor<double>({2, 2}).reshaped({3}), GeometryError);
  EXPECT_THROW(Tensor<double>({2}).item(), GeometryError);
  Tensor<double> bad({2});
  bad[1] = std::nan("");
  EXPECT_THROW(require_finite(bad, "bad"), NumericError);
}

TEST(Autodiff, MatmulMatchesHandValues) {
  Tape<double> tape;
  auto a = tape.variable(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto b = tape.variable(Tensor<double>({2, 1}, {5, 6}));
  auto c = matmul(a, b);
  EXPECT_EQ(c.value().values(), (std::vector<double>{17, 39}));
  tape.backward(sum(c));
  EXPECT_EQ(tape.grad(a).values(), (std::vector<double>{5, 6, 5, 6}));
  EXPECT_EQ(tape.grad(b).values(), (std::vector<double>{4, 6}));
}

TEST(Autodiff, ElementwiseGradients) {
  const auto params = random_params({{"a", {3, 4}}, {"b", {3, 4}}, {"bias", {4}}});
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(add(p(t, m, "a"), p(t, m, "b"))); }, params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(sub(p(t, m, "a"), p(t, m, "b"))); }, params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(mul(p(t, m, "a"), p(t, m, "b"))); }, params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(scale(p(t, m, "a"), 0.3)); }, params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(add_bias(p(t, m, "a"), p(t, m, "bias"))); },
                   params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(gelu(p(t, m, "a"))); }, params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(abs(p(t, m, "a"))); }, params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return mean(mul(p(t, m, "a"), p(t, m, "a"))); }, params);
}

TEST(Autodiff, MatrixGradients) {
  const auto params = random_params({{"x", {5, 3}}, {"w", {3, 4}}, {"b", {4}}, {"g", {2, 3, 4}}, {"h", {2, 4, 3}}, {"k", {2, 5, 4}}});
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(matmul(p(t, m, "x"), p(t, m, "w"))); }, params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(linear(p(t, m, "x"), p(t, m, "w"), p(t, m, "b"))); },
                   params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(bmm(p(t, m, "g"), p(t, m, "h"))); }, params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(bmm(p(t, m, "g"), p(t, m, "k"), true)); }, params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(transpose(p(t, m, "x"))); }, params);
}

TEST(Autodiff, NormalizationGradients) {
  const auto params = random_params({{"x", {4, 6}}, {"gamma", {6}}, {"beta", {6}}});
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(softmax(p(t, m, "x"))); }, params);
  expect_gradients(
      [](Tape<double>& t, const ParamMap& m) {
        return project(layer_norm(p(t, m, "x"), p(t, m, "gamma"), p(t, m, "beta"), 1e-6));
      },
      params);
}

TEST(Autodiff, ShapeOpGradients) {
  const auto params = random_params({{"x", {2, 3, 4}}, {"y", {2, 2, 4}}, {"r", {5, 3}}});
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(reshape(p(t, m, "x"), {6, 4})); }, params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(permute(p(t, m, "x"), {2, 0, 1})); }, params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(concat(std::vector<Var<double>>{p(t, m, "x"), p(t, m, "y")}, 1)); },
                   params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(gather_rows(p(t, m, "r"), {4, 0, 4, 2})); },
                   params);
  expect_gradients([](Tape<double>& t, const ParamMap& m) { return project(scatter_rows(p(t, m, "r"), {6, 1, 6, 0, 3}, 8)); },
                   params);
}

TEST(Autodiff, PermuteMovesEntries) {
  Tape<double> tape(false);
  Tensor<double> x({2, 3});
  for (std::size_t i = 0; i < 6; ++i) x[i] = static_cast<double>(i);
  auto y = permute(tape.constant(x), {1, 0});
  EXPECT_EQ(y.shape(), (Shape{3, 2}));
  EXPECT_EQ(y.value().values(), (std::vector<double>{0, 3, 1, 4, 2, 5}));
  EXPECT_THROW(permute(tape.constant(x), {0, 0}), GeometryError);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Tape<double> tape(false);
  Tensor<double> x({3, 5});
  Rng rng(4);
  for (auto& v : x.data()) v = 40 * standard_normal(rng);
  const auto y = softmax(tape.constant(x)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += y(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Autodiff, LayerNormStandardizesRows) {
  Tape<double> tape(false);
  Rng rng(5);
  const auto x = random_tensor({3, 8}, rng, 3.0);
  const auto y = layer_norm(tape.constant(x), tape.constant(Tensor<double>({8}, 1.0)), tape.constant(Tensor<double>({8}, 0.0)), 0.0)
                     .value();
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 8; ++c) m += y(r, c) / 8;
    for (std::size_t c = 0; c < 8; ++c) v += (y(r, c) - m) * (y(r, c) - m) / 8;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-10);
  }
}

TEST(Autodiff, CompensatedSum) {
  Tape<double> tape(false);
  auto s = sum(tape.constant(Tensor<double>({4}, {1e16, 1.0, -1e16, 1.0})));
  EXPECT_EQ(s.value().item(), 2.0);
}

TEST(Autodiff, SharedParameterAccumulates) {
  Tape<double> tape;
  const Tensor<double> w({3}, {1.0, -2.0, 0.5});
  auto a = tape.param("w", w);
  auto b = tape.param("w", w);
  EXPECT_EQ(a.id(), b.id());
  tape.backward(add(sum(mul(a, b)), sum(a)));
  EXPECT_EQ(tape.param_grads().at("w").values(), (std::vector<double>{3.0, -3.0, 2.0}));
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tape<double> tape;
  auto c = tape.constant(Tensor<double>({2}, 3.0));
  auto v = tape.variable(Tensor<double>({2}, 2.0));
  tape.backward(sum(mul(c, v)));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_EQ(tape.grad(c).values(), (std::vector<double>{0, 0}));
  EXPECT_EQ(tape.grad(v).values(), (std::vector<double>{3, 3}));
}

TEST(Autodiff, BackwardPreconditions) {
  Tape<double> off(false);
  auto x = off.variable(Tensor<double>({1}, 1.0));
  EXPECT_THROW(off.backward(x), ConfigError);
  Tape<double> tape;
  auto y = tape.variable(Tensor<double>({2}, 1.0));
  EXPECT_THROW(tape.backward(y), GeometryError);
  EXPECT_THROW(matmul(y, y), GeometryError);
  EXPECT_THROW(add(y, tape.variable(Tensor<double>({3}))), GeometryError);
}

TEST(Autodiff, KinkSignatureTracksAbsBranches) {
  auto signature = [](double v) {
    Tape<double> tape(false);
    abs(tape.constant(Tensor<double>({2}, {v, 1.0})));
    return tape.kink_signature();
  };
  EXPECT_EQ(signature(0.3), signature(0.7));
  EXPECT_NE(signature(0.3), signature(-0.3));
  EXPECT_NE(signature(0.0), signature(0.3));
}

TEST(GradCheck, RelativeErrorDefinition) {
  EXPECT_NEAR(relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(-2.0, 2.0), 2.0);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-12), 1e-12 / 1e-8);
}

TEST(GradCheck, FlagsAWrongBackward) {
  ScalarFn wrong = [](Tape<double>& t, const ParamMap& m) {
    auto x = t.param("x", m.at("x"));
    Tensor<double> out = x.value();
    for (auto& v : out.data()) v = v * v;
    // d/dx x^2 deliberately reported as x.
    auto y = t.push(std::move(out), {x}, [x](const Tensor<double>& g, const Tensor<double>&) {
      auto& dx = x.tape().grad_buffer(x.id());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * x.value()[i];
    });
    return sum(y);
  };
  const auto r = grad_check(wrong, random_params({{"x", {4}}}), 1e-6);
  EXPECT_NEAR(r.max_rel_error, 0.5, 1e-6);
}

TEST(GradCheck, KinkIsRetriedWithSmallerStep) {
  // |x| with x = 3e-7: a 1e-6 step straddles the kink, 1e-7 does not.
  ScalarFn fn = [](Tape<double>& t, const ParamMap& m) { return sum(abs(t.param("x", m.at("x")))); };
  const auto r = grad_check(fn, ParamMap{{"x", Tensor<double>({1}, 3e-7)}}, 1e-6);
  EXPECT_EQ(r.kink_retries, 1u);
  EXPECT_EQ(r.unresolved_kinks, 0u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, SamplesEntriesPerTensor) {
  ScalarFn fn = [](Tape<double>& t, const ParamMap& m) { return project(t.param("x", m.at("x"))); };
  GradCheckOptions opts;
  opts.max_entries_per_tensor = 5;
  const auto r = grad_check(fn, random_params({{"x", {10, 10}}}), 1e-6, opts);
  EXPECT_EQ(r.checked, 5u);
  EXPECT_THROW(grad_check(fn, random_params({{"x", {2}}}), 0.0), ConfigError);
}
