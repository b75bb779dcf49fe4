#include "mfrflow/gradcheck.hpp"
#include "mfrflow/ops.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace mfrflow;

namespace {

using Fn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

template <typename Scalar>
ScalarFunction<Scalar> reduced(std::function<Var<Scalar>(const std::vector<Var<Scalar>>&)> op, std::uint64_t seed) {
  return [op, seed](Tape<Scalar>&, const std::vector<Var<Scalar>>& in) { return oracle::weighted_sum(op(in), seed); };
}

struct OpCase {
  const char* name;
  std::function<std::vector<Shape>(std::mt19937_64&)> shapes;
  bool away_from_zero;
  std::function<Var<double>(const std::vector<Var<double>>&)> op64;
  std::function<Var<float>(const std::vector<Var<float>>&)> op32;
};

#define BOTH(expr)                                                     \
  [](const std::vector<Var<double>>& v) -> Var<double> { return expr; }, \
      [](const std::vector<Var<float>>& v) -> Var<float> { return expr; }

std::vector<OpCase> op_cases() {
  auto same2 = [](std::mt19937_64& rng) {
    Shape s{uniform_int(rng, 1, 3), uniform_int(rng, 1, 4), uniform_int(rng, 1, 4)};
    return std::vector<Shape>{s, s};
  };
  auto one = [](std::mt19937_64& rng) {
    return std::vector<Shape>{{uniform_int(rng, 1, 3), uniform_int(rng, 2, 4), uniform_int(rng, 2, 4)}};
  };
  auto even = [](std::mt19937_64& rng) {
    return std::vector<Shape>{{uniform_int(rng, 1, 3), 2 * uniform_int(rng, 1, 3), 2 * uniform_int(rng, 1, 3)}};
  };
  auto conv = [](std::mt19937_64& rng) {
    const Index c = uniform_int(rng, 1, 3), o = uniform_int(rng, 1, 3);
    return std::vector<Shape>{{c, 4, 4}, {o, c, 3, 3}, {o}};
  };
  auto cat = [](std::mt19937_64& rng) {
    const Index h = uniform_int(rng, 1, 3);
    return std::vector<Shape>{{2, h, 3}, {5, h, 3}};
  };
  auto sample = [](std::mt19937_64&) { return std::vector<Shape>{{2, 5, 6}}; };
  return {
      {"add", same2, false, BOTH(v[0] + v[1])},
      {"sub", same2, false, BOTH(v[0] - v[1])},
      {"mul", same2, false, BOTH(v[0] * v[1])},
      {"relu", one, true, BOTH(relu(v[0]))},
      {"sigmoid", one, false, BOTH(sigmoid(v[0]))},
      {"tanh", one, false, BOTH(mfrflow::tanh(v[0]))},
      {"concat", cat, false, BOTH(concat(std::vector{v[0], v[1]}, 0))},
      {"slice", one, false, BOTH(slice(v[0], 2, 1, 2))},
      {"mean", one, false, BOTH(scale(mean(v[0]), decltype(v[0].value()[0])(3)))},
      {"l2_norm", one, true, BOTH(l2_norm(v[0]))},
      {"l2_norm_axis", one, true, BOTH(l2_norm(v[0], 0))},
      {"softmax", one, false, BOTH(softmax(v[0], {1, 2}))},
      {"avg_pool2", even, false, BOTH(avg_pool2(v[0]))},
      {"conv2d", conv, false, BOTH(conv2d(v[0], v[1], v[2], 1, 1))},
      {"conv2d_relu", conv, false, BOTH(relu(conv2d(v[0], v[1], v[2], 2, 1)))},
      {"bilinear_map", sample, false, BOTH([&] {
         auto& tape = v[0].tape();
         using S = std::remove_cvref_t<decltype(v[0].value()[0])>;
         Tensor<S> coords({4, 2}, {S(0.3), S(0.6), S(4.7), S(2.2), S(-0.4), S(1.5), S(2.5), S(4.6)});
         return bilinear_sample(v[0], tape.constant(coords)).values;
       }())},
  };
}

/// 32-bit analytic gradient against 64-bit central differences taken at the
/// same (float-representable) inputs.
double float_gradient_error(const OpCase& op, std::uint64_t seed, const std::vector<Tensor<float>>& in32) {
  Tape<float> tape;
  std::vector<Var<float>> vars;
  for (const auto& t : in32) vars.push_back(tape.variable(t));
  tape.backward(oracle::weighted_sum(op.op32(vars), seed));
  auto f64 = [&](const std::vector<Tensor<double>>& in) {
    Tape<double> t;
    std::vector<Var<double>> v;
    for (const auto& x : in) v.push_back(t.constant(x));
    return oracle::weighted_sum(op.op64(v), seed).value()[0];
  };
  std::vector<Tensor<double>> probe;
  for (const auto& t : in32) probe.push_back(t.cast<double>());
  double worst = 0;
  const double eps = 1e-5;
  for (std::size_t k = 0; k < in32.size(); ++k) {
    const Tensor<float> g = vars[k].grad();
    for (Index i = 0; i < probe[k].size(); ++i) {
      const double x = probe[k][i];
      probe[k][i] = x + eps;
      const double up = f64(probe);
      probe[k][i] = x - eps;
      const double down = f64(probe);
      probe[k][i] = x;
      const double n = (up - down) / (2 * eps), a = g[i];
      worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor<double> t({2, 3, 4});
  CHECK(t.size() == shape_size(t.shape()));
  CHECK(t.strides() == Shape{12, 4, 1});
  t(1, 2, 3) = 7;
  CHECK(t[23] == 7);
  CHECK_THROWS_AS(Tensor<double>({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK(t.reshaped({24}).shape() == Shape{24});

  Parameter<double> p("p", Tensor<double>({3}, {1.0, 2.0, 3.0}));
  CHECK(p.grad.shape() == p.value.shape());
  p.grad[1] = 4;
  p.zero_grad();
  CHECK(p.grad.array().abs().sum() == 0);
}

TEST_CASE("conv2d examples") {
  Tape<double> tape;
  std::mt19937_64 rng(1);
  const Tensor<double> x = oracle::random_tensor<double>(rng, {2, 3, 3});
  Tensor<double> k({2, 2, 1, 1});
  k(0, 0, 0, 0) = 1;
  k(1, 1, 0, 0) = 1;
  auto y = conv2d(tape.constant(x), tape.constant(k), tape.constant(Tensor<double>({2})), 1, 0);
  CHECK((y.value().array() == x.array()).all());

  auto z = conv2d(tape.constant(x), tape.constant(Tensor<double>({4, 2, 3, 3})), tape.constant(Tensor<double>({4})), 1, 1);
  CHECK(z.shape() == Shape{4, 3, 3});
  CHECK(z.value().array().abs().maxCoeff() == 0);

  auto s = conv2d(tape.constant(Tensor<double>({1, 2, 2}, {1, 2, 3, 4})),
                  tape.constant(Tensor<double>({1, 1, 2, 2}, {1, 0, 0, 1})), tape.constant(Tensor<double>({1})), 1, 0);
  CHECK(s.shape() == Shape{1, 1, 1});
  CHECK(s.value()[0] == doctest::Approx(5.0).epsilon(1e-15));

  CHECK_THROWS_AS(conv2d(tape.constant(x), tape.constant(Tensor<double>({1, 3, 3, 3})),
                         tape.constant(Tensor<double>({1})), 1, 1),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(tape.constant(x), tape.constant(Tensor<double>({1, 2, 5, 5})),
                         tape.constant(Tensor<double>({1})), 1, 0),
                  ShapeError);
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::mt19937_64 rng(seed);
    const Index c = uniform_int(rng, 1, 4), o = uniform_int(rng, 1, 4);
    const Index h = uniform_int(rng, 3, 8), w = uniform_int(rng, 3, 8);
    const Index kk = 2 * uniform_int(rng, 0, 1) + 1, stride = uniform_int(rng, 1, 2), pad = uniform_int(rng, 0, 1);
    const auto x = oracle::random_tensor<double>(rng, {c, h, w});
    const auto k = oracle::random_tensor<double>(rng, {o, c, kk, kk});
    const auto b = oracle::random_tensor<double>(rng, {o});
    Tape<double> tape;
    const auto y = conv2d(tape.constant(x), tape.constant(k), tape.constant(b), stride, pad).value();
    const auto ref = oracle::conv2d(x, k, b, stride, pad);
    REQUIRE(y.shape() == ref.shape());
    for (Index i = 0; i < y.size(); ++i) {
      CHECK(std::abs(y[i] - ref[i]) <= 1e-6 * std::max(1.0, std::abs(ref[i])));
    }
  }
}

TEST_CASE("relu values and gradient") {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({3}, {-1.0, 0.0, 2.0}));
  auto y = relu(x);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == 0.0);
  CHECK(y.value()[2] == 2.0);

  Tape<double> t2;
  auto a = t2.variable(Tensor<double>({2}, {-1.0, 2.0}));
  t2.backward(sum(relu(a)));
  CHECK(a.grad()[0] == 0.0);
  CHECK(a.grad()[1] == 1.0);
  const double err = finite_diff_check<double>(
      [](Tape<double>&, const std::vector<Var<double>>& v) { return sum(relu(v[0])); },
      {Tensor<double>({2}, {-1.0, 2.0})}, 1e-5);
  CHECK(err < 1e-9);
}

TEST_CASE("softmax examples") {
  Tape<double> tape;
  auto eq = softmax(tape.constant(Tensor<double>({4}, 0.7)), {0});
  for (double v : eq.value().values()) CHECK(v == doctest::Approx(0.25));
  auto two = softmax(tape.constant(Tensor<double>({2}, {0.0, std::log(2.0)})), {0});
  CHECK(two.value()[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(two.value()[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  std::mt19937_64 rng(5);
  const auto x = oracle::random_tensor<double>(rng, {3, 4, 5}, -5, 5);
  Tensor<double> shifted = x;
  shifted.array() += 123.0;
  auto a = softmax(tape.constant(x), {0, 2}).value();
  auto b = softmax(tape.constant(shifted), {0, 2}).value();
  CHECK((a.array() - b.array()).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(softmax(tape.constant(x), {}), ShapeError);
}

TEST_CASE("softmax is a distribution over its axes") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto x = oracle::random_tensor<double>(rng, {3, 4, 5}, -20, 20);
    Mask m({3, 4, 5});
    for (auto& v : m.values()) v = uniform01(rng) < 0.7 ? 1 : 0;
    for (Index i = 0; i < 4; ++i) m(0, i, 0) = 1;
    Tape<double> tape;
    auto y = softmax(tape.constant(x), {0, 2}, &m).value();
    CHECK((y.array() >= 0).all());
    for (Index i = 0; i < 4; ++i) {
      double s = 0;
      for (Index c = 0; c < 3; ++c)
        for (Index j = 0; j < 5; ++j) {
          s += y(c, i, j);
          if (!m(c, i, j)) CHECK(y(c, i, j) == 0.0);
        }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("bilinear sampling examples") {
  Tape<double> tape;
  Tensor<double> map({1, 8, 8});
  for (Index i = 0; i < 64; ++i) map[i] = static_cast<double>(i) * 0.5;
  Tensor<double> coords({3, 2}, {3.0, 5.0, 0.5, 0.5, -10.0, -10.0});
  Tensor<double> quad({1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
  auto r = bilinear_sample(tape.constant(map), tape.constant(coords));
  CHECK(r.values.value()(0, 0) == map(0, 5, 3));
  CHECK(r.in_bounds[0]);
  CHECK(r.values.value()(0, 2) == 0.0);
  CHECK_FALSE(r.in_bounds[2]);
  auto q = bilinear_sample(tape.constant(quad), tape.constant(Tensor<double>({1, 2}, {0.5, 0.5})));
  CHECK(q.values.value()[0] == doctest::Approx(1.5).epsilon(1e-15));

  Tensor<double> partial({2, 2}, {-0.5, 3.0, 7.5, 7.5});
  auto p = bilinear_sample(tape.constant(map), tape.constant(partial));
  std::vector<double> plane(map.values().begin(), map.values().end());
  CHECK(p.in_bounds[0]);
  CHECK(p.in_bounds[1]);
  CHECK(p.values.value()(0, 0) == doctest::Approx(oracle::bilinear(plane, 8, 8, -0.5, 3.0)));
  CHECK(p.values.value()(0, 1) == doctest::Approx(oracle::bilinear(plane, 8, 8, 7.5, 7.5)));
}

TEST_CASE("bilinear sampling reproduces grid values and matches the scalar oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Index h = uniform_int(rng, 2, 8), w = uniform_int(rng, 2, 8);
    const auto map = oracle::random_tensor<double>(rng, {2, h, w});
    Tensor<double> coords({30, 2});
    for (Index p = 0; p < 30; ++p) {
      const bool integer = p < 10;
      coords(p, 0) = integer ? uniform_int(rng, 0, static_cast<int>(w) - 1) : uniform(rng, -2.0, w + 1.0);
      coords(p, 1) = integer ? uniform_int(rng, 0, static_cast<int>(h) - 1) : uniform(rng, -2.0, h + 1.0);
    }
    Tape<double> tape;
    auto r = bilinear_sample(tape.constant(map), tape.constant(coords));
    for (Index c = 0; c < 2; ++c) {
      std::vector<double> plane(map.values().begin() + c * h * w, map.values().begin() + (c + 1) * h * w);
      for (Index p = 0; p < 30; ++p) {
        bool in = false;
        const double ref = oracle::bilinear(plane, h, w, coords(p, 0), coords(p, 1), &in);
        if (p < 10) CHECK(r.values.value()(c, p) == map(c, static_cast<Index>(coords(p, 1)), static_cast<Index>(coords(p, 0))));
        CHECK(r.in_bounds[static_cast<std::size_t>(p)] == in);
        CHECK(std::abs(r.values.value()(c, p) - ref) < 1e-12);
      }
    }
  }
}

TEST_CASE("avg_pool2 examples") {
  Tape<double> tape;
  auto c = avg_pool2(tape.constant(Tensor<double>({3, 4, 6}, 2.5)));
  CHECK(c.shape() == Shape{3, 2, 3});
  CHECK((c.value().array() == 2.5).all());
  auto m = avg_pool2(tape.constant(Tensor<double>({2, 2}, {0.0, 2.0, 4.0, 6.0})));
  CHECK(m.value()[0] == 3.0);
  auto twice = avg_pool2(avg_pool2(tape.constant(Tensor<double>({8, 8}))));
  CHECK(twice.shape() == Shape{2, 2});
  CHECK_THROWS_AS(avg_pool2(tape.constant(Tensor<double>({3, 4}))), ShapeError);
}

TEST_CASE("elementwise and reduction examples") {
  Tape<double> tape;
  CHECK(sigmoid(tape.constant(Tensor<double>::scalar(0))).value()[0] == 0.5);
  CHECK(mfrflow::tanh(tape.constant(Tensor<double>::scalar(0))).value()[0] == 0.0);
  auto cat = concat(std::vector{tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({2, 5}))}, 1);
  CHECK(cat.shape() == Shape{2, 8});
  CHECK(mean(tape.constant(Tensor<double>({4}, {1.0, 2.0, 3.0, 4.0}))).value()[0] == 2.5);
  CHECK(l2_norm(tape.constant(Tensor<double>({2}, {3.0, 4.0}))).value()[0] == 5.0);
  CHECK_THROWS_AS(add(tape.constant(Tensor<double>({2})), tape.constant(Tensor<double>({3}))), ShapeError);
  CHECK_THROWS_AS(concat(std::vector{tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({3, 3}))}, 1),
                  ShapeError);
  Mask none({2}, 0);
  CHECK_THROWS(masked_mean(tape.constant(Tensor<double>({2})), none));
}

TEST_CASE("finite difference checker") {
  const double lin = finite_diff_check<double>(
      [](Tape<double>&, const std::vector<Var<double>>& v) { return scale(sum(v[0]), 3.0); },
      {Tensor<double>({3}, {0.1, -2.0, 5.0})}, 1e-5);
  CHECK(lin < 1e-9);

  std::mt19937_64 rng(17);
  const auto x = oracle::random_tensor<double>(rng, {1, 4, 4});
  const auto k = oracle::random_tensor<double>(rng, {2, 1, 3, 3});
  const auto b = oracle::random_tensor<double>(rng, {2});
  const double cr = finite_diff_check<double>(
      [](Tape<double>&, const std::vector<Var<double>>& v) {
        return oracle::weighted_sum(relu(conv2d(v[0], v[1], v[2], 1, 1)), 3);
      },
      {x, k, b}, 1e-5);
  CHECK(cr < 1e-6);

  // A gradient that is 10% too large is reported as a relative error near 0.1.
  const double probe = finite_diff_check<double>(
      [](Tape<double>& tape, const std::vector<Var<double>>& v) {
        Var<double> y = sum(mul(v[0], v[0]));
        return tape.record(y.value(), {v[0]}, [id = v[0].id()](Tape<double>& t, const Tensor<double>& g) {
          Tensor<double> d = t.value(id);
          d.array() *= 2.2 * g[0];
          t.accumulate(id, d);
        });
      },
      {Tensor<double>({3}, {0.5, -1.0, 2.0})}, 1e-5);
  CHECK(probe == doctest::Approx(0.1 / 1.1).epsilon(1e-4));
}

TEST_CASE("every differentiable op passes finite differences on 20 seeds") {
  for (const OpCase& op : op_cases()) {
    const std::string name = op.name;
    CAPTURE(name);
    double worst64 = 0, worst32 = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed * 977 + 3);
      std::vector<Tensor<double>> in64;
      for (const Shape& s : op.shapes(rng)) {
        in64.push_back(op.away_from_zero ? oracle::random_away_from_zero<double>(rng, s, 0.1)
                                         : oracle::random_tensor<double>(rng, s));
      }
      std::vector<Tensor<float>> in32;
      for (const auto& t : in64) in32.push_back(t.cast<float>());
      worst64 = std::max(worst64, finite_diff_check<double>(reduced<double>(op.op64, seed), in64, 1e-5));
      worst32 = std::max(worst32, float_gradient_error(op, seed, in32));
    }
    CHECK(worst64 < 1e-6);
    CHECK(worst32 < 1e-3);
  }
}

TEST_CASE("bilinear sampling gradient with respect to coordinates") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto map = oracle::random_tensor<double>(rng, {2, 5, 6});
    Tensor<double> coords({6, 2});
    for (Index p = 0; p < 6; ++p) {
      // Keep away from integer coordinates, where the interpolant has a kink.
      coords(p, 0) = std::floor(uniform(rng, -0.9, 5.9)) + uniform(rng, 0.1, 0.9);
      coords(p, 1) = std::floor(uniform(rng, -0.9, 4.9)) + uniform(rng, 0.1, 0.9);
    }
    const double err = finite_diff_check<double>(
        [seed](Tape<double>&, const std::vector<Var<double>>& v) {
          return oracle::weighted_sum(bilinear_sample(v[0], v[1]).values, seed);
        },
        {map, coords}, 1e-6);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("deterministic execution") {
  std::mt19937_64 rng(9);
  const auto x = oracle::random_tensor<float>(rng, {3, 8, 8});
  const auto k = oracle::random_tensor<float>(rng, {4, 3, 3, 3});
  const auto b = oracle::random_tensor<float>(rng, {4});
  Tape<float> t1, t2;
  auto y1 = conv2d(t1.variable(x), t1.constant(k), t1.constant(b), 1, 1);
  auto y2 = conv2d(t2.variable(x), t2.constant(k), t2.constant(b), 1, 1);
  CHECK((y1.value().array() == y2.value().array()).all());
  t1.backward(sum(y1));
  t2.backward(sum(y2));
  CHECK((y1.grad().array() == y2.grad().array()).all());
}
