#include <doctest.h>

#include <cmath>
#include <random>

#include "faultseg/autodiff.hpp"
#include "faultseg/grad_check.hpp"

using namespace faultseg;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

// Seven nested loops, no shortcuts.
Tensor<double> conv_reference(const Tensor<double>& x, const Tensor<double>& w, int stride,
                              std::array<int, 3> pad) {
  const auto ci = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto co = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const auto od = (d + 2 * pad[0] - kd) / stride + 1;
  const auto oh = (h + 2 * pad[1] - kh) / stride + 1;
  const auto ow = (wd + 2 * pad[2] - kw) / stride + 1;
  Tensor<double> y({co, od, oh, ow});
  for (std::int64_t o = 0; o < co; ++o)
    for (std::int64_t z = 0; z < od; ++z)
      for (std::int64_t r = 0; r < oh; ++r)
        for (std::int64_t c = 0; c < ow; ++c) {
          double s = 0;
          for (std::int64_t i = 0; i < ci; ++i)
            for (std::int64_t a = 0; a < kd; ++a)
              for (std::int64_t b = 0; b < kh; ++b)
                for (std::int64_t e = 0; e < kw; ++e) {
                  const auto iz = z * stride + a - pad[0];
                  const auto iy = r * stride + b - pad[1];
                  const auto ix = c * stride + e - pad[2];
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= d || iy >= h || ix >= wd) continue;
                  s += x.at(i, iz, iy, ix) * w[(((o * ci + i) * kd + a) * kh + b) * kw + e];
                }
          y.at(o, z, r, c) = s;
        }
  return y;
}

// f(x) = sum(r * op(x)) for a fixed random r, so every output adjoint is
// exercised. r is bounded away from zero so no gradient component is so small
// that double roundoff in the difference quotient dominates it.
ScalarFunction probe(std::function<Var(Graph<double>&, Var)> op, const Shape& out_shape,
                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor<double> r = random_tensor<double>(out_shape, rng, 0.5, 1.5);
  return [op, r](Graph<double>& g, Var x) {
    const Var y = op(g, x);
    return reduce_sum(g, mul(g, y, g.constant(r)));
  };
}

// Values spaced at least 1e-3 apart, so pooling argmax and ReLU signs do not
// flip under a 1e-4 probe.
Tensor<double> spaced_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor<double> t(std::move(shape));
  std::vector<double> values(static_cast<std::size_t>(t.numel()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = (static_cast<double>(i) + 0.5) * 1e-3 * (i % 2 ? 1.0 : -1.0) + (i % 2 ? 0.01 : -0.01);
  }
  std::shuffle(values.begin(), values.end(), rng);
  std::copy(values.begin(), values.end(), t.ptr());
  return t;
}

}  // namespace

TEST_SUITE("compute-core") {

TEST_CASE("sigmoid values") {
  Graph<double> g;
  const Var x = g.constant(Tensor<double>({3}, std::vector<double>{0.0, 30.0, std::log(3.0)}));
  const Tensor<double>& y = g.value(sigmoid(g, x));
  CHECK(y[0] == 0.5);
  CHECK(std::abs(y[1] - 1.0) < 1e-12);
  CHECK(y[2] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("sigmoid output stays inside (0, 1) in single precision for moderate inputs") {
  Graph<float> g;
  const Var x = g.constant(Tensor<float>({4}, std::vector<float>{-10.f, -1.f, 1.f, 10.f}));
  for (float v : g.value(sigmoid(g, x)).data()) {
    CHECK(v > 0.f);
    CHECK(v < 1.f);
  }
}

TEST_CASE("conv3d small exact cases") {
  {
    Graph<double> g;
    const Var x = g.constant(Tensor<double>({1, 1, 1, 1}, 2.0));
    const Var w = g.constant(Tensor<double>({1, 1, 1, 1, 1}, 3.0));
    CHECK(g.value(conv3d(g, x, w, Var{}))[0] == 6.0);
  }
  {
    Graph<double> g;
    const Var x = g.constant(Tensor<double>({1, 3, 3, 3}, 1.0));
    const Var w = g.constant(Tensor<double>({1, 1, 3, 3, 3}, 1.0));
    const Tensor<double>& y = g.value(conv3d(g, x, w, Var{}));
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 27.0);
  }
}

TEST_CASE("conv3d matches the nested-loop reference") {
  std::mt19937_64 rng(7);
  struct Case {
    Shape x, w;
    int stride;
    std::array<int, 3> pad;
  };
  const std::vector<Case> cases = {
      {{2, 4, 4, 4}, {3, 2, 3, 3, 3}, 1, {1, 1, 1}},
      {{2, 4, 4, 4}, {3, 2, 3, 3, 3}, 1, {0, 0, 0}},
      {{2, 4, 4, 4}, {1, 2, 1, 1, 1}, 1, {0, 0, 0}},
      {{3, 5, 6, 7}, {9, 3, 3, 3, 3}, 1, {1, 1, 1}},
      {{2, 5, 5, 5}, {2, 2, 3, 2, 1}, 1, {1, 0, 2}},
      {{2, 6, 6, 6}, {4, 2, 3, 3, 3}, 2, {1, 1, 1}},
      {{1, 4, 4, 4}, {2, 1, 1, 1, 1}, 1, {1, 1, 1}},
  };
  for (const auto& c : cases) {
    const auto x = random_tensor<double>(c.x, rng);
    const auto w = random_tensor<double>(c.w, rng);
    Conv3dOptions opt;
    opt.stride = c.stride;
    opt.padding = c.pad;
    const auto ref = conv_reference(x, w, c.stride, c.pad);
    const auto got = kernels::conv3d_forward(x, w, nullptr, opt);
    REQUIRE(got.shape() == ref.shape());
    for (std::int64_t i = 0; i < ref.numel(); ++i) CHECK(std::abs(got[i] - ref[i]) < 1e-6);

    // Single-precision path against the same reference.
    const auto gotf = kernels::conv3d_forward(x.cast<float>(), w.cast<float>(), nullptr, opt);
    for (std::int64_t i = 0; i < ref.numel(); ++i) CHECK(std::abs(gotf[i] - ref[i]) < 1e-4);
  }
}

TEST_CASE("conv3d shape errors name the axis") {
  Graph<double> g;
  const Var x = g.constant(Tensor<double>({2, 4, 4, 4}));
  const Var w = g.constant(Tensor<double>({1, 3, 3, 3, 3}));
  CHECK_THROWS_WITH_AS(conv3d(g, x, w, Var{}), doctest::Contains("channel axis"), ShapeError);
  const Var big = g.constant(Tensor<double>({1, 2, 5, 3, 3}));
  CHECK_THROWS_WITH_AS(conv3d(g, x, big, Var{}), doctest::Contains("axis D"), ShapeError);
}

TEST_CASE("relu, maxpool3d, upsample3d") {
  Graph<double> g;
  const Var r = relu(g, g.constant(Tensor<double>({3}, std::vector<double>{-1, 0, 2})));
  CHECK(g.value(r).storage() == std::vector<double>{0, 0, 2});

  Tensor<double> block({1, 2, 2, 2});
  for (int i = 0; i < 8; ++i) block[i] = i + 1;
  CHECK(g.value(maxpool3d(g, g.constant(block)))[0] == 8.0);

  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>({3, 2, 3, 4}, rng);
  const Var back = maxpool3d(g, upsample3d(g, g.constant(x)));
  CHECK(g.value(back) == x);

  CHECK_THROWS_AS(maxpool3d(g, g.constant(Tensor<double>({1, 3, 2, 2}))), ShapeError);
  CHECK_THROWS_AS(add(g, g.constant(Tensor<double>({2})), g.constant(Tensor<double>({3}))),
                  ShapeError);
  CHECK_THROWS_AS(mul(g, g.constant(Tensor<double>({2, 2, 2, 2})),
                      g.constant(Tensor<double>({2, 2, 2, 1}))),
                  ShapeError);
}

TEST_CASE("grad_check of sum(sigmoid(x))") {
  std::mt19937_64 rng(11);
  const auto x = random_tensor<double>({8}, rng, -2, 2);
  const double err = grad_check([](Graph<double>& g, Var v) { return reduce_sum(g, sigmoid(g, v)); },
                                x, 1e-5);
  CHECK(err < 1e-7);
}

TEST_CASE("grad_check reports non-finite functions") {
  const Tensor<double> x({2}, 1.0);
  CHECK_THROWS_AS(grad_check([](Graph<double>& g, Var v) {
                    return reduce_sum(g, scale(g, v, std::numeric_limits<double>::infinity()));
                  }, x, 1e-5),
                  NumericError);
}

TEST_CASE("adjoint correctness of every primitive, randomized") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> small(1, 3);
  constexpr int kTrials = 100;
  double worst = 0.0;
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::int64_t c = small(rng), d = 2 * small(rng), h = 2 * small(rng), w = 2 * small(rng);
    const Shape s{c, d, h, w};
    const auto other = random_tensor<double>(s, rng);
    const auto gate = random_tensor<double>({1, d, h, w}, rng);
    const auto kernel = random_tensor<double>({2, c, 3, 3, 3}, rng);
    const auto bias = random_tensor<double>({2}, rng);
    const auto x = spaced_tensor(s, rng);
    const std::uint64_t seed = rng();
    const double step = 1e-4;

    std::vector<std::pair<std::function<Var(Graph<double>&, Var)>, Shape>> ops = {
        {[](Graph<double>& g, Var v) { return sigmoid(g, v); }, s},
        {[](Graph<double>& g, Var v) { return relu(g, v); }, s},
        {[](Graph<double>& g, Var v) { return maxpool3d(g, v); }, {c, d / 2, h / 2, w / 2}},
        {[](Graph<double>& g, Var v) { return upsample3d(g, v); }, {c, 2 * d, 2 * h, 2 * w}},
        {[&](Graph<double>& g, Var v) {
           const Var parts[] = {v, g.constant(other), v};
           return concat<double>(g, parts);
         },
         {3 * c, d, h, w}},
        {[&](Graph<double>& g, Var v) { return add(g, v, g.constant(other)); }, s},
        {[&](Graph<double>& g, Var v) { return mul(g, v, g.constant(other)); }, s},
        {[&](Graph<double>& g, Var v) { return mul(g, v, g.constant(gate)); }, s},
        {[](Graph<double>& g, Var v) { return mul(g, v, v); }, s},
        {[](Graph<double>& g, Var v) { return scale(g, v, -2.5); }, s},
        {[](Graph<double>& g, Var v) { return reduce_sum(g, v); }, {1}},
        {[&](Graph<double>& g, Var v) {
           Conv3dOptions opt;
           opt.padding = {1, 1, 1};
           return conv3d(g, v, g.constant(kernel), g.constant(bias), opt);
         },
         {2, d, h, w}},
    };
    for (std::size_t k = 0; k < ops.size(); ++k) {
      const auto rep = grad_check_report(probe(ops[k].first, ops[k].second, seed + k), x, step);
      const double err = rep.max_rel_error;
      CHECK_MESSAGE(err < 1e-6, "op " << k << " trial " << trial << " a=" << rep.analytic << " n=" << rep.numeric);
      worst = std::max(worst, err);
    }
    // Kernel, bias and broadcast-operand adjoints.
    const auto xin = random_tensor<double>(s, rng);
    Conv3dOptions opt;
    opt.padding = {1, 1, 1};
    opt.stride = trial % 3 == 0 ? 2 : 1;
    const Shape conv_out = kernels::conv3d_output_shape(s, kernel.shape(), opt);
    const double ek = grad_check(
        probe([&](Graph<double>& g, Var k) { return conv3d(g, g.constant(xin), k, g.constant(bias), opt); },
              conv_out, seed + 100),
        kernel, step);
    const double eb = grad_check(
        probe([&](Graph<double>& g, Var b) { return conv3d(g, g.constant(xin), g.constant(kernel), b, opt); },
              conv_out, seed + 101),
        bias, step);
    const double eg = grad_check(
        probe([&](Graph<double>& g, Var v) { return mul(g, g.constant(xin), v); }, s, seed + 102),
        gate, step);
    CHECK(ek < 1e-6);
    CHECK(eb < 1e-6);
    CHECK(eg < 1e-6);
  }
  MESSAGE("worst primitive adjoint error " << worst);
}

TEST_CASE("backward is linear in the seeded function") {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({2, 4, 4, 4}, rng);
  const auto kernel = random_tensor<double>({3, 2, 3, 3, 3}, rng);
  Conv3dOptions opt;
  opt.padding = {1, 1, 1};
  auto f = [&](Graph<double>& g, Var v) { return reduce_sum(g, sigmoid(g, conv3d(g, v, g.constant(kernel), Var{}, opt))); };
  auto h = [&](Graph<double>& g, Var v) { return reduce_sum(g, mul(g, relu(g, v), v)); };
  auto grad_of = [&](auto fn) {
    Graph<double> g;
    const Var v = g.leaf(x);
    g.backward(fn(g, v));
    return g.grad(v);
  };
  const double a = 0.7, b = -1.3;
  const auto gf = grad_of(f);
  const auto gh = grad_of(h);
  const auto gc = grad_of([&](Graph<double>& g, Var v) {
    return add(g, scale(g, f(g, v), a), scale(g, h(g, v), b));
  });
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(std::abs(gc[i] - (a * gf[i] + b * gh[i])) < 1e-10);
}

TEST_CASE("forward ops are deterministic") {
  std::mt19937_64 rng(9);
  const auto x = random_tensor<float>({4, 8, 8, 8}, rng);
  const auto w = random_tensor<float>({8, 4, 3, 3, 3}, rng);
  Conv3dOptions opt;
  opt.padding = {1, 1, 1};
  const auto y1 = kernels::conv3d_forward(x, w, nullptr, opt);
  const auto y2 = kernels::conv3d_forward(x, w, nullptr, opt);
  CHECK(y1 == y2);
}

TEST_CASE("intermediate gradients are released unless retained") {
  Graph<double> g;
  const Var x = g.leaf(Tensor<double>({2}, 1.0));
  const Var y = scale(g, x, 3.0);
  const Var z = reduce_sum(g, y);
  g.backward(z, 1.0, true);
  CHECK(g.grad(y)[0] == 1.0);
  CHECK(g.grad(x)[1] == 3.0);
  g.zero_grad();
  g.backward(z);
  CHECK(g.grad(y)[0] == 0.0);
  CHECK(g.grad(x)[0] == 3.0);
  CHECK_THROWS_AS(g.backward(y), ShapeError);
}

}
