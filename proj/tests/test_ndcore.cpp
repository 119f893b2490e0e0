#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <vector>

#include "mica/errors.hpp"
#include "mica/grad_check.hpp"
#include "mica/init.hpp"
#include "mica/ops.hpp"
#include "support.hpp"

using namespace mica;
using nd::Matrix;
using nd::Param;
using nd::Tape;
using nd::Var;
using test::random_matrix;
using test::random_param;

namespace {

// Random projection to a scalar so symmetric outputs do not hide gradient errors.
Var project(Tape& tape, Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed + 7919);
  return nd::sum(nd::mul(v, tape.constant(random_matrix(v.rows(), v.cols(), rng))));
}

double check(const nd::LossBuilder& f, std::vector<Param*> params) {
  return nd::grad_check(f, params);
}

constexpr int kSeeds = 20;
constexpr double kPrimitiveTol = 1e-5;

}  // namespace

TEST_CASE("affine examples") {
  Tape tape;
  Var x = tape.constant(Matrix::identity(2));
  Var w = tape.constant(Matrix::from_rows({{2, 0}, {0, 3}}));
  CHECK(nd::affine(x, w).value() == Matrix::from_rows({{2, 0}, {0, 3}}));

  std::mt19937_64 rng(1);
  Var z = tape.constant(Matrix(3, 4));
  Var w2 = tape.constant(random_matrix(5, 4, rng));
  CHECK(nd::affine(z, w2).value() == Matrix(3, 5));

  Var bad = tape.constant(Matrix(3, 3));
  CHECK_THROWS_AS(nd::affine(z, bad), ShapeError);
  try {
    nd::affine(z, bad);
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("3x4") != std::string::npos);
    CHECK(msg.find("3x3") != std::string::npos);
  }
}

TEST_CASE("affine is linear without bias") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x = random_matrix(3, 4, rng), y = random_matrix(3, 4, rng), w = random_matrix(2, 4, rng);
    const double a = 1.7, b = -0.3;
    Tape tape;
    Var lhs = nd::affine(tape.constant(x * a + y * b), tape.constant(w));
    Matrix rhs = nd::affine(tape.constant(x), tape.constant(w)).value() * a +
                 nd::affine(tape.constant(y), tape.constant(w)).value() * b;
    CHECK(nd::max_abs_diff(lhs.value(), rhs) < 1e-12);
  }
}

TEST_CASE("sum of affine passes the finite-difference check") {
  std::mt19937_64 rng(5);
  Param x = random_param("x", 3, 4, rng), w = random_param("w", 2, 4, rng), b = random_param("b", 1, 2, rng);
  auto f = [&](Tape& t) { return nd::sum(nd::affine(t.param(x), t.param(w), t.param(b))); };
  CHECK(check(f, {&x, &w, &b}) < 1e-6);
}

TEST_CASE("primitive gradients match central differences over 20 seeds") {
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    Param a = random_param("a", 3, 4, rng), b = random_param("b", 3, 4, rng);
    Param w = random_param("w", 5, 4, rng), bias = random_param("bias", 1, 5, rng);
    Param sq = random_param("sq", 4, 2, rng), s = random_param("s", 1, 1, rng);
    Param tab = random_param("tab", 2, 4, rng);
    Param a4 = random_param("a4", 4, 4, rng);
    Param gain = random_param("gain", 1, 4, rng), lnb = random_param("lnb", 1, 4, rng);

    CHECK(check([&](Tape& t) { return project(t, nd::affine(t.param(a), t.param(w), t.param(bias)), seed); },
                {&a, &w, &bias}) < kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::matmul(t.param(a), t.param(sq)), seed); }, {&a, &sq}) <
          kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::add(t.param(a), t.param(b)), seed); }, {&a, &b}) <
          kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::sub(t.param(a), t.param(b)), seed); }, {&a, &b}) <
          kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::mul(t.param(a), t.param(b)), seed); }, {&a, &b}) <
          kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::scale(t.param(a), -2.5), seed); }, {&a}) < kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::scale_by(t.param(a), t.param(s)), seed); }, {&a, &s}) <
          kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::add_tiled(t.param(a4), t.param(tab)), seed); },
                {&a4, &tab}) < kPrimitiveTol);
    for (auto kind : {nd::Activation::softplus, nd::Activation::sigmoid, nd::Activation::gelu,
                      nd::Activation::relu}) {
      CHECK(check([&](Tape& t) { return project(t, nd::pointwise(t.param(a), kind), seed); }, {&a}) <
            kPrimitiveTol);
    }
    CHECK(check([&](Tape& t) {
            return project(t, nd::layer_norm(t.param(a), t.param(gain), t.param(lnb)), seed);
          },
                {&a, &gain, &lnb}) < kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::dropout(t.param(a), 0.3), seed); }, {&a}) <
          kPrimitiveTol);
    Param m3 = random_param("m3", 3, 3, rng), z = random_param("z", 6, 2, rng);
    CHECK(check([&](Tape& t) { return project(t, nd::block_left_mul(t.param(m3), t.param(z)), seed); },
                {&m3, &z}) < kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::slice_cols(t.param(a), 1, 2), seed); }, {&a}) <
          kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::concat_cols({t.param(a), t.param(b)}), seed); },
                {&a, &b}) < kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::reshape(t.param(a), 6, 2), seed); }, {&a}) <
          kPrimitiveTol);
    Param x7 = random_param("x7", 2, 7, rng);
    CHECK(check([&](Tape& t) { return project(t, nd::unfold_patches(t.param(x7), 4, 2), seed); }, {&x7}) <
          kPrimitiveTol);
    Param q = random_param("q", 6, 2, rng), k = random_param("k", 6, 2, rng), v = random_param("v", 6, 2, rng);
    CHECK(check([&](Tape& t) {
            return project(t, nd::grouped_attention(t.param(q), t.param(k), t.param(v), 3), seed);
          },
                {&q, &k, &v}) < kPrimitiveTol);
    Param g0 = random_param("g0", 3, 4, rng), g1 = random_param("g1", 3, 4, rng);
    CHECK(check([&](Tape& t) {
            std::vector<Var> ws{t.param(g0), t.param(g1)};
            return project(t, nd::grouped_affine(t.param(a4), ws), seed);
          },
                {&a4, &g0, &g1}) < kPrimitiveTol);
    CHECK(check([&](Tape& t) { return nd::mean(t.param(a)); }, {&a}) < kPrimitiveTol);
    CHECK(check([&](Tape& t) { return project(t, nd::square(t.param(a)), seed); }, {&a}) < kPrimitiveTol);
    CHECK(check([&](Tape& t) { return nd::abs_sum(t.param(a)); }, {&a}) < kPrimitiveTol);
    const Matrix target = random_matrix(3, 4, rng);
    CHECK(check([&](Tape& t) { return nd::mse(t.param(a), target); }, {&a}) < kPrimitiveTol);
  }
}

TEST_CASE("layer_norm examples") {
  Tape tape;
  Var gain = tape.constant(Matrix(1, 3, 1.0));
  Var bias = tape.constant(Matrix(1, 3));
  CHECK(nd::layer_norm(tape.constant(Matrix::from_rows({{5, 5, 5}})), gain, bias).value() == Matrix(1, 3));

  // With eps = 1e-5 the variance of [1,2,3] normalizes to (2/3)/(2/3 + 1e-5), off 1 by 1.5e-5;
  // the exact formula and a tiny eps are both checked.
  const Matrix out = nd::layer_norm(tape.constant(Matrix::from_rows({{1, 2, 3}})), gain, bias).value();
  const double mean = (out[0] + out[1] + out[2]) / 3.0;
  double var = 0.0;
  for (double v : out.data()) var += (v - mean) * (v - mean);
  var /= 3.0;
  CHECK(std::abs(mean) < 1e-12);
  CHECK(var == doctest::Approx((2.0 / 3.0) / (2.0 / 3.0 + 1e-5)).epsilon(1e-12));

  const Matrix tight = nd::layer_norm(tape.constant(Matrix::from_rows({{1, 2, 3}})), gain, bias, 1e-12).value();
  double var_tight = 0.0;
  for (double v : tight.data()) var_tight += v * v;
  CHECK(std::abs(var_tight / 3.0 - 1.0) < 1e-6);
}

TEST_CASE("layer_norm is shift invariant per row") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x = random_matrix(4, 6, rng);
    Matrix shifted = x;
    std::uniform_real_distribution<double> u(-10, 10);
    for (std::size_t r = 0; r < 4; ++r) {
      const double c = u(rng);
      for (double& v : shifted.row(r)) v += c;
    }
    Tape tape;
    Var g = tape.constant(random_matrix(1, 6, rng)), b = tape.constant(random_matrix(1, 6, rng));
    CHECK(nd::max_abs_diff(nd::layer_norm(tape.constant(x), g, b).value(),
                           nd::layer_norm(tape.constant(shifted), g, b).value()) < 1e-9);
  }
}

TEST_CASE("pointwise closed forms") {
  CHECK(nd::softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(nd::sigmoid(0.0) == 0.5);
  CHECK(std::abs(nd::softplus(50.0) - (50.0 + std::log1p(std::exp(-50.0)))) < 1e-9);
  CHECK(std::isfinite(nd::softplus(1000.0)));
  CHECK(nd::softplus(-700.0) > 0.0);
  CHECK(nd::sigmoid(-800.0) >= 0.0);
  CHECK(nd::sigmoid(800.0) <= 1.0);
  CHECK(nd::gelu(0.0) == 0.0);
  CHECK(nd::gelu(1.0) == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))).epsilon(1e-15));

  std::mt19937_64 rng(2);
  Tape tape;
  Var x = tape.constant(random_matrix(5, 5, rng, -30, 30));
  for (double v : nd::pointwise(x, nd::Activation::softplus).value().data()) CHECK(v > 0.0);
  Var y = tape.constant(random_matrix(5, 5, rng, -5, 5));
  for (double v : nd::pointwise(y, nd::Activation::sigmoid).value().data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("inverted dropout preserves expectation") {
  const double rate = 0.3;
  Tape tape(true, 42);
  const std::size_t n = 100000;
  Var out = nd::dropout(tape.constant(Matrix(1, n, 1.0)), rate);
  double mean = 0.0;
  for (double v : out.value().data()) mean += v;
  mean /= static_cast<double>(n);
  const double keep = 1.0 - rate;
  const double sigma = std::sqrt((1.0 / keep - 1.0) / static_cast<double>(n));
  CHECK(std::abs(mean - 1.0) < 3.0 * sigma);

  Tape eval(false);
  Matrix ones(2, 3, 1.0);
  CHECK(nd::dropout(eval.constant(ones), rate).value() == ones);
}

TEST_CASE("backward replays in reverse and leaves unused params at zero") {
  std::mt19937_64 rng(4);
  Param used = random_param("used", 2, 2, rng), unused = random_param("unused", 2, 2, rng);
  used.grad.fill(3.0);
  used.zero_grad();
  for (double g : used.grad.data()) CHECK(g == 0.0);

  Tape tape;
  Var u = tape.param(used);
  tape.param(unused);
  Var a = nd::pointwise(u, nd::Activation::gelu);
  Var b = nd::square(a);
  Var loss = nd::sum(nd::add(a, b));
  tape.backward(loss);
  const auto& order = tape.last_backward_order();
  REQUIRE(order.size() >= 4);
  for (std::size_t i = 1; i < order.size(); ++i) CHECK(order[i] < order[i - 1]);
  for (double g : unused.grad.data()) CHECK(g == 0.0);
  bool any = false;
  for (double g : used.grad.data()) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("matrix invariants and helpers") {
  Matrix m(3, 4);
  CHECK(m.data().size() == 12);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  std::mt19937_64 rng(9);
  Matrix a = random_matrix(3, 5, rng), b = random_matrix(4, 5, rng), c = random_matrix(3, 4, rng);
  CHECK(nd::max_abs_diff(nd::matmul_bt(a, b), nd::matmul(a, b.transpose())) < 1e-14);
  CHECK(nd::max_abs_diff(nd::matmul_at(a, c), nd::matmul(a.transpose(), c)) < 1e-14);
  CHECK_THROWS_AS(nd::matmul(a, a), ShapeError);
}

TEST_CASE("glorot init is deterministic and bounded") {
  Param p1 = nd::make_weight("w", 8, 5, 123);
  Param p2 = nd::make_weight("w", 8, 5, 123);
  Param p3 = nd::make_weight("w", 8, 5, 124);
  CHECK(p1.value == p2.value);
  CHECK_FALSE(p1.value == p3.value);
  const double bound = std::sqrt(6.0 / 13.0);
  for (double v : p1.value.data()) CHECK(std::abs(v) <= bound);
}
