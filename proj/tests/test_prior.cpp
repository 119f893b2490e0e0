#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mica/causal/pcmci.hpp"
#include "mica/errors.hpp"
#include "mica/prior.hpp"
#include "support.hpp"

using namespace mica;
using causal::CausalTensor;
using nd::Matrix;
using prior::PriorOptions;

namespace {

std::vector<std::string> ids(std::size_t c) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < c; ++i) out.push_back("r" + std::to_string(i));
  return out;
}

// Roughly a third of the entries significant, vals in [-1, 1].
CausalTensor random_tensor(std::size_t c, std::size_t tau, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> v(-1.0, 1.0);
  std::uniform_real_distribution<double> p(0.0, 0.15);
  CausalTensor t(ids(c), tau, 0.2);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t lag = 1; lag <= tau; ++lag) t.set(i, j, lag, v(rng), p(rng));
  return t;
}

// Naive Sp: explicit exp/sum per (i, j), no max-subtraction.
Matrix triple_loop(const CausalTensor& t, double alpha, double kappa, bool masked = true) {
  const std::size_t c = t.regions();
  Matrix s(c, c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      double z = 0.0;
      for (std::size_t lag = 1; lag <= t.tau_max(); ++lag) z += std::exp(std::abs(t.val(i, j, lag)) / kappa);
      double acc = 0.0;
      for (std::size_t lag = 1; lag <= t.tau_max(); ++lag) {
        const double w = std::exp(std::abs(t.val(i, j, lag)) / kappa) / z;
        const double ind = (!masked || t.pval(i, j, lag) < alpha) ? 1.0 : 0.0;
        acc += w * ind * std::abs(t.val(i, j, lag));
      }
      s(i, j) = acc;
    }
  }
  return s;
}

}  // namespace

TEST_CASE("lag weights") {
  const std::vector<double> eq{0.4, 0.4, 0.4, 0.4};
  for (double w : prior::lag_weights(eq, 1.0)) CHECK(w == doctest::Approx(0.25).epsilon(1e-15));

  const std::vector<double> one{-0.9};
  CHECK(prior::lag_weights(one, 0.5) == std::vector<double>{1.0});

  const std::vector<double> two{0.2, 0.8};
  const auto w = prior::lag_weights(two, 1.0);
  const double e2 = std::exp(0.2), e8 = std::exp(0.8);
  CHECK(std::abs(w[0] - e2 / (e2 + e8)) < 1e-15);
  CHECK(std::abs(w[0] - 0.3543) < 1e-4);
  CHECK(std::abs(w[1] - 0.6457) < 1e-4);

  // sign = -1 on raw values is the literal exp(-Val/κ) kernel.
  const std::vector<double> mixed{-0.5, 0.3};
  const auto lit = prior::lag_weights(mixed, 2.0, -1, false);
  const double a = std::exp(0.25), b = std::exp(-0.15);
  CHECK(std::abs(lit[0] - a / (a + b)) < 1e-15);

  // Overflow safety.
  const std::vector<double> big{800.0, 801.0};
  const auto wb = prior::lag_weights(big, 1.0);
  CHECK(std::isfinite(wb[0]));
  CHECK(std::abs(wb[1] - 1.0 / (1.0 + std::exp(-1.0))) < 1e-14);

  CHECK_THROWS_AS(prior::lag_weights(two, 0.0), ConfigError);
}

TEST_CASE("lag weights form a probability vector") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> v(-3.0, 3.0);
  std::uniform_real_distribution<double> k(0.05, 5.0);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> vals(1 + rep % 8);
    for (double& x : vals) x = v(rng);
    const int sign = rep % 2 ? 1 : -1;
    const auto w = prior::lag_weights(vals, k(rng), sign, rep % 3 != 0);
    double sum = 0.0;
    for (double x : w) {
      CHECK(x >= 0.0);
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("build_prior examples") {
  CausalTensor t(ids(3), 2, 0.2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t lag = 1; lag <= 2; ++lag) t.set(i, j, lag, 0.7, 0.05);
  const auto zero = prior::build_prior(t, {});
  CHECK(zero.s == Matrix(3, 3));
  CHECK(zero.kind == prior::PriorKind::pcmci);

  CausalTensor single(ids(3), 1, 0.2);
  single.set(2, 0, 1, -0.6, 0.001);
  const auto p = prior::build_prior(single, {});
  Matrix expect(3, 3);
  expect(2, 0) = 0.6;
  CHECK(p.s == expect);

  CHECK_THROWS_AS(prior::build_prior(single, {.alpha = 1.0}), ConfigError);
  CHECK_THROWS_AS(prior::build_prior(single, {.kappa = -1.0}), ConfigError);
}

TEST_CASE("build_prior matches the triple loop") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t c = 1 + rep % 6;
    const std::size_t tau = 1 + (rep / 6) % 5;
    const auto t = random_tensor(c, tau, rng);
    const double kappa = 0.25 + 0.5 * (rep % 4);
    const auto p = prior::build_prior(t, {.alpha = 0.05, .kappa = kappa});
    CHECK(nd::max_abs_diff(p.s, triple_loop(t, 0.05, kappa)) < 1e-12);
    for (double x : p.s.data()) CHECK(x >= 0.0);
  }
  std::mt19937_64 rng3(3);
  const auto t = random_tensor(3, 4, rng3);
  CHECK(nd::max_abs_diff(prior::build_prior(t, {}).s, triple_loop(t, 0.05, 1.0)) < 1e-12);
}

TEST_CASE("masking only removes mass") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    const auto t = random_tensor(4, 3, rng);
    const Matrix unmasked = triple_loop(t, 0.05, 1.0, false);
    const Matrix lo = prior::build_prior(t, {.alpha = 0.01}).s;
    const Matrix hi = prior::build_prior(t, {.alpha = 0.1}).s;
    for (std::size_t k = 0; k < lo.size(); ++k) {
      CHECK(lo[k] <= hi[k] + 1e-15);
      CHECK(hi[k] <= unmasked[k] + 1e-15);
    }
  }
}

TEST_CASE("scaling val with kappa is homogeneous") {
  std::mt19937_64 rng(9);
  for (double scale : {0.5, 2.0, 3.7}) {
    const auto t = random_tensor(4, 3, rng);
    CausalTensor scaled(t.region_ids(), t.tau_max(), t.alpha_pc());
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t lag = 1; lag <= 3; ++lag) scaled.set(i, j, lag, scale * t.val(i, j, lag), t.pval(i, j, lag));
    const Matrix base = prior::build_prior(t, {.kappa = 1.0}).s;
    const Matrix sc = prior::build_prior(scaled, {.kappa = scale}).s;
    CHECK(nd::max_abs_diff(sc, base * scale) < 1e-10);
  }
}

TEST_CASE("prior is reproducible from the serialized tensor") {
  std::mt19937_64 rng(21);
  const auto t = random_tensor(4, 3, rng);
  const auto p = prior::build_prior(t, {});
  const auto t2 = CausalTensor::from_json(nlohmann::json::parse(t.to_json().dump()));
  const auto p2 = prior::build_prior(t2, {});
  CHECK(p2.s == p.s);
  CHECK(p2.provenance == p.provenance);
  CHECK(p.provenance.rfind("tensor:", 0) == 0);

  auto t3 = t2;
  t3.set(0, 1, 1, t3.val(0, 1, 1) + 1e-9, t3.pval(0, 1, 1));
  CHECK(prior::tensor_provenance(t3) != p.provenance);
}

TEST_CASE("prior JSON round trip") {
  std::mt19937_64 rng(2);
  const auto p = prior::build_prior(random_tensor(3, 2, rng), {.alpha = 0.1, .kappa = 0.5, .sign = -1});
  const auto j = p.to_json();
  for (const char* key : {"region_ids", "kind", "alpha", "kappa", "sign", "s", "provenance"}) CHECK(j.contains(key));
  const auto q = prior::PriorMatrix::from_json(nlohmann::json::parse(j.dump()));
  CHECK(q.s == p.s);
  CHECK(q.kind == p.kind);
  CHECK(q.options.alpha == 0.1);
  CHECK(q.options.kappa == 0.5);
  CHECK(q.options.sign == -1);
  CHECK(q.region_ids == p.region_ids);
  CHECK(q.provenance == p.provenance);

  auto bad = j;
  bad["s"][0][0] = -1.0;
  CHECK_THROWS_AS(prior::PriorMatrix::from_json(bad), ShapeError);
  bad = j;
  bad["s"].erase(1);
  CHECK_THROWS_AS(prior::PriorMatrix::from_json(bad), ShapeError);
  bad = j;
  bad["kind"] = "granger";
  CHECK_THROWS_AS(prior::PriorMatrix::from_json(bad), ConfigError);
}

TEST_CASE("identity prior") {
  const auto p = prior::identity_prior(ids(5));
  CHECK(p.s == Matrix::identity(5));
  CHECK(p.kind == prior::PriorKind::identity);
  CHECK(p.region_ids.size() == 5);
}

TEST_CASE("pearson prior") {
  // Textbook formula on a fixed 5×3 panel.
  const Matrix x = Matrix::from_rows({{1.0, 2.0, 0.5}, {2.0, 1.0, -1.0}, {4.0, 3.5, 0.0}, {3.0, 5.0, 2.0}, {0.5, 0.0, 1.5}});
  causal::StationaryPanel panel{x, ids(3), 0, 5};
  const auto p = prior::pearson_prior(panel);
  CHECK(p.kind == prior::PriorKind::pearson);
  for (std::size_t a = 0; a < 3; ++a) {
    CHECK(p.s(a, a) == 1.0);
    for (std::size_t b = 0; b < 3; ++b) {
      if (a == b) continue;
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t t = 0; t < 5; ++t) {
        sx += x(t, a);
        sy += x(t, b);
        sxx += x(t, a) * x(t, a);
        syy += x(t, b) * x(t, b);
        sxy += x(t, a) * x(t, b);
      }
      const double r = (5 * sxy - sx * sy) / std::sqrt((5 * sxx - sx * sx) * (5 * syy - sy * sy));
      CHECK(std::abs(p.s(a, b) - std::abs(r)) < 1e-12);
      CHECK(p.s(a, b) == p.s(b, a));
    }
  }

  Matrix same(50, 2);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (std::size_t t = 0; t < 50; ++t) same(t, 0) = same(t, 1) = n(rng);
  CHECK(prior::pearson_prior({same, ids(2), 0, 50}).s(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

  Matrix flat(10, 2, 1.0);
  for (std::size_t t = 0; t < 10; ++t) flat(t, 0) = static_cast<double>(t);
  CHECK_THROWS_AS(prior::pearson_prior({flat, ids(2), 0, 10}), DegenerateSeriesError);
  CHECK_THROWS_AS(prior::pearson_prior({Matrix(2, 2), ids(2), 0, 2}), InsufficientDataError);
}

TEST_CASE("pearson prior on independent columns") {
  int small = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix x = test::gaussian_matrix(5000, 4, rng);
    const auto p = prior::pearson_prior({x, ids(4), 0, 5000});
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = a + 1; b < 4; ++b) {
        ++total;
        small += p.s(a, b) < 0.06;
      }
  }
  CHECK(small >= 0.95 * total);
}

TEST_CASE("spectral norm") {
  CHECK(prior::spectral_norm(Matrix::identity(4)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(prior::spectral_norm(Matrix::from_rows({{3.0, 0.0}, {0.0, 1.0}})) - 3.0) < 1e-9);
  CHECK(prior::spectral_norm(Matrix(3, 3)) == 0.0);
  CHECK_THROWS_AS(prior::spectral_norm(Matrix::identity(2), 0), ConfigError);

  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t rows = rep < 25 ? 5 : 3 + rep % 4;
    const std::size_t cols = rep < 25 ? 5 : 2 + rep % 5;
    const Matrix m = test::random_matrix(rows, cols, rng, rep % 2 ? 0.0 : -1.0, 1.0);
    Eigen::MatrixXd e(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) e(r, c) = m(r, c);
    const double oracle = Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues()(0);
    CHECK(std::abs(prior::spectral_norm(m) - oracle) < 1e-7);
  }
}
