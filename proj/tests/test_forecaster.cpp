#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "mica/errors.hpp"
#include "mica/forecaster.hpp"
#include "mica/grad_check.hpp"
#include "mica/ops.hpp"
#include "support.hpp"

using namespace mica;
using forecast::BackboneKind;
using forecast::ForecastBatch;
using forecast::Forecaster;
using forecast::ModelConfig;
using nd::Matrix;
using nd::Tape;

namespace {

ModelConfig small_model(BackboneKind kind, std::size_t regions, bool adapter = true) {
  ModelConfig cfg;
  cfg.backbone = kind;
  cfg.regions = regions;
  cfg.lookback = 7;
  cfg.horizon = 3;
  cfg.d_model = 4;
  cfg.patch.d_model = 4;
  cfg.patch.n_heads = 2;
  cfg.patch.n_blocks = 1;
  cfg.patch.d_ff = 6;
  cfg.patch.dropout = 0.0;
  cfg.adapter.enabled = adapter;
  cfg.adapter.theta_init = 0.1;
  return cfg;
}

ForecastBatch random_batch(std::size_t samples, std::size_t regions, std::size_t lookback, std::size_t horizon,
                           std::mt19937_64& rng) {
  ForecastBatch b;
  b.samples = samples;
  b.inputs = test::gaussian_matrix(samples * regions, lookback, rng);
  b.targets = test::gaussian_matrix(samples * regions, horizon, rng);
  return b;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("fuse") {
  Forecaster m(small_model(BackboneKind::rnf, 3), 1);
  std::mt19937_64 rng(1);
  const std::size_t flat = 2 * 4;
  const Matrix enc = test::gaussian_matrix(6, flat, rng);
  const Matrix z = test::gaussian_matrix(6, 4, rng);
  Tape tape;
  const Matrix proj = m.fuse(tape, tape.constant(enc), tape.constant(Matrix(6, 4))).value();
  for (std::size_t r = 0; r < 6; ++r) {
    const Matrix& w = m.region_proj[r % 3].value;
    for (std::size_t k = 0; k < 4; ++k) {
      double acc = 0.0;
      for (std::size_t f = 0; f < flat; ++f) acc += w(k, f) * enc(r, f);
      CHECK(std::abs(proj(r, k) - acc) < 1e-12);
    }
  }
  for (auto& p : m.region_proj) p.value.fill(0.0);
  CHECK(m.fuse(tape, tape.constant(enc), tape.constant(z)).value() == z);

  CHECK_THROWS_AS(m.fuse(tape, tape.constant(Matrix(5, flat)), tape.constant(z)), ConfigError);
  CHECK_THROWS_AS(m.fuse(tape, tape.constant(enc), tape.constant(Matrix(6, 3))), ConfigError);

  Forecaster g(small_model(BackboneKind::rnf, 3), 2);
  std::vector<nd::Param*> ps;
  for (auto& p : g.region_proj) ps.push_back(&p);
  const double err = nd::grad_check(
      [&](Tape& t) { return nd::sum(nd::square(g.fuse(t, t.constant(enc), t.constant(z)))); }, ps);
  CHECK(err < 1e-6);
}

TEST_CASE("decode") {
  ModelConfig cfg = small_model(BackboneKind::rnf, 2);
  Forecaster m(cfg, 3);
  Tape tape;
  CHECK(m.decode(tape, tape.constant(Matrix(4, 4))).value() == Matrix(4, 3));

  cfg.horizon = 1;
  Forecaster one(cfg, 3);
  std::mt19937_64 rng(3);
  const Matrix o = test::gaussian_matrix(4, 4, rng);
  one.decoder_b.value(0, 0) = 0.25;
  const Matrix y = one.decode(tape, tape.constant(o)).value();
  REQUIRE(y.cols() == 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double dot = 0.25;
    for (std::size_t k = 0; k < 4; ++k) dot += o(r, k) * one.decoder_w[0].value(0, k);
    CHECK(std::abs(y(r, 0) - dot) < 1e-14);
  }

  cfg.horizon = 3;
  cfg.per_region_decoder = true;
  Forecaster per(cfg, 4);
  REQUIRE(per.decoder_w.size() == 2);
  per.decoder_b.value = test::gaussian_matrix(2, 3, rng);
  std::vector<nd::Param*> ps{&per.decoder_w[0], &per.decoder_w[1], &per.decoder_b};
  const Matrix target = test::gaussian_matrix(4, 3, rng);
  CHECK(nd::grad_check([&](Tape& t) { return nd::mse(per.decode(t, t.constant(o)), target); }, ps) < 1e-6);
  const Matrix yp = per.decode(tape, tape.constant(o)).value();
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t k = 0; k < 3; ++k) {
      double acc = per.decoder_b.value(r % 2, k);
      for (std::size_t d = 0; d < 4; ++d) acc += per.decoder_w[r % 2].value(k, d) * o(r, d);
      CHECK(std::abs(yp(r, k) - acc) < 1e-14);
    }
  }
}

TEST_CASE("toy DLinear model matches scalar arithmetic end to end") {
  ModelConfig cfg;
  cfg.backbone = BackboneKind::dlinear;
  cfg.regions = 2;
  cfg.lookback = 3;
  cfg.horizon = 2;
  cfg.ma_kernel = 3;
  cfg.d_model = 2;
  cfg.adapter.beta = 0.1;
  cfg.adapter.eta = 0.05;
  cfg.adapter.theta_init = -0.4;
  Forecaster m(cfg, 7);
  std::mt19937_64 rng(7);
  for (nd::Param* p : m.params()) p->value = test::random_matrix(p->value.rows(), p->value.cols(), rng, -0.8, 0.8);
  auto* ad = m.adapter();
  ad->layers[0].theta.value(0, 0) = -0.4;
  ad->layers[0].ln_gain.value = Matrix::from_rows({{1.2, 0.7}});

  const std::size_t S = 2, C = 2, L = 3, T = 2, D = 2;
  ForecastBatch batch;
  batch.samples = S;
  batch.inputs = test::gaussian_matrix(S * C, L, rng);
  batch.targets = test::gaussian_matrix(S * C, T, rng);
  const Matrix prior = Matrix::from_rows({{0.3, 0.9}, {0.0, 0.5}});

  // Gate.
  double g[2][2];
  for (std::size_t i = 0; i < C; ++i) {
    double h[2];
    for (std::size_t k = 0; k < C; ++k) {
      double a = ad->gate_hidden_b.value(0, k);
      for (std::size_t j = 0; j < C; ++j) a += ad->gate_hidden.value(k, j) * prior(i, j);
      h[k] = gelu(a);
    }
    for (std::size_t k = 0; k < C; ++k) {
      double a = ad->gate_out_b.value(0, k);
      for (std::size_t j = 0; j < C; ++j) a += ad->gate_out.value(k, j) * h[j];
      g[i][k] = sig(a);
    }
  }
  const double lam = std::log1p(std::exp(-0.4));

  double sq = 0.0;
  Matrix expect(S * C, T);
  for (std::size_t s = 0; s < S; ++s) {
    double z0[2][2];
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t d = 0; d < D; ++d) {
        z0[c][d] = 0.0;
        for (std::size_t l = 0; l < L; ++l) z0[c][d] += batch.inputs(s * C + c, l) * ad->spatial_w.value(l, d);
      }
    for (std::size_t i = 0; i < C; ++i) {
      const std::size_t row = s * C + i;
      const double* x = &batch.inputs(row, 0);
      const double trend[3] = {(x[0] + x[0] + x[1]) / 3, (x[0] + x[1] + x[2]) / 3, (x[1] + x[2] + x[2]) / 3};
      double zp[2] = {0.0, 0.0};
      for (std::size_t j = 0; j < C; ++j)
        for (std::size_t d = 0; d < D; ++d) zp[d] += g[i][j] * prior(i, j) * z0[j][d];
      double pre[2];
      for (std::size_t k = 0; k < D; ++k) {
        const auto& w = ad->layers[0].w_o.value;
        pre[k] = z0[i][k] + lam * (zp[0] * w(k, 0) + zp[1] * w(k, 1));
      }
      const double mu = 0.5 * (pre[0] + pre[1]);
      const double var = 0.25 * (pre[0] - pre[1]) * (pre[0] - pre[1]);
      double out[2];
      for (std::size_t k = 0; k < D; ++k)
        out[k] = ad->layers[0].ln_gain.value(0, k) * (pre[k] - mu) / std::sqrt(var + 1e-5) + ad->layers[0].ln_bias.value(0, k);
      for (std::size_t t = 0; t < T; ++t) {
        const auto* dl = m.dlinear();
        double y = dl->b_trend.value(0, t) + dl->b_seasonal.value(0, t);
        for (std::size_t l = 0; l < L; ++l)
          y += dl->w_trend.value(t, l) * trend[l] + dl->w_seasonal.value(t, l) * (x[l] - trend[l]);
        y += m.decoder_b.value(0, t);
        for (std::size_t d = 0; d < D; ++d) y += m.decoder_w[0].value(t, d) * out[d];
        expect(row, t) = y;
        sq += (y - batch.targets(row, t)) * (y - batch.targets(row, t));
      }
    }
  }
  const double l_pred = sq / static_cast<double>(S * C * T);
  const double l_lambda = 0.1 * lam * lam;
  const double l_sparse = 0.05 * (g[0][0] + g[0][1] + g[1][0] + g[1][1]);

  Tape tape;
  const auto parts = m.forward_loss(tape, batch, &prior);
  CHECK(nd::max_abs_diff(parts.prediction.value(), expect) < 1e-10);
  CHECK(std::abs(parts.pred.scalar() - l_pred) < 1e-10);
  CHECK(std::abs(parts.lambda.scalar() - l_lambda) < 1e-12);
  CHECK(std::abs(parts.sparse.scalar() - l_sparse) < 1e-12);
  CHECK(std::abs(parts.total.scalar() - (l_pred + l_lambda + l_sparse)) < 1e-10);
}

TEST_CASE("loss composition") {
  std::mt19937_64 rng(8);
  for (BackboneKind kind : {BackboneKind::rnf, BackboneKind::dlinear, BackboneKind::full_attention}) {
    Forecaster m(small_model(kind, 3), 8);
    ForecastBatch batch = random_batch(2, 3, 7, 3, rng);
    const Matrix prior = test::random_matrix(3, 3, rng, 0.0, 1.0);
    {
      Tape tape;
      batch.targets = m.predict(tape, batch.inputs, &prior).value();
    }
    Tape tape;
    const auto parts = m.forward_loss(tape, batch, &prior);
    CHECK(parts.pred.scalar() == 0.0);
    CHECK(parts.total.scalar() == parts.lambda.scalar() + parts.sparse.scalar());
    CHECK(parts.lambda.scalar() > 0.0);

    Forecaster plain(small_model(kind, 3, false), 8);
    CHECK_FALSE(plain.adapter_enabled());
    Tape t2;
    const auto pp = plain.forward_loss(t2, random_batch(2, 3, 7, 3, rng), nullptr);
    CHECK(pp.total.scalar() == pp.pred.scalar());
    CHECK(pp.lambda.scalar() == 0.0);
    CHECK(pp.sparse.scalar() == 0.0);
  }
}

TEST_CASE("plain DLinear carries no fusion parameters") {
  Forecaster m(small_model(BackboneKind::dlinear, 3, false), 0);
  CHECK(m.parameter_count() == backbone::DLinear::parameter_count(7, 3));
  CHECK(m.decoder_w.empty());
  CHECK(m.region_proj.empty());
}

TEST_CASE("theta receives gradient through the prediction loss") {
  std::mt19937_64 rng(9);
  for (BackboneKind kind : {BackboneKind::rnf, BackboneKind::dlinear}) {
    ModelConfig cfg = small_model(kind, 4);
    cfg.adapter.beta = 0.0;
    cfg.adapter.eta = 0.0;
    Forecaster m(cfg, 9);
    const ForecastBatch batch = random_batch(3, 4, 7, 3, rng);
    const Matrix prior = test::random_matrix(4, 4, rng, 0.1, 1.0);
    m.zero_grad();
    Tape tape;
    tape.backward(m.forward_loss(tape, batch, &prior).total);
    CHECK(std::abs(m.adapter()->layers[0].theta.grad(0, 0)) > 1e-8);
    CHECK(nd::frobenius_norm(m.adapter()->gate_out.grad) > 0.0);
  }
}

TEST_CASE("region permutation") {
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const std::size_t C = 4, S = 3;
  for (BackboneKind kind : {BackboneKind::rnf, BackboneKind::dlinear, BackboneKind::full_attention}) {
    for (bool with_adapter : {false, true}) {
      std::mt19937_64 rng(10);
      Forecaster a(small_model(kind, C, with_adapter), 10);
      Forecaster b(small_model(kind, C, with_adapter), 10);
      const Matrix x = test::gaussian_matrix(S * C, 7, rng);
      const Matrix prior = test::random_matrix(C, C, rng, 0.0, 1.0);
      Matrix xp(S * C, 7), pp(C, C);
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t l = 0; l < 7; ++l) xp(s * C + c, l) = x(s * C + perm[c], l);
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j) pp(i, j) = prior(perm[i], perm[j]);
      for (std::size_t c = 0; c < b.region_proj.size(); ++c) b.region_proj[c].value = a.region_proj[perm[c]].value;
      if (with_adapter) {
        // The gate MLP maps a prior row to a gate row, so its input columns and output rows follow the regions.
        auto* ga = a.adapter();
        auto* gb = b.adapter();
        for (std::size_t k = 0; k < C; ++k)
          for (std::size_t j = 0; j < C; ++j) {
            gb->gate_hidden.value(k, j) = ga->gate_hidden.value(k, perm[j]);
            gb->gate_out.value(k, j) = ga->gate_out.value(perm[k], j);
          }
        for (std::size_t k = 0; k < C; ++k) gb->gate_out_b.value(0, k) = ga->gate_out_b.value(0, perm[k]);
      }
      Tape ta, tb;
      const Matrix ya = a.predict(ta, x, &prior).value();
      const Matrix yb = b.predict(tb, xp, &pp).value();
      double diff = 0.0;
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t t = 0; t < 3; ++t) diff = std::max(diff, std::abs(yb(s * C + c, t) - ya(s * C + perm[c], t)));
      if (with_adapter) {
        // Region sums are taken in a different order, so agreement is to rounding.
        CHECK(diff < 1e-12);
      } else {
        CHECK(diff == 0.0);
      }
    }
  }
}

TEST_CASE("eval forward is deterministic") {
  std::mt19937_64 rng(11);
  ModelConfig cfg = small_model(BackboneKind::full_attention, 3);
  cfg.patch.dropout = 0.2;
  Forecaster m(cfg, 11);
  const Matrix x = test::gaussian_matrix(9, 7, rng);
  const Matrix prior = test::random_matrix(3, 3, rng, 0.0, 1.0);
  Tape t0;
  const Matrix first = m.predict(t0, x, &prior).value();
  for (int rep = 0; rep < 5; ++rep) {
    Tape t;
    CHECK(m.predict(t, x, &prior).value() == first);
  }
  Forecaster twin(cfg, 11);
  Tape t1;
  CHECK(twin.predict(t1, x, &prior).value() == first);
}

TEST_CASE("full model gradients") {
  int seeds = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const BackboneKind kind = seed % 3 == 0 ? BackboneKind::dlinear : seed % 3 == 1 ? BackboneKind::rnf : BackboneKind::full_attention;
    ModelConfig cfg = small_model(kind, 3);
    cfg.adapter.mode = seed % 4 == 3 ? adapter::AdapterMode::no_crm : adapter::AdapterMode::full;
    cfg.per_region_decoder = seed % 5 == 0;
    cfg.adapter.beta = 0.05;
    cfg.adapter.eta = 0.01;
    Forecaster m(cfg, seed);
    std::mt19937_64 rng(seed + 1000);
    const ForecastBatch batch = random_batch(2, 3, 7, 3, rng);
    const Matrix prior = test::random_matrix(3, 3, rng, 0.0, 1.0);
    auto ps = m.params();
    const double err = nd::grad_check([&](Tape& t) { return m.forward_loss(t, batch, &prior).total; }, ps,
                                      {.h = 1e-6, .max_coords = 6, .seed = seed});
    CHECK(err < 1e-4);
    seeds += err < 1e-4;
  }
  CHECK(seeds == 20);
}

TEST_CASE("errors") {
  std::mt19937_64 rng(12);
  Forecaster m(small_model(BackboneKind::rnf, 3), 12);
  ForecastBatch batch = random_batch(2, 3, 7, 3, rng);
  const Matrix prior = test::random_matrix(3, 3, rng, 0.0, 1.0);
  Tape tape;
  CHECK_THROWS_AS(m.forward_loss(tape, batch, nullptr), ConfigError);
  const Matrix wrong(4, 4);
  CHECK_THROWS_AS(m.forward_loss(tape, batch, &wrong), ConfigError);
  CHECK_THROWS_AS(m.predict(tape, Matrix(5, 7), &prior), ShapeError);
  batch.inputs(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(m.forward_loss(tape, batch, &prior), NonFiniteLossError);

  ModelConfig bad = small_model(BackboneKind::dlinear, 3);
  bad.ma_kernel = 4;
  CHECK_THROWS_AS(Forecaster(bad, 0), ConfigError);
  CHECK_THROWS_AS(forecast::parse_backbone("lstm"), ConfigError);
}

TEST_CASE("parameter JSON round trip") {
  std::mt19937_64 rng(13);
  Forecaster a(small_model(BackboneKind::full_attention, 3), 13);
  Forecaster b(small_model(BackboneKind::full_attention, 3), 99);
  b.params_from_json(nlohmann::json::parse(a.params_to_json().dump()));
  const Matrix x = test::gaussian_matrix(6, 7, rng);
  const Matrix prior = test::random_matrix(3, 3, rng, 0.0, 1.0);
  Tape ta, tb;
  CHECK(a.predict(ta, x, &prior).value() == b.predict(tb, x, &prior).value());

  auto j = a.params_to_json();
  j.erase("decoder.b");
  CHECK_THROWS_AS(b.params_from_json(j), ConfigError);
  Forecaster wide(small_model(BackboneKind::full_attention, 4), 0);
  CHECK_THROWS(wide.params_from_json(a.params_to_json()));
}
