#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "mica/backbone.hpp"
#include "mica/errors.hpp"
#include "mica/grad_check.hpp"
#include "support.hpp"

using namespace mica;
using backbone::BlockMode;
using backbone::PatchConfig;
using backbone::TemporalEncoder;
using nd::Matrix;
using nd::Tape;

namespace {

std::size_t total_size(const std::vector<nd::Param*>& ps) {
  std::size_t n = 0;
  for (auto* p : ps) n += p->size();
  return n;
}

// Row-wise LN with unit gain and zero bias.
Matrix ln_rows(const Matrix& x, double eps) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mu = 0.0;
    for (double v : x.row(r)) mu += v;
    mu /= static_cast<double>(x.cols());
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mu) / std::sqrt(var + eps);
  }
  return out;
}

Matrix encode_eval(TemporalEncoder& enc, const Matrix& x) {
  Tape tape;
  return enc.encode(tape, tape.constant(x)).value();
}

PatchConfig small_cfg(BlockMode mode) {
  PatchConfig cfg;
  cfg.lookback = 7;
  cfg.patch_len = 4;
  cfg.stride = 2;
  cfg.d_model = 6;
  cfg.n_heads = 2;
  cfg.n_blocks = 2;
  cfg.d_ff = 5;
  cfg.mode = mode;
  return cfg;
}

}  // namespace

TEST_CASE("moving average and decomposition") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const auto d = backbone::decompose(x, 3);
  const std::vector<double> expect{4.0 / 3, 2, 3, 4, 14.0 / 3};
  for (std::size_t t = 0; t < 5; ++t) CHECK(std::abs(d.trend[t] - expect[t]) < 1e-14);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (std::size_t k : {1, 3, 5, 7}) {
    std::vector<double> v(7);
    for (double& a : v) a = 10.0 * n(rng);
    const auto dd = backbone::decompose(v, k);
    for (std::size_t t = 0; t < 7; ++t) CHECK(std::abs(dd.trend[t] + dd.seasonal[t] - v[t]) < 1e-12);
  }
  const std::vector<double> c(7, 2.5);
  const auto dc = backbone::decompose(c, 3);
  for (std::size_t t = 0; t < 7; ++t) {
    CHECK(std::abs(dc.trend[t] - 2.5) < 1e-15);
    CHECK(std::abs(dc.seasonal[t]) < 1e-15);
  }

  CHECK_THROWS_AS(backbone::moving_average_matrix(7, 4), ConfigError);
  CHECK_THROWS_AS(backbone::moving_average_matrix(7, 9), ConfigError);
  CHECK_THROWS_AS(backbone::DLinear(7, 3, 2, 0), ConfigError);
}

TEST_CASE("dlinear on a constant series") {
  backbone::DLinear m(7, 4, 3, 0);
  m.w_trend.value = Matrix(4, 7, 1.0 / 7.0);
  Tape tape;
  const Matrix x(3, 7, 1.75);
  const Matrix y = m.forward(tape, tape.constant(x)).value();
  REQUIRE(y.rows() == 3);
  REQUIRE(y.cols() == 4);
  for (double v : y.data()) CHECK(std::abs(v - 1.75) < 1e-12);
  CHECK(m.parameter_count() == total_size(m.params()));
  CHECK(backbone::DLinear::parameter_count(7, 14) == 2 * (14 * 7 + 14));
}

TEST_CASE("dlinear gradients") {
  backbone::DLinear m(7, 5, 3, 4);
  std::mt19937_64 rng(4);
  const Matrix x = test::gaussian_matrix(6, 7, rng);
  const Matrix target = test::gaussian_matrix(6, 5, rng);
  auto ps = m.params();
  const double err = nd::grad_check(
      [&](Tape& t) { return nd::mse(m.forward(t, t.constant(x)), target); }, ps);
  CHECK(err < 1e-6);
}

TEST_CASE("patch geometry and config validation") {
  PatchConfig cfg;
  cfg.lookback = 7;
  cfg.patch_len = 4;
  cfg.stride = 3;
  CHECK(cfg.num_patches() == 2);
  cfg.stride = 2;
  CHECK(cfg.num_patches() == 2);
  cfg.stride = 1;
  CHECK(cfg.num_patches() == 4);

  Tape tape;
  Matrix x(1, 7);
  std::iota(x.data().begin(), x.data().end(), 0.0);
  const Matrix p = nd::unfold_patches(tape.constant(x), 4, 3).value();
  CHECK(p == Matrix::from_rows({{0, 1, 2, 3}, {3, 4, 5, 6}}));

  PatchConfig bad;
  bad.patch_len = 8;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = PatchConfig{};
  bad.stride = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = PatchConfig{};
  bad.d_model = 15;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = PatchConfig{};
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(PatchConfig{}.validate());
}

TEST_CASE("zero input embeds to positional table plus bias") {
  TemporalEncoder enc(small_cfg(BlockMode::rnf), 3);
  std::mt19937_64 rng(3);
  enc.b_patch.value = test::random_matrix(1, 6, rng);
  Tape tape;
  const Matrix e = enc.patch_embed(tape, tape.constant(Matrix(3, 7))).value();
  REQUIRE(e.rows() == 3 * 2);
  for (std::size_t r = 0; r < e.rows(); ++r)
    for (std::size_t c = 0; c < 6; ++c)
      CHECK(e(r, c) == enc.positional.value(r % 2, c) + enc.b_patch.value(0, c));
}

TEST_CASE("single-token attention returns the projected values") {
  PatchConfig cfg = small_cfg(BlockMode::full_attention);
  cfg.lookback = 4;
  cfg.patch_len = 4;
  REQUIRE(cfg.num_patches() == 1);
  TemporalEncoder enc(cfg, 8);
  std::mt19937_64 rng(8);
  const Matrix e = test::gaussian_matrix(3, 6, rng);
  Tape tape;
  Matrix weights;
  const Matrix out = enc.multi_head_attention(tape, tape.constant(e), enc.blocks[0].attention[0], &weights).value();
  for (double w : weights.data()) CHECK(w == 1.0);

  auto& ap = enc.blocks[0].attention[0];
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<double> concat(6, 0.0);
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) concat[h * 3 + a] += e(r, h * 3 + b) * ap.wv[h].value(a, b);
    for (std::size_t k = 0; k < 6; ++k) {
      double o = 0.0;
      for (std::size_t m = 0; m < 6; ++m) o += concat[m] * ap.w_e.value(k, m);
      CHECK(std::abs(out(r, k) - o) < 1e-12);
    }
  }
}

TEST_CASE("two-token attention matches scalar arithmetic") {
  PatchConfig cfg;
  cfg.lookback = 3;
  cfg.patch_len = 2;
  cfg.stride = 1;
  cfg.d_model = 2;
  cfg.n_heads = 1;
  cfg.n_blocks = 1;
  cfg.d_ff = 2;
  cfg.mode = BlockMode::full_attention;
  TemporalEncoder enc(cfg, 0);
  auto& ap = enc.blocks[0].attention[0];
  ap.wq[0].value = Matrix::from_rows({{1.0, 0.5}, {-0.5, 2.0}});
  ap.wk[0].value = Matrix::from_rows({{0.3, -1.0}, {1.5, 0.2}});
  ap.wv[0].value = Matrix::from_rows({{2.0, 0.0}, {1.0, -1.0}});
  ap.w_e.value = Matrix::from_rows({{1.0, 1.0}, {0.0, 0.5}});
  const double e[2][2] = {{0.4, -1.2}, {0.9, 0.3}};

  double q[2][2], k[2][2], v[2][2];
  for (int t = 0; t < 2; ++t) {
    q[t][0] = 1.0 * e[t][0] + 0.5 * e[t][1];
    q[t][1] = -0.5 * e[t][0] + 2.0 * e[t][1];
    k[t][0] = 0.3 * e[t][0] - 1.0 * e[t][1];
    k[t][1] = 1.5 * e[t][0] + 0.2 * e[t][1];
    v[t][0] = 2.0 * e[t][0];
    v[t][1] = 1.0 * e[t][0] - 1.0 * e[t][1];
  }
  double expect[2][2];
  for (int t = 0; t < 2; ++t) {
    const double a0 = (q[t][0] * k[0][0] + q[t][1] * k[0][1]) / std::sqrt(2.0);
    const double a1 = (q[t][0] * k[1][0] + q[t][1] * k[1][1]) / std::sqrt(2.0);
    const double s0 = std::exp(a0) / (std::exp(a0) + std::exp(a1));
    const double s1 = 1.0 - s0;
    const double o0 = s0 * v[0][0] + s1 * v[1][0];
    const double o1 = s0 * v[0][1] + s1 * v[1][1];
    expect[t][0] = o0 + o1;
    expect[t][1] = 0.5 * o1;
  }
  Tape tape;
  Matrix weights;
  const Matrix out = enc.multi_head_attention(tape, tape.constant(Matrix::from_rows({{e[0][0], e[0][1]}, {e[1][0], e[1][1]}})), ap, &weights).value();
  for (int t = 0; t < 2; ++t)
    for (int c = 0; c < 2; ++c) CHECK(std::abs(out(t, c) - expect[t][c]) < 1e-10);
  for (std::size_t r = 0; r < weights.rows(); ++r) CHECK(std::abs(weights(r, 0) + weights(r, 1) - 1.0) < 1e-12);
}

TEST_CASE("attention rows are stochastic") {
  PatchConfig cfg = small_cfg(BlockMode::full_attention);
  cfg.lookback = 14;
  TemporalEncoder enc(cfg, 2);
  std::mt19937_64 rng(2);
  Tape tape;
  Matrix weights;
  enc.multi_head_attention(tape, tape.constant(test::gaussian_matrix(5 * cfg.num_patches(), 6, rng) * 4.0),
                           enc.blocks[0].attention[0], &weights);
  REQUIRE(weights.rows() == 2 * 5 * cfg.num_patches());
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    double s = 0.0;
    for (double w : weights.row(r)) {
      CHECK(w >= 0.0);
      s += w;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("rnf block with a zeroed feedforward path is LN(LN(E))") {
  TemporalEncoder enc(small_cfg(BlockMode::rnf), 6);
  enc.blocks[0].w_f.value.fill(0.0);
  enc.blocks[0].w_b.value.fill(0.0);
  std::mt19937_64 rng(6);
  const Matrix e = test::gaussian_matrix(8, 6, rng);
  Tape tape;
  const Matrix out = enc.block(tape, tape.constant(e), 0).value();
  CHECK(nd::max_abs_diff(out, ln_rows(ln_rows(e, 1e-5), 1e-5)) < 1e-12);

  // ffn_only collapses to LN(E) under the same zeroing.
  PatchConfig cfg = small_cfg(BlockMode::rnf);
  cfg.rnf_variant = backbone::RnfVariant::ffn_only;
  TemporalEncoder alt(cfg, 6);
  alt.blocks[0].w_f.value.fill(0.0);
  alt.blocks[0].w_b.value.fill(0.0);
  Tape t2;
  CHECK(nd::max_abs_diff(alt.block(t2, t2.constant(e), 0).value(), ln_rows(e, 1e-5)) < 1e-12);
}

TEST_CASE("full block with silent attention equals the rnf block") {
  TemporalEncoder full(small_cfg(BlockMode::full_attention), 12);
  TemporalEncoder rnf(small_cfg(BlockMode::rnf), 99);
  rnf.w_patch.value = full.w_patch.value;
  rnf.b_patch.value = full.b_patch.value;
  rnf.positional.value = full.positional.value;
  for (std::size_t b = 0; b < 2; ++b) {
    auto& ap = full.blocks[b].attention[0];
    for (auto* group : {&ap.wq, &ap.wk, &ap.wv})
      for (auto& p : *group) p.value.fill(0.0);
    ap.w_e.value.fill(0.0);
    rnf.blocks[b].w_f.value = full.blocks[b].w_f.value;
    rnf.blocks[b].w_b.value = full.blocks[b].w_b.value;
  }
  std::mt19937_64 rng(12);
  const Matrix x = test::gaussian_matrix(4, 7, rng);
  CHECK(encode_eval(full, x) == encode_eval(rnf, x));
}

TEST_CASE("encoder shapes, empty stack and determinism") {
  PatchConfig cfg = small_cfg(BlockMode::full_attention);
  std::mt19937_64 rng(5);
  const Matrix x = test::gaussian_matrix(5, 7, rng);
  TemporalEncoder enc(cfg, 5);
  const Matrix first = encode_eval(enc, x);
  CHECK(first.rows() == 5 * cfg.num_patches());
  CHECK(first.cols() == cfg.d_model);
  for (int rep = 0; rep < 5; ++rep) CHECK(encode_eval(enc, x) == first);

  cfg.n_blocks = 0;
  TemporalEncoder bare(cfg, 5);
  Tape tape;
  const Matrix pe = bare.patch_embed(tape, tape.constant(x)).value();
  CHECK(encode_eval(bare, x) == pe);
}

TEST_CASE("channel independence") {
  for (BlockMode mode : {BlockMode::rnf, BlockMode::full_attention}) {
    TemporalEncoder enc(small_cfg(mode), 17);
    std::mt19937_64 rng(17);
    const Matrix x = test::gaussian_matrix(5, 7, rng);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Matrix xp(5, 7);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 7; ++c) xp(r, c) = x(perm[r], c);
    const Matrix a = encode_eval(enc, x);
    const Matrix b = encode_eval(enc, xp);
    const std::size_t n = 2;
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < 6; ++c) CHECK(b(r * n + p, c) == a(perm[r] * n + p, c));
  }
}

TEST_CASE("parameter counts") {
  for (std::size_t heads : {1, 2, 3}) {
    for (std::size_t blocks : {0, 1, 3}) {
      PatchConfig cfg = small_cfg(BlockMode::full_attention);
      cfg.n_heads = heads;
      cfg.n_blocks = blocks;
      TemporalEncoder full(cfg, 0);
      cfg.mode = BlockMode::rnf;
      TemporalEncoder rnf(cfg, 0);
      CHECK(full.parameter_count() == total_size(full.params()));
      CHECK(rnf.parameter_count() == total_size(rnf.params()));
      const std::size_t dh = cfg.d_model / heads;
      CHECK(full.parameter_count() - rnf.parameter_count() ==
            blocks * (3 * dh * dh * heads + cfg.d_model * cfg.d_model));
      if (blocks > 0) CHECK(rnf.parameter_count() < full.parameter_count());
    }
  }
}

TEST_CASE("encoder gradients") {
  for (BlockMode mode : {BlockMode::rnf, BlockMode::full_attention}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      PatchConfig cfg = small_cfg(mode);
      TemporalEncoder enc(cfg, seed);
      std::mt19937_64 rng(seed + 100);
      for (auto* p : enc.params()) {
        if (p->name.find("ln") != std::string::npos) p->value = test::random_matrix(1, p->value.cols(), rng, 0.5, 1.5);
      }
      const Matrix x = test::gaussian_matrix(3, 7, rng);
      const Matrix proj = test::gaussian_matrix(3 * cfg.num_patches(), cfg.d_model, rng);
      auto ps = enc.params();
      const double err = nd::grad_check(
          [&](Tape& t) { return nd::sum(nd::mul(enc.encode(t, t.constant(x)), t.constant(proj))); }, ps,
          {.h = 1e-6, .max_coords = 12, .seed = seed});
      CHECK(err < 1e-5);
    }
  }
  TemporalEncoder enc(small_cfg(BlockMode::rnf), 1);
  std::mt19937_64 rng(1);
  const Matrix x = test::gaussian_matrix(2, 7, rng);
  std::vector<nd::Param*> ps{&enc.w_patch, &enc.b_patch, &enc.positional};
  const double err = nd::grad_check(
      [&](Tape& t) { return nd::sum(nd::square(enc.patch_embed(t, t.constant(x)))); }, ps);
  CHECK(err < 1e-5);
}

TEST_CASE("dropout is active only while training") {
  PatchConfig cfg = small_cfg(BlockMode::full_attention);
  cfg.dropout = 0.5;
  TemporalEncoder enc(cfg, 0);
  std::mt19937_64 rng(0);
  const Matrix x = test::gaussian_matrix(3, 7, rng);
  Tape a(true, 1), b(true, 1), c(true, 2);
  const Matrix ya = enc.encode(a, a.constant(x)).value();
  CHECK(enc.encode(b, b.constant(x)).value() == ya);
  CHECK(enc.encode(c, c.constant(x)).value() != ya);
  CHECK(encode_eval(enc, x) != ya);
}
