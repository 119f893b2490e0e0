#include "mica/backbone.hpp"

#include <algorithm>
#include <string>

#include "mica/errors.hpp"
#include "mica/init.hpp"

namespace mica::backbone {

using nd::Matrix;
using nd::Param;
using nd::Tape;
using nd::Var;

BlockMode parse_block_mode(std::string_view name) {
  if (name == "full_attention") return BlockMode::full_attention;
  if (name == "rnf") return BlockMode::rnf;
  throw ConfigError("unknown block mode '" + std::string(name) + "'");
}

std::string_view block_mode_name(BlockMode m) {
  return m == BlockMode::rnf ? "rnf" : "full_attention";
}

std::size_t PatchConfig::num_patches() const {
  if (patch_len == 0 || stride == 0 || patch_len > lookback) return 0;
  return (lookback - patch_len) / stride + 1;
}

void PatchConfig::validate() const {
  if (patch_len == 0 || patch_len > lookback) {
    throw ConfigError("patch_len " + std::to_string(patch_len) + " must lie in [1, lookback " +
                      std::to_string(lookback) + "]");
  }
  if (stride == 0) throw ConfigError("stride must be >= 1");
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (num_patches() < 1) throw ConfigError("patch configuration yields no patches");
  if (d_ff == 0) throw ConfigError("d_ff must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

Matrix moving_average_matrix(std::size_t lookback, std::size_t kernel) {
  if (kernel % 2 == 0 || kernel > lookback || kernel == 0) {
    throw ConfigError("moving-average kernel " + std::to_string(kernel) +
                      " must be odd and <= lookback " + std::to_string(lookback));
  }
  const long half = static_cast<long>(kernel / 2);
  const long last = static_cast<long>(lookback) - 1;
  Matrix m(lookback, lookback);
  for (long t = 0; t <= last; ++t) {
    for (long o = -half; o <= half; ++o) {
      const long src = std::clamp(t + o, 0L, last);
      m(static_cast<std::size_t>(t), static_cast<std::size_t>(src)) += 1.0 / static_cast<double>(kernel);
    }
  }
  return m;
}

Decomposition decompose(std::span<const double> x, std::size_t kernel) {
  const Matrix avg = moving_average_matrix(x.size(), kernel);
  Decomposition d;
  d.trend.assign(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t s = 0; s < x.size(); ++s) d.trend[t] += avg(t, s) * x[s];
  d.seasonal.resize(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) d.seasonal[t] = x[t] - d.trend[t];
  return d;
}

DLinear::DLinear(std::size_t lookback, std::size_t horizon, std::size_t kernel, std::uint64_t seed)
    : w_trend(nd::make_weight("dlinear.w_trend", horizon, lookback, seed)),
      b_trend("dlinear.b_trend", Matrix(1, horizon)),
      w_seasonal(nd::make_weight("dlinear.w_seasonal", horizon, lookback, seed)),
      b_seasonal("dlinear.b_seasonal", Matrix(1, horizon)),
      lookback_(lookback),
      horizon_(horizon),
      kernel_(kernel),
      avg_t_(moving_average_matrix(lookback, kernel).transpose()) {}

Var DLinear::forward(Tape& tape, Var x) {
  if (x.cols() != lookback_) {
    throw ShapeError("DLinear: expected windows of length " + std::to_string(lookback_) +
                     ", got " + x.value().shape_str());
  }
  Var trend = nd::matmul(x, tape.constant(avg_t_));
  Var seasonal = nd::sub(x, trend);
  Var yt = nd::affine(trend, tape.param(w_trend), tape.param(b_trend));
  Var ys = nd::affine(seasonal, tape.param(w_seasonal), tape.param(b_seasonal));
  return nd::add(yt, ys);
}

std::vector<Param*> DLinear::params() { return {&w_trend, &b_trend, &w_seasonal, &b_seasonal}; }

std::size_t DLinear::parameter_count() const { return parameter_count(lookback_, horizon_); }

std::size_t DLinear::parameter_count(std::size_t lookback, std::size_t horizon) {
  return 2 * (horizon * lookback + horizon);
}

TemporalEncoder::TemporalEncoder(const PatchConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  const std::size_t dh = cfg_.d_head();
  w_patch = nd::make_weight("encoder.w_patch", d, cfg_.patch_len, seed);
  b_patch = Param("encoder.b_patch", Matrix(1, d));
  {
    auto rng = nd::stream_rng(seed, "encoder.positional");
    positional = Param("encoder.positional", nd::uniform(cfg_.num_patches(), d, 0.02, rng));
  }
  for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
    const std::string pfx = "encoder.block" + std::to_string(b) + ".";
    BlockParams bp;
    if (cfg_.mode == BlockMode::full_attention) {
      AttentionParams ap;
      for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
        const std::string hp = pfx + "head" + std::to_string(h) + ".";
        ap.wq.push_back(nd::make_weight(hp + "w_q", dh, dh, seed));
        ap.wk.push_back(nd::make_weight(hp + "w_k", dh, dh, seed));
        ap.wv.push_back(nd::make_weight(hp + "w_v", dh, dh, seed));
      }
      ap.w_e = nd::make_weight(pfx + "w_e", d, d, seed);
      bp.attention.push_back(std::move(ap));
    }
    bp.ln1_gain = Param(pfx + "ln1.gain", Matrix(1, d, 1.0));
    bp.ln1_bias = Param(pfx + "ln1.bias", Matrix(1, d));
    bp.w_f = nd::make_weight(pfx + "w_f", cfg_.d_ff, d, seed);
    bp.w_b = nd::make_weight(pfx + "w_b", d, cfg_.d_ff, seed);
    bp.ln2_gain = Param(pfx + "ln2.gain", Matrix(1, d, 1.0));
    bp.ln2_bias = Param(pfx + "ln2.bias", Matrix(1, d));
    blocks.push_back(std::move(bp));
  }
}

Var TemporalEncoder::patch_embed(Tape& tape, Var x) {
  if (x.cols() != cfg_.lookback) {
    throw ShapeError("patch_embed: expected windows of length " + std::to_string(cfg_.lookback) +
                     ", got " + x.value().shape_str());
  }
  Var patches = nd::unfold_patches(x, cfg_.patch_len, cfg_.stride);
  Var e = nd::affine(patches, tape.param(w_patch), tape.param(b_patch));
  return nd::add_tiled(e, tape.param(positional));
}

Var TemporalEncoder::multi_head_attention(Tape& tape, Var e, AttentionParams& p,
                                          Matrix* weights) {
  const std::size_t dh = cfg_.d_head();
  const std::size_t n = cfg_.num_patches();
  std::vector<Var> heads;
  Matrix all_weights;
  for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
    Var eh = nd::slice_cols(e, h * dh, dh);
    Var q = nd::affine(eh, tape.param(p.wq[h]));
    Var k = nd::affine(eh, tape.param(p.wk[h]));
    Var v = nd::affine(eh, tape.param(p.wv[h]));
    Matrix w;
    heads.push_back(nd::grouped_attention(q, k, v, n, weights ? &w : nullptr));
    if (weights) {
      if (all_weights.empty()) {
        all_weights = w;
      } else {
        Matrix stacked(all_weights.rows() + w.rows(), w.cols());
        std::copy(all_weights.data().begin(), all_weights.data().end(), stacked.data().begin());
        std::copy(w.data().begin(), w.data().end(), stacked.data().begin() + all_weights.size());
        all_weights = std::move(stacked);
      }
    }
  }
  if (weights) *weights = std::move(all_weights);
  Var o = heads.size() == 1 ? heads.front() : nd::concat_cols(heads);
  return nd::affine(o, tape.param(p.w_e));
}

Var TemporalEncoder::block(Tape& tape, Var e, std::size_t index) {
  BlockParams& bp = blocks.at(index);
  Var r;
  if (cfg_.mode == BlockMode::full_attention) {
    Var att = multi_head_attention(tape, e, bp.attention.front());
    r = nd::layer_norm(nd::add(nd::dropout(att, cfg_.dropout), e), tape.param(bp.ln1_gain),
                       tape.param(bp.ln1_bias), cfg_.ln_eps);
  } else if (cfg_.rnf_variant == RnfVariant::literal) {
    r = nd::layer_norm(e, tape.param(bp.ln1_gain), tape.param(bp.ln1_bias), cfg_.ln_eps);
  } else {
    r = e;
  }
  Var hidden = nd::pointwise(nd::affine(r, tape.param(bp.w_f)), cfg_.activation);
  Var f = nd::affine(hidden, tape.param(bp.w_b));
  return nd::layer_norm(nd::add(nd::dropout(f, cfg_.dropout), r), tape.param(bp.ln2_gain),
                        tape.param(bp.ln2_bias), cfg_.ln_eps);
}

Var TemporalEncoder::encode(Tape& tape, Var x) {
  Var e = patch_embed(tape, x);
  for (std::size_t b = 0; b < blocks.size(); ++b) e = block(tape, e, b);
  return e;
}

std::vector<Param*> TemporalEncoder::params() {
  std::vector<Param*> out{&w_patch, &b_patch, &positional};
  for (BlockParams& bp : blocks) {
    for (AttentionParams& ap : bp.attention) {
      for (std::size_t h = 0; h < ap.wq.size(); ++h) {
        out.push_back(&ap.wq[h]);
        out.push_back(&ap.wk[h]);
        out.push_back(&ap.wv[h]);
      }
      out.push_back(&ap.w_e);
    }
    for (Param* p : {&bp.ln1_gain, &bp.ln1_bias, &bp.w_f, &bp.w_b, &bp.ln2_gain, &bp.ln2_bias})
      out.push_back(p);
  }
  return out;
}

std::size_t TemporalEncoder::parameter_count() const { return parameter_count(cfg_); }

std::size_t TemporalEncoder::parameter_count(const PatchConfig& cfg) {
  const std::size_t d = cfg.d_model;
  std::size_t total = d * cfg.patch_len + d + cfg.num_patches() * d;
  std::size_t per_block = 4 * d + 2 * d * cfg.d_ff;
  if (cfg.mode == BlockMode::full_attention) {
    per_block += 3 * cfg.n_heads * cfg.d_head() * cfg.d_head() + d * d;
  }
  return total + cfg.n_blocks * per_block;
}

}  // namespace mica::backbone
