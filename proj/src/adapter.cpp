#include "mica/adapter.hpp"

#include <algorithm>
#include <string>

#include "mica/errors.hpp"
#include "mica/init.hpp"
#include "mica/ops.hpp"
#include "mica/prior.hpp"

namespace mica::adapter {

using nd::Matrix;
using nd::Param;
using nd::Tape;
using nd::Var;

AdapterMode parse_adapter_mode(std::string_view name) {
  if (name == "full") return AdapterMode::full;
  if (name == "no_pgp") return AdapterMode::no_pgp;
  if (name == "no_crm") return AdapterMode::no_crm;
  throw ConfigError("unknown adapter mode '" + std::string(name) + "'");
}

std::string_view adapter_mode_name(AdapterMode m) {
  switch (m) {
    case AdapterMode::full: return "full";
    case AdapterMode::no_pgp: return "no_pgp";
    case AdapterMode::no_crm: return "no_crm";
  }
  return "?";
}

MicaAdapter::MicaAdapter(const AdapterConfig& cfg, std::size_t regions, std::size_t lookback,
                         std::size_t d_model, std::uint64_t seed)
    : cfg_(cfg), regions_(regions), lookback_(lookback), d_model_(d_model) {
  if (regions == 0 || lookback == 0 || d_model == 0) {
    throw ConfigError("adapter: regions, lookback and d_model must be positive");
  }
  if (cfg_.depth < 1) throw ConfigError("adapter: depth must be >= 1");
  if (cfg_.beta < 0.0 || cfg_.eta < 0.0) throw ConfigError("adapter: beta and eta must be >= 0");

  {
    auto rng = nd::stream_rng(seed, "adapter.spatial_w");
    spatial_w = Param("adapter.spatial_w", nd::glorot_uniform(lookback, d_model, lookback, d_model, rng));
  }
  gate_hidden = nd::make_weight("adapter.gate_hidden", regions, regions, seed);
  gate_hidden_b = Param("adapter.gate_hidden_b", Matrix(1, regions));
  gate_out = nd::make_weight("adapter.gate_out", regions, regions, seed);
  gate_out_b = Param("adapter.gate_out_b", Matrix(1, regions));

  const bool sequential =
      cfg_.mode == AdapterMode::full && cfg_.composition == Composition::sequential;
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    for (std::size_t sub = 0; sub < (sequential ? 2u : 1u); ++sub) {
      const std::string pfx = "adapter.layer" + std::to_string(layers.size()) + ".";
      MixerParams mp;
      mp.w_o = nd::make_weight(pfx + "w_o", d_model, d_model, seed);
      mp.theta = Param(pfx + "theta", Matrix(1, 1, cfg_.theta_init));
      mp.ln_gain = Param(pfx + "ln.gain", Matrix(1, d_model, 1.0));
      mp.ln_bias = Param(pfx + "ln.bias", Matrix(1, d_model));
      mp.gated = sequential ? sub == 1 : cfg_.mode != AdapterMode::no_pgp;
      layers.push_back(std::move(mp));
    }
  }
}

Var MicaAdapter::spatial_embed(Tape& tape, Var x) {
  if (x.cols() != lookback_ || x.rows() % regions_ != 0) {
    throw ConfigError("spatial_embed: window " + x.value().shape_str() +
                      " does not match lookback " + std::to_string(lookback_) + " over " +
                      std::to_string(regions_) + " regions");
  }
  return nd::matmul(x, tape.param(spatial_w));
}

Var MicaAdapter::compute_gate(Tape& tape, Var s_p) {
  if (s_p.rows() != regions_ || s_p.cols() != regions_) {
    throw ShapeError("compute_gate: prior " + s_p.value().shape_str() + " does not match " +
                     std::to_string(regions_) + " regions");
  }
  Var hidden = nd::pointwise(nd::affine(s_p, tape.param(gate_hidden), tape.param(gate_hidden_b)),
                             nd::Activation::gelu);
  Var logits = nd::affine(hidden, tape.param(gate_out), tape.param(gate_out_b));
  return nd::pointwise(logits, nd::Activation::sigmoid);
}

Var MicaAdapter::lambda(Tape& tape, std::size_t layer) {
  return nd::pointwise(tape.param(layers.at(layer).theta), nd::Activation::softplus);
}

Var MicaAdapter::mix(Tape& tape, Var z, Var s_p, Var gate, std::size_t layer, AdapterMode mode) {
  MixerParams& mp = layers.at(layer);
  Var prior = s_p;
  if (mode != AdapterMode::no_pgp) {
    if (!gate.valid()) throw ConfigError("mix: gated mode requires a gate matrix");
    prior = nd::mul(gate, s_p);
  }
  Var propagated = nd::block_left_mul(prior, z);
  Var pre;
  if (mode == AdapterMode::no_crm) {
    pre = nd::affine(propagated, tape.param(mp.w_o));
  } else {
    Var scaled = nd::scale_by(propagated, lambda(tape, layer));
    pre = nd::add(z, nd::affine(scaled, tape.param(mp.w_o)));
  }
  return nd::layer_norm(pre, tape.param(mp.ln_gain), tape.param(mp.ln_bias), cfg_.ln_eps);
}

MicaAdapter::Output MicaAdapter::forward(Tape& tape, Var x, const Matrix& s_p) {
  Output out;
  Var prior = tape.constant(s_p);
  Var z = spatial_embed(tape, x);
  const bool any_gated = std::any_of(layers.begin(), layers.end(),
                                     [](const MixerParams& m) { return m.gated; });
  if (any_gated) out.gate = compute_gate(tape, prior);

  Var lambda_sq_sum;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    AdapterMode mode = cfg_.mode;
    if (cfg_.mode == AdapterMode::full) mode = layers[l].gated ? AdapterMode::full : AdapterMode::no_pgp;
    z = mix(tape, z, prior, out.gate, l, mode);
    if (mode != AdapterMode::no_crm) {
      Var sq = nd::square(lambda(tape, l));
      lambda_sq_sum = lambda_sq_sum.valid() ? nd::add(lambda_sq_sum, sq) : sq;
    }
  }
  out.z = z;
  out.l_lambda = lambda_sq_sum.valid() ? nd::scale(lambda_sq_sum, cfg_.beta)
                                       : tape.constant(Matrix(1, 1));
  out.l_sparse = out.gate.valid() ? nd::scale(nd::abs_sum(out.gate), cfg_.eta)
                                  : tape.constant(Matrix(1, 1));
  return out;
}

std::vector<Param*> MicaAdapter::params() {
  std::vector<Param*> out{&spatial_w, &gate_hidden, &gate_hidden_b, &gate_out, &gate_out_b};
  for (MixerParams& mp : layers) {
    for (Param* p : {&mp.w_o, &mp.theta, &mp.ln_gain, &mp.ln_bias}) out.push_back(p);
  }
  return out;
}

std::size_t MicaAdapter::parameter_count() const {
  const std::size_t c = regions_;
  return lookback_ * d_model_ + 2 * (c * c + c) +
         layers.size() * (d_model_ * d_model_ + 1 + 2 * d_model_);
}

InfluenceBound influence_bound_check(const Matrix& z, const Matrix& s_bar, const Matrix& w_o,
                                     double lambda, const std::optional<Matrix>& downstream) {
  if (s_bar.rows() != z.rows() || s_bar.cols() != z.rows() || w_o.rows() != z.cols() ||
      w_o.cols() != z.cols()) {
    throw ShapeError("influence_bound_check: inconsistent shapes Z " + z.shape_str() + ", S " +
                     s_bar.shape_str() + ", W_o " + w_o.shape_str());
  }
  Matrix update = nd::matmul_bt(nd::matmul(s_bar, z) * lambda, w_o);
  Matrix z_tilde = z + update;
  double lipschitz = 1.0;
  Matrix delta;
  if (downstream) {
    lipschitz = prior::spectral_norm(*downstream, 20000, 1e-15);
    delta = nd::matmul(z_tilde, *downstream) - nd::matmul(z, *downstream);
  } else {
    delta = z_tilde - z;
  }
  InfluenceBound b;
  b.lhs = nd::frobenius_norm(delta);
  b.rhs = lipschitz * lambda * prior::spectral_norm(w_o, 20000, 1e-15) *
          prior::spectral_norm(s_bar, 20000, 1e-15) * nd::frobenius_norm(z);
  return b;
}

}  // namespace mica::adapter
