#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "mica/matrix.hpp"
#include "mica/tape.hpp"

namespace mica::adapter {

enum class AdapterMode { full, no_pgp, no_crm };

// How prior gating combines with residual mixing in the full model.
//   unified:    one layer, Z' = (G ⊙ S)Z inside the gated residual
//   sequential: a CRM layer on S followed by a PGP layer on G ⊙ S
enum class Composition { unified, sequential };

AdapterMode parse_adapter_mode(std::string_view name);
std::string_view adapter_mode_name(AdapterMode m);

struct AdapterConfig {
  bool enabled = true;
  AdapterMode mode = AdapterMode::full;
  Composition composition = Composition::unified;
  std::size_t depth = 1;
  double theta_init = -2.0;
  double beta = 1e-3;  // weight of λ²
  double eta = 1e-4;   // weight of ‖G‖₁
  double ln_eps = 1e-5;
};

/// Parameters of one gated residual mixing layer.
struct MixerParams {
  nd::Param w_o;    // d_model×d_model
  nd::Param theta;  // 1×1, λ = softplus(θ)
  nd::Param ln_gain, ln_bias;
  bool gated = true;
};

/// Mixes per-region spatial features through a frozen C×C prior.
class MicaAdapter {
 public:
  MicaAdapter(const AdapterConfig& cfg, std::size_t regions, std::size_t lookback,
              std::size_t d_model, std::uint64_t seed);

  const AdapterConfig& config() const { return cfg_; }
  std::size_t regions() const { return regions_; }

  struct Output {
    nd::Var z;         // (rows)×d_model
    nd::Var gate;      // C×C, invalid when no layer uses it
    nd::Var l_lambda;  // 1×1
    nd::Var l_sparse;  // 1×1
  };

  // x: (samples·C)×L, rows ordered sample-major. Returns Z0 = per-row x·W_s.
  nd::Var spatial_embed(nd::Tape& tape, nd::Var x);

  // G = sigmoid(MLP(S_p)), the MLP applied to each row of S_p.
  nd::Var compute_gate(nd::Tape& tape, nd::Var s_p);

  nd::Var lambda(nd::Tape& tape, std::size_t layer);

  // One mixing layer. `gate` may be invalid for no_pgp layers.
  nd::Var mix(nd::Tape& tape, nd::Var z, nd::Var s_p, nd::Var gate, std::size_t layer,
              AdapterMode mode);

  // Full adapter: embed, gate, D mixing layers, regularizers.
  Output forward(nd::Tape& tape, nd::Var x, const nd::Matrix& s_p);

  std::vector<nd::Param*> params();
  std::size_t parameter_count() const;

  nd::Param spatial_w;  // L×d_model
  nd::Param gate_hidden, gate_hidden_b, gate_out, gate_out_b;
  std::vector<MixerParams> layers;

 private:
  AdapterConfig cfg_;
  std::size_t regions_, lookback_, d_model_;
};

struct InfluenceBound {
  double lhs = 0.0;
  double rhs = 0.0;
};

/// Compares ‖F(Z + (λ S̄ Z) W_oᵀ) − F(Z)‖_F with L·λ·‖W_o‖₂·‖S̄‖₂·‖Z‖_F for a
/// linear downstream map F(Z) = Z·M (identity when M is absent), L = ‖M‖₂.
InfluenceBound influence_bound_check(const nd::Matrix& z, const nd::Matrix& s_bar,
                                     const nd::Matrix& w_o, double lambda,
                                     const std::optional<nd::Matrix>& downstream = std::nullopt);

}  // namespace mica::adapter
