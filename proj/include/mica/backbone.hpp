#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "mica/matrix.hpp"
#include "mica/ops.hpp"
#include "mica/tape.hpp"

namespace mica::backbone {

enum class BlockMode { full_attention, rnf };

// How the RNF block treats the first residual stage once attention is removed.
//   literal:  R = LN(E)            (MHA term deleted, residual + LN kept)
//   ffn_only: R = E                (collapsed to a single LN + FFN block)
enum class RnfVariant { literal, ffn_only };

BlockMode parse_block_mode(std::string_view name);
std::string_view block_mode_name(BlockMode m);

struct PatchConfig {
  std::size_t lookback = 7;
  std::size_t patch_len = 4;
  std::size_t stride = 2;
  std::size_t d_model = 16;
  std::size_t n_heads = 2;
  std::size_t n_blocks = 2;
  std::size_t d_ff = 32;
  double dropout = 0.1;
  double ln_eps = 1e-5;
  BlockMode mode = BlockMode::rnf;
  RnfVariant rnf_variant = RnfVariant::literal;
  nd::Activation activation = nd::Activation::gelu;

  std::size_t num_patches() const;
  std::size_t d_head() const { return d_model / n_heads; }
  void validate() const;
};

/// Moving-average trend with edge replication; k odd.
nd::Matrix moving_average_matrix(std::size_t lookback, std::size_t kernel);

/// Trend / seasonal split of one series.
struct Decomposition {
  std::vector<double> trend;
  std::vector<double> seasonal;
};
Decomposition decompose(std::span<const double> x, std::size_t kernel);

/// Seasonal-trend linear forecaster: two L→T maps shared across channels.
class DLinear {
 public:
  DLinear(std::size_t lookback, std::size_t horizon, std::size_t kernel, std::uint64_t seed);

  // x: (rows)×L, one row per (sample, channel). Returns (rows)×T.
  nd::Var forward(nd::Tape& tape, nd::Var x);

  std::vector<nd::Param*> params();
  std::size_t parameter_count() const;
  static std::size_t parameter_count(std::size_t lookback, std::size_t horizon);

  nd::Param w_trend, b_trend, w_seasonal, b_seasonal;

 private:
  std::size_t lookback_, horizon_, kernel_;
  nd::Matrix avg_t_;  // transpose of the averaging operator
};

struct AttentionParams {
  std::vector<nd::Param> wq, wk, wv;  // one d_head×d_head matrix per head
  nd::Param w_e;                      // d_model×d_model output projection
};

struct BlockParams {
  std::vector<AttentionParams> attention;  // empty in rnf mode, else exactly one
  nd::Param ln1_gain, ln1_bias;
  nd::Param w_f;  // d_ff×d_model
  nd::Param w_b;  // d_model×d_ff
  nd::Param ln2_gain, ln2_bias;
};

/// Channel-independent patch embedding followed by a stack of attention or RNF blocks.
class TemporalEncoder {
 public:
  TemporalEncoder(const PatchConfig& cfg, std::uint64_t seed);

  const PatchConfig& config() const { return cfg_; }

  // x: (rows)×L -> (rows·N)×d_model
  nd::Var patch_embed(nd::Tape& tape, nd::Var x);
  // Multi-head attention over consecutive groups of N rows.
  nd::Var multi_head_attention(nd::Tape& tape, nd::Var e, AttentionParams& p,
                               nd::Matrix* weights = nullptr);
  nd::Var block(nd::Tape& tape, nd::Var e, std::size_t index);
  nd::Var encode(nd::Tape& tape, nd::Var x);

  std::vector<nd::Param*> params();
  std::size_t parameter_count() const;
  static std::size_t parameter_count(const PatchConfig& cfg);

  nd::Param w_patch, b_patch, positional;
  std::vector<BlockParams> blocks;

 private:
  PatchConfig cfg_;
};

}  // namespace mica::backbone
