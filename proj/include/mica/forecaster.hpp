#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mica/adapter.hpp"
#include "mica/backbone.hpp"
#include "mica/matrix.hpp"
#include "mica/tape.hpp"

namespace mica::forecast {

enum class BackboneKind { rnf, dlinear, full_attention };

BackboneKind parse_backbone(std::string_view name);
std::string_view backbone_name(BackboneKind k);

struct ModelConfig {
  BackboneKind backbone = BackboneKind::rnf;
  std::size_t regions = 1;
  std::size_t lookback = 7;
  std::size_t horizon = 7;
  backbone::PatchConfig patch;  // lookback and mode are synced from the fields above
  std::size_t ma_kernel = 3;
  std::size_t d_model = 16;     // spatial branch width for dlinear
  adapter::AdapterConfig adapter;
  bool per_region_decoder = false;

  std::size_t model_width() const;
  void validate() const;
};

/// One mini-batch. Rows are ordered sample-major: row s·C + c is region c of sample s.
struct ForecastBatch {
  nd::Matrix inputs;   // (S·C)×L, normalized
  nd::Matrix targets;  // (S·C)×T, normalized
  std::size_t samples = 0;
};

struct LossParts {
  nd::Var prediction;  // (S·C)×T
  nd::Var total;
  nd::Var pred;
  nd::Var lambda;
  nd::Var sparse;
};

/// Temporal backbone plus optional spatial adapter, fused and decoded to T×C forecasts.
class Forecaster {
 public:
  Forecaster(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  bool adapter_enabled() const { return adapter_ != nullptr; }

  // Channel-wise projection of the flattened encoder output plus the spatial features.
  nd::Var fuse(nd::Tape& tape, nd::Var encoded, nd::Var spatial);
  nd::Var decode(nd::Tape& tape, nd::Var fused);

  // prior may be null only when the adapter is disabled.
  nd::Var predict(nd::Tape& tape, const nd::Matrix& inputs, const nd::Matrix* prior);
  LossParts forward_loss(nd::Tape& tape, const ForecastBatch& batch, const nd::Matrix* prior);

  std::vector<nd::Param*> params();
  std::size_t parameter_count() const;
  void zero_grad();

  backbone::DLinear* dlinear() { return dlinear_.get(); }
  backbone::TemporalEncoder* encoder() { return encoder_.get(); }
  adapter::MicaAdapter* adapter() { return adapter_.get(); }

  std::vector<nd::Param> region_proj;  // W_c: d_model × (N·d_model), one per region
  std::vector<nd::Param> decoder_w;    // T×d_model, one shared or one per region
  nd::Param decoder_b;                 // 1×T shared, or C×T per region

  nlohmann::json params_to_json() const;
  void params_from_json(const nlohmann::json& j);

 private:
  nd::Var run(nd::Tape& tape, const nd::Matrix& inputs, const nd::Matrix* prior,
              adapter::MicaAdapter::Output* spatial_out);

  ModelConfig cfg_;
  std::unique_ptr<backbone::DLinear> dlinear_;
  std::unique_ptr<backbone::TemporalEncoder> encoder_;
  std::unique_ptr<adapter::MicaAdapter> adapter_;
};

}  // namespace mica::forecast
