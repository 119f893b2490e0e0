#include "mica/forecaster.hpp"

#include <cmath>
#include <string>

#include "mica/errors.hpp"
#include "mica/init.hpp"
#include "mica/ops.hpp"

namespace mica::forecast {

using nd::Matrix;
using nd::Param;
using nd::Tape;
using nd::Var;

BackboneKind parse_backbone(std::string_view name) {
  if (name == "rnf" || name == "ram") return BackboneKind::rnf;
  if (name == "dlinear") return BackboneKind::dlinear;
  if (name == "full_attention" || name == "patchtst") return BackboneKind::full_attention;
  throw ConfigError("unknown backbone '" + std::string(name) + "'");
}

std::string_view backbone_name(BackboneKind k) {
  switch (k) {
    case BackboneKind::rnf: return "rnf";
    case BackboneKind::dlinear: return "dlinear";
    case BackboneKind::full_attention: return "full_attention";
  }
  return "?";
}

std::size_t ModelConfig::model_width() const {
  return backbone == BackboneKind::dlinear ? d_model : patch.d_model;
}

void ModelConfig::validate() const {
  if (regions < 1) throw ConfigError("model: regions must be >= 1");
  if (lookback < 1) throw ConfigError("model: lookback must be >= 1");
  if (horizon < 1) throw ConfigError("model: horizon must be >= 1");
  if (backbone == BackboneKind::dlinear) {
    if (ma_kernel % 2 == 0 || ma_kernel > lookback) {
      throw ConfigError("model: moving-average kernel " + std::to_string(ma_kernel) +
                        " must be odd and <= lookback");
    }
    if (d_model < 1) throw ConfigError("model: d_model must be >= 1");
  } else {
    patch.validate();
    if (patch.lookback != lookback) throw ConfigError("model: patch lookback differs from lookback");
  }
}

Forecaster::Forecaster(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.backbone != BackboneKind::dlinear) {
    cfg_.patch.lookback = cfg_.lookback;
    cfg_.patch.mode = cfg_.backbone == BackboneKind::rnf ? backbone::BlockMode::rnf
                                                         : backbone::BlockMode::full_attention;
  }
  cfg_.validate();
  const std::size_t c = cfg_.regions;
  const std::size_t width = cfg_.model_width();

  if (cfg_.backbone == BackboneKind::dlinear) {
    dlinear_ = std::make_unique<backbone::DLinear>(cfg_.lookback, cfg_.horizon, cfg_.ma_kernel, seed);
  } else {
    encoder_ = std::make_unique<backbone::TemporalEncoder>(cfg_.patch, seed);
    const std::size_t flat = cfg_.patch.num_patches() * width;
    for (std::size_t r = 0; r < c; ++r) {
      region_proj.push_back(nd::make_weight("fusion.w_c" + std::to_string(r), width, flat, seed));
    }
  }
  if (cfg_.adapter.enabled) {
    adapter_ = std::make_unique<adapter::MicaAdapter>(cfg_.adapter, c, cfg_.lookback, width, seed);
  }
  const bool needs_decoder = cfg_.backbone != BackboneKind::dlinear || adapter_ != nullptr;
  if (needs_decoder) {
    const std::size_t decoders = cfg_.per_region_decoder ? c : 1;
    for (std::size_t r = 0; r < decoders; ++r) {
      decoder_w.push_back(
          nd::make_weight("decoder.w" + std::to_string(r), cfg_.horizon, width, seed));
    }
    decoder_b = Param("decoder.b", Matrix(decoders, cfg_.horizon));
  }
}

Var Forecaster::fuse(Tape& tape, Var encoded, Var spatial) {
  if (region_proj.empty()) throw ConfigError("fuse: model has no channel-wise projections");
  if (encoded.rows() % cfg_.regions != 0) {
    throw ConfigError("fuse: " + std::to_string(encoded.rows()) +
                      " encoder rows are not a multiple of " + std::to_string(cfg_.regions) +
                      " regions");
  }
  std::vector<Var> ws;
  ws.reserve(region_proj.size());
  for (Param& p : region_proj) ws.push_back(tape.param(p));
  Var projected = nd::grouped_affine(encoded, ws);
  if (!spatial.valid()) return projected;
  if (!spatial.value().same_shape(projected.value())) {
    throw ConfigError("fuse: spatial branch " + spatial.value().shape_str() +
                      " does not match temporal branch " + projected.value().shape_str());
  }
  return nd::add(projected, spatial);
}

Var Forecaster::decode(Tape& tape, Var fused) {
  if (decoder_w.empty()) throw ConfigError("decode: model has no decoder");
  Var out;
  if (decoder_w.size() == 1) {
    out = nd::affine(fused, tape.param(decoder_w.front()));
  } else {
    std::vector<Var> ws;
    for (Param& p : decoder_w) ws.push_back(tape.param(p));
    out = nd::grouped_affine(fused, ws);
  }
  return nd::add_tiled(out, tape.param(decoder_b));
}

Var Forecaster::predict(Tape& tape, const Matrix& inputs, const Matrix* prior) {
  return run(tape, inputs, prior, nullptr);
}

Var Forecaster::run(Tape& tape, const Matrix& inputs, const Matrix* prior,
                    adapter::MicaAdapter::Output* spatial_out) {
  if (inputs.cols() != cfg_.lookback || inputs.rows() % cfg_.regions != 0) {
    throw ShapeError("predict: inputs " + inputs.shape_str() + " do not match lookback " +
                     std::to_string(cfg_.lookback) + " over " + std::to_string(cfg_.regions) +
                     " regions");
  }
  if (adapter_ && prior == nullptr) throw ConfigError("predict: adapter enabled but no prior given");
  if (adapter_ && (prior->rows() != cfg_.regions || prior->cols() != cfg_.regions)) {
    throw ConfigError("predict: prior " + prior->shape_str() + " does not match " +
                      std::to_string(cfg_.regions) + " regions");
  }
  Var x = tape.constant(inputs);
  Var spatial;
  if (adapter_) {
    adapter::MicaAdapter::Output a = adapter_->forward(tape, x, *prior);
    spatial = a.z;
    if (spatial_out) *spatial_out = a;
  }

  if (dlinear_) {
    Var y = dlinear_->forward(tape, x);
    if (spatial.valid()) y = nd::add(y, decode(tape, spatial));
    return y;
  }
  Var encoded = encoder_->encode(tape, x);
  const std::size_t flat = cfg_.patch.num_patches() * cfg_.patch.d_model;
  encoded = nd::reshape(encoded, inputs.rows(), flat);
  return decode(tape, fuse(tape, encoded, spatial));
}

LossParts Forecaster::forward_loss(Tape& tape, const ForecastBatch& batch, const Matrix* prior) {
  LossParts parts;
  adapter::MicaAdapter::Output aux;
  parts.prediction = run(tape, batch.inputs, prior, &aux);
  parts.pred = nd::mse(parts.prediction, batch.targets);
  if (adapter_) {
    parts.lambda = aux.l_lambda;
    parts.sparse = aux.l_sparse;
    parts.total = nd::add(nd::add(parts.pred, parts.lambda), parts.sparse);
  } else {
    parts.lambda = tape.constant(Matrix(1, 1));
    parts.sparse = tape.constant(Matrix(1, 1));
    parts.total = parts.pred;
  }
  if (!std::isfinite(parts.total.scalar())) {
    throw NonFiniteLossError(0, "forward produced " + std::to_string(parts.total.scalar()));
  }
  return parts;
}

std::vector<Param*> Forecaster::params() {
  std::vector<Param*> out;
  if (dlinear_) out = dlinear_->params();
  if (encoder_) out = encoder_->params();
  for (Param& p : region_proj) out.push_back(&p);
  if (adapter_) {
    for (Param* p : adapter_->params()) out.push_back(p);
  }
  for (Param& p : decoder_w) out.push_back(&p);
  if (!decoder_w.empty()) out.push_back(&decoder_b);
  return out;
}

std::size_t Forecaster::parameter_count() const {
  std::size_t n = 0;
  for (Param* p : const_cast<Forecaster*>(this)->params()) n += p->size();
  return n;
}

void Forecaster::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

nlohmann::json Forecaster::params_to_json() const {
  nlohmann::json out = nlohmann::json::object();
  for (Param* p : const_cast<Forecaster*>(this)->params()) {
    out[p->name] = {{"rows", p->value.rows()},
                    {"cols", p->value.cols()},
                    {"data", p->value.storage()}};
  }
  return out;
}

void Forecaster::params_from_json(const nlohmann::json& j) {
  for (Param* p : params()) {
    if (!j.contains(p->name)) throw ConfigError("checkpoint is missing parameter '" + p->name + "'");
    const auto& e = j.at(p->name);
    const auto rows = e.at("rows").get<std::size_t>();
    const auto cols = e.at("cols").get<std::size_t>();
    if (rows != p->value.rows() || cols != p->value.cols()) {
      throw ShapeError("checkpoint parameter '" + p->name + "' has shape " + std::to_string(rows) +
                       "x" + std::to_string(cols) + ", model expects " + p->value.shape_str());
    }
    p->value = Matrix(rows, cols, e.at("data").get<std::vector<double>>());
    p->zero_grad();
  }
}

}  // namespace mica::forecast
