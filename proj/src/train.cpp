#include "mica/pipeline/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "mica/causal/pcmci.hpp"
#include "mica/causal/stationary.hpp"
#include "mica/errors.hpp"
#include "mica/init.hpp"

namespace mica::pipeline {

using nd::Matrix;
using nd::Param;
using nlohmann::json;

namespace {

constexpr std::size_t kEvalBatch = 256;

std::uint64_t step_seed(std::uint64_t seed, std::size_t step) {
  return nd::fnv1a("dropout:" + std::to_string(step), nd::fnv1a(std::to_string(seed)));
}

prior::PriorMatrix align_prior(const prior::PriorMatrix& p, const std::vector<std::string>& regions) {
  if (p.region_ids == regions) return p;
  if (p.region_ids.size() != regions.size()) {
    throw ConfigError("prior covers " + std::to_string(p.region_ids.size()) + " regions, panel has " +
                      std::to_string(regions.size()));
  }
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < p.region_ids.size(); ++i) pos[p.region_ids[i]] = i;
  prior::PriorMatrix out = p;
  out.region_ids = regions;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    auto it = pos.find(regions[i]);
    if (it == pos.end()) throw ConfigError("prior has no entry for region '" + regions[i] + "'");
    for (std::size_t j = 0; j < regions.size(); ++j) {
      auto jt = pos.find(regions[j]);
      if (jt == pos.end()) throw ConfigError("prior has no entry for region '" + regions[j] + "'");
      out.s(i, j) = p.s(it->second, jt->second);
    }
  }
  return out;
}

std::vector<Matrix> snapshot(const std::vector<Param*>& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const Param* p : params) out.push_back(p->value);
  return out;
}

void restore(const std::vector<Param*>& params, const std::vector<Matrix>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

Metrics compute_metrics(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) {
    throw ShapeError("metrics: prediction " + pred.shape_str() + " vs target " + target.shape_str());
  }
  if (pred.rows() == 0 || pred.cols() == 0) throw InsufficientDataError("metrics: empty test set");
  Metrics m;
  m.entries = pred.rows() * pred.cols();
  m.rmse_per_step.assign(pred.cols(), 0.0);
  m.mae_per_step.assign(pred.cols(), 0.0);
  double se = 0.0, ae = 0.0;
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    for (std::size_t k = 0; k < pred.cols(); ++k) {
      const double e = pred(r, k) - target(r, k);
      m.rmse_per_step[k] += e * e;
      m.mae_per_step[k] += std::abs(e);
      se += e * e;
      ae += std::abs(e);
    }
  }
  const auto rows = static_cast<double>(pred.rows());
  for (std::size_t k = 0; k < pred.cols(); ++k) {
    m.rmse_per_step[k] = std::sqrt(m.rmse_per_step[k] / rows);
    m.mae_per_step[k] /= rows;
  }
  m.rmse = std::sqrt(se / static_cast<double>(m.entries));
  m.mae = ae / static_cast<double>(m.entries);
  return m;
}

std::string metrics_csv_row(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.backbone << ',' << r.prior << ',' << r.horizon << ',' << r.seed << ',' << r.metrics.rmse << ','
     << r.metrics.mae << ',';
  os.precision(6);
  os << r.runtime_s << ',' << r.params;
  return os.str();
}

Adam::Adam(std::vector<Param*> params, const OptimizerConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const Param* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) continue;
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      w[k] -= cfg_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

std::string ModelState::prior_label() const {
  if (!config.model.adapter.enabled || !prior) return "none";
  return std::string(prior::prior_kind_name(prior->kind));
}

json ModelState::to_json() const {
  json j;
  j["config"] = pipeline::to_json(config);
  j["region_ids"] = region_ids;
  j["params"] = model->params_to_json();
  j["prior"] = prior ? prior->to_json() : json(nullptr);
  j["normalizer"] = normalizer.to_json();
  j["step"] = step;
  j["best_epoch"] = best_epoch;
  j["best_val"] = best_val;
  j["seed"] = config.seed;
  return j;
}

ModelState ModelState::from_json(const json& j) {
  ModelState s;
  s.config = run_config_from_json(j.at("config"));
  s.region_ids = j.at("region_ids").get<std::vector<std::string>>();
  s.config.model.regions = s.region_ids.size();
  s.model = std::make_unique<forecast::Forecaster>(s.config.model, s.config.seed);
  s.model->params_from_json(j.at("params"));
  if (!j.at("prior").is_null()) s.prior = prior::PriorMatrix::from_json(j.at("prior"));
  s.normalizer = Normalizer::from_json(j.at("normalizer"));
  s.step = j.value("step", std::size_t{0});
  s.best_epoch = j.value("best_epoch", std::size_t{0});
  s.best_val = j.value("best_val", 0.0);
  if (s.model->adapter_enabled() && !s.prior) throw ConfigError("checkpoint has an adapter but no prior");
  return s;
}

void ModelState::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out << to_json().dump(1) << '\n';
}

ModelState ModelState::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::optional<prior::PriorMatrix> resolve_prior(const RunConfig& cfg, const PanelSeries& cases,
                                                const PanelSeries* mobility) {
  if (!cfg.model.adapter.enabled) return std::nullopt;
  if (cfg.prior_kind == prior::PriorKind::identity) return prior::identity_prior(cases.region_ids);
  if (mobility == nullptr) {
    throw ConfigError(std::string(prior::prior_kind_name(cfg.prior_kind)) +
                      " prior requires a mobility panel");
  }
  const SplitRanges split =
      chronological_split(cases.length(), cfg.split, cfg.model.lookback, cfg.model.horizon);
  const PanelSeries aligned = align_regions(cases, *mobility);
  if (aligned.length() < split.train.end) {
    throw InsufficientDataError("mobility panel has " + std::to_string(aligned.length()) +
                                " rows but the training period ends at row " +
                                std::to_string(split.train.end));
  }
  const causal::StationaryPanel stationary = causal::preprocess_stationary(aligned, split.train.end);
  if (cfg.prior_kind == prior::PriorKind::pearson) return prior::pearson_prior(stationary);
  return prior::build_prior(causal::pcmci(stationary, cfg.pcmci), cfg.prior);
}

FitResult fit(const RunConfig& cfg, const PanelSeries& cases, const PanelSeries* mobility) {
  return fit_with_prior(cfg, cases, resolve_prior(cfg, cases, mobility));
}

Predictions predict_range(ModelState& state, const Matrix& values, IndexRange range) {
  const auto& mc = state.model->config();
  const auto batches =
      window_batches(values, range, mc.lookback, mc.horizon, kEvalBatch, state.normalizer);
  if (batches.empty()) throw InsufficientDataError("no complete windows in the evaluation range");
  std::size_t rows = 0;
  for (const auto& b : batches) rows += b.inputs.rows();
  Predictions out{Matrix(rows, mc.horizon), Matrix(rows, mc.horizon)};
  const Matrix* prior = state.prior ? &state.prior->s : nullptr;
  std::size_t offset = 0;
  for (const auto& b : batches) {
    nd::Tape tape(false);
    const Matrix& p = state.model->predict(tape, b.inputs, prior).value();
    std::copy(p.data().begin(), p.data().end(), out.pred.data().begin() + static_cast<std::ptrdiff_t>(offset));
    std::copy(b.targets.data().begin(), b.targets.data().end(),
              out.target.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.data().size();
  }
  return out;
}

MetricsReport evaluate(ModelState& state, const PanelSeries& cases, std::optional<IndexRange> range) {
  const auto t0 = std::chrono::steady_clock::now();
  if (cases.region_ids != state.region_ids) {
    throw ConfigError("evaluation panel regions do not match the checkpoint's regions");
  }
  const auto& cfg = state.config;
  IndexRange r = range ? *range
                       : chronological_split(cases.length(), cfg.split, cfg.model.lookback,
                                             cfg.model.horizon)
                             .test;
  Predictions p = predict_range(state, cases.values, r);
  if (cfg.raw_metrics) {
    p.pred = inverse_transform(p.pred, state.normalizer);
    p.target = inverse_transform(p.target, state.normalizer);
  }
  MetricsReport rep;
  rep.backbone = std::string(forecast::backbone_name(cfg.model.backbone));
  rep.prior = state.prior_label();
  rep.horizon = cfg.model.horizon;
  rep.seed = cfg.seed;
  rep.metrics = compute_metrics(p.pred, p.target);
  rep.params = state.model->parameter_count();
  rep.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

FitResult fit_with_prior(const RunConfig& cfg_in, const PanelSeries& cases,
                         std::optional<prior::PriorMatrix> prior) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = cfg_in;
  cfg.validate();
  cfg.model.regions = cases.regions();
  cfg.model.patch.lookback = cfg.model.lookback;
  const std::size_t L = cfg.model.lookback;
  const std::size_t T = cfg.model.horizon;
  const SplitRanges split = chronological_split(cases.length(), cfg.split, L, T);

  FitResult res;
  ModelState& st = res.state;
  st.config = cfg;
  st.region_ids = cases.region_ids;
  st.normalizer = Normalizer::fit(cases.values, split.train);
  st.model = std::make_unique<forecast::Forecaster>(cfg.model, cfg.seed);
  if (st.model->adapter_enabled()) {
    if (!prior) throw ConfigError("adapter enabled but no prior was supplied");
    st.prior = align_prior(*prior, cases.region_ids);
  }
  const Matrix* s_p = st.prior ? &st.prior->s : nullptr;

  const Matrix normalized = st.normalizer.transform(cases.values);
  const std::size_t n_train = window_count(split.train, L, T);
  const auto val_batches = window_batches(cases.values, split.val, L, T, kEvalBatch, st.normalizer);

  std::vector<Param*> params = st.model->params();
  Adam opt(params, cfg.optimizer);
  auto shuffle_rng = nd::stream_rng(cfg.seed, "shuffle");
  std::vector<std::size_t> order(n_train);

  std::vector<Matrix> best = snapshot(params);
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.optimizer.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), split.train.begin);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t first = 0; first < n_train; first += cfg.optimizer.batch_size) {
      const std::size_t last = std::min(n_train, first + cfg.optimizer.batch_size);
      std::vector<std::size_t> starts(order.begin() + static_cast<std::ptrdiff_t>(first),
                                      order.begin() + static_cast<std::ptrdiff_t>(last));
      const forecast::ForecastBatch batch = assemble_batch(normalized, starts, L, T);
      nd::Tape tape(true, step_seed(cfg.seed, step));
      st.model->zero_grad();
      forecast::LossParts loss;
      try {
        loss = st.model->forward_loss(tape, batch, s_p);
      } catch (const NonFiniteLossError& e) {
        throw NonFiniteLossError(step, e.what());
      }
      tape.backward(loss.total);
      opt.step();
      epoch_loss += loss.total.scalar();
      ++epoch_batches;
      ++step;
    }
    res.log.train_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(1, epoch_batches)));

    double val_sum = 0.0;
    std::size_t val_entries = 0;
    for (const auto& b : val_batches) {
      nd::Tape tape(false);
      const double l = st.model->forward_loss(tape, b, s_p).pred.scalar();
      val_sum += l * static_cast<double>(b.targets.data().size());
      val_entries += b.targets.data().size();
    }
    const double val = val_sum / static_cast<double>(val_entries);
    if (!std::isfinite(val)) throw NonFiniteLossError(step, "validation loss is not finite");
    res.log.val_loss.push_back(val);
    res.log.epochs = epoch + 1;
    if (val < best_val) {
      best_val = val;
      best = snapshot(params);
      st.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= cfg.optimizer.patience) {
      break;
    }
  }
  restore(params, best);
  st.model->zero_grad();
  st.step = step;
  st.best_val = std::isfinite(best_val) ? best_val : 0.0;

  res.test = evaluate(st, cases, split.test);
  res.test.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace mica::pipeline
