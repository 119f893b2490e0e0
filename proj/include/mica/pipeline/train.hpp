#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mica/forecaster.hpp"
#include "mica/panel.hpp"
#include "mica/pipeline/config.hpp"
#include "mica/pipeline/data.hpp"
#include "mica/prior.hpp"

namespace mica::pipeline {

struct Metrics {
  double rmse = 0.0;
  double mae = 0.0;
  std::vector<double> rmse_per_step;  // one entry per horizon step
  std::vector<double> mae_per_step;
  std::size_t entries = 0;
};

// Columns of pred/target are horizon steps; every row contributes.
Metrics compute_metrics(const nd::Matrix& pred, const nd::Matrix& target);

struct MetricsReport {
  std::string backbone;
  std::string prior;  // "none" when the adapter is off
  std::size_t horizon = 0;
  std::uint64_t seed = 0;
  Metrics metrics;
  double runtime_s = 0.0;
  std::size_t params = 0;
};

inline constexpr const char* kMetricsHeader = "backbone,prior,horizon,seed,rmse,mae,runtime_s,params";
std::string metrics_csv_row(const MetricsReport& r);

/// First-moment / second-moment adaptive optimizer with bias correction.
class Adam {
 public:
  Adam(std::vector<nd::Param*> params, const OptimizerConfig& cfg);
  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<nd::Param*> params_;
  std::vector<nd::Matrix> m_, v_;
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
};

/// A trained model plus everything needed to evaluate it on fresh data.
struct ModelState {
  RunConfig config;
  std::vector<std::string> region_ids;
  std::unique_ptr<forecast::Forecaster> model;
  std::optional<prior::PriorMatrix> prior;
  Normalizer normalizer;
  std::size_t step = 0;
  std::size_t best_epoch = 0;
  double best_val = 0.0;

  nlohmann::json to_json() const;
  static ModelState from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static ModelState load(const std::string& path);
  std::string prior_label() const;
};

struct TrainLog {
  std::vector<double> train_loss;  // mean total loss per epoch
  std::vector<double> val_loss;    // validation prediction loss per epoch
  std::size_t epochs = 0;
};

struct FitResult {
  ModelState state;
  MetricsReport test;
  TrainLog log;
};

// Builds the spatial prior the config asks for from training-period data only.
// Returns nothing when the adapter is disabled.
std::optional<prior::PriorMatrix> resolve_prior(const RunConfig& cfg, const PanelSeries& cases,
                                                const PanelSeries* mobility);

FitResult fit(const RunConfig& cfg, const PanelSeries& cases, const PanelSeries* mobility);
FitResult fit_with_prior(const RunConfig& cfg, const PanelSeries& cases,
                         std::optional<prior::PriorMatrix> prior);

// Predictions for the windows in `range`, stacked sample-major, on the normalized scale.
struct Predictions {
  nd::Matrix pred;
  nd::Matrix target;
};
Predictions predict_range(ModelState& state, const nd::Matrix& values, IndexRange range);

MetricsReport evaluate(ModelState& state, const PanelSeries& cases, std::optional<IndexRange> range = {});

}  // namespace mica::pipeline
