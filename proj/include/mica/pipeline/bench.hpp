#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mica/forecaster.hpp"
#include "mica/panel.hpp"
#include "mica/pipeline/config.hpp"
#include "mica/pipeline/train.hpp"

namespace mica::pipeline {

struct BenchGrid {
  RunConfig base;
  std::vector<forecast::BackboneKind> backbones{forecast::BackboneKind::rnf, forecast::BackboneKind::dlinear};
  std::vector<std::string> priors{"none", "identity", "pearson", "pcmci"};
  std::vector<std::size_t> horizons{7, 14, 21, 28};
  std::vector<std::uint64_t> seeds{0, 1, 2};

  std::size_t cells() const { return backbones.size() * priors.size() * horizons.size() * seeds.size(); }
};

// Config for one grid cell; prior "none" disables the adapter.
RunConfig cell_config(const RunConfig& base, forecast::BackboneKind backbone, const std::string& prior,
                      std::size_t horizon, std::uint64_t seed);

// Hardware concurrency (at least 1), capped by MICA_THREADS when set.
std::size_t worker_threads();

// One report per cell in grid order (backbone, prior, horizon, seed), whatever the
// scheduling. Priors are computed once per kind and shared.
std::vector<MetricsReport> run_bench(const BenchGrid& grid, const PanelSeries& cases, const PanelSeries* mobility,
                                     std::size_t threads);

struct AggregateRow {
  std::string backbone;
  std::string prior;
  std::size_t horizon = 0;
  std::string metric;  // "rmse" or "mae"
  double mean = 0.0;
  double std = 0.0;  // sample std over seeds; 0 for a single seed
  std::size_t n = 0;
};

std::vector<AggregateRow> aggregate(const std::vector<MetricsReport>& runs);

inline constexpr const char* kAggregateHeader = "backbone,prior,horizon,metric,mean,std,n";
std::string aggregate_csv(const std::vector<AggregateRow>& rows);
std::string runs_csv(const std::vector<MetricsReport>& runs);

}  // namespace mica::pipeline
