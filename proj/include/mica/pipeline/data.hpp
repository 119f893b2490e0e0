#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mica/forecaster.hpp"
#include "mica/panel.hpp"
#include "mica/pipeline/config.hpp"

namespace mica::pipeline {

PanelSeries load_panel_csv(const std::string& path);
PanelSeries parse_panel_csv(const std::string& text, const std::string& source = "<memory>");
void write_panel_csv(const PanelSeries& panel, const std::string& path);
std::string format_panel_csv(const PanelSeries& panel);

// Reorders `other` to the region order of `reference`; throws ConfigError listing
// the symmetric difference when the region sets disagree.
PanelSeries align_regions(const PanelSeries& reference, const PanelSeries& other);

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

struct SplitRanges {
  IndexRange train;
  IndexRange val;
  IndexRange test;
};

// a = floor(train·n), b = floor((train+val)·n). Each range must fit one L+T window.
SplitRanges chronological_split(std::size_t n, const SplitSpec& spec, std::size_t lookback,
                                std::size_t horizon);

/// Per-region z-score fitted on the training rows only.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> std;

  static Normalizer fit(const nd::Matrix& values, IndexRange train);
  double forward(double v, std::size_t region) const { return (v - mean[region]) / std[region]; }
  double inverse(double z, std::size_t region) const { return z * std[region] + mean[region]; }
  nd::Matrix transform(const nd::Matrix& values) const;
  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);
};

std::size_t window_count(IndexRange range, std::size_t lookback, std::size_t horizon);

// Stride-1 windows fully inside `range`, chronological, cut into batches of at
// most batch_size samples. Values are normalized with `norm`.
std::vector<forecast::ForecastBatch> window_batches(const nd::Matrix& values, IndexRange range,
                                                    std::size_t lookback, std::size_t horizon,
                                                    std::size_t batch_size, const Normalizer& norm);

// Builds one batch from the windows starting at the given row offsets.
forecast::ForecastBatch assemble_batch(const nd::Matrix& normalized, const std::vector<std::size_t>& starts,
                                       std::size_t lookback, std::size_t horizon);

// Maps a (S·C)×T block of normalized values back to the raw scale.
nd::Matrix inverse_transform(const nd::Matrix& normalized, const Normalizer& norm);

}  // namespace mica::pipeline
