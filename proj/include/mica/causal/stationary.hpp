#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mica/matrix.hpp"
#include "mica/panel.hpp"

namespace mica::causal {

/// Differenced, per-column z-scored panel ready for conditional-independence testing.
struct StationaryPanel {
  nd::Matrix data;  // (rows used - 1) × C
  std::vector<std::string> region_ids;
  std::size_t source_begin = 0;
  std::size_t source_end = 0;  // exclusive; never beyond the caller's train_end

  std::size_t length() const { return data.rows(); }
  std::size_t regions() const { return data.cols(); }
};

inline constexpr double kDegenerateSigma = 1e-12;

/// First-order differencing followed by z-scoring (sample std, n-1) using raw
/// rows [0, train_end) only.
StationaryPanel preprocess_stationary(const PanelSeries& raw, std::size_t train_end);
StationaryPanel preprocess_stationary(const nd::Matrix& raw,
                                      const std::vector<std::string>& region_ids,
                                      std::size_t train_end);

}  // namespace mica::causal
