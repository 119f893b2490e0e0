#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mica/matrix.hpp"

namespace mica {

enum class Frequency { daily, weekly };

/// Time × regions panel; used for both case counts and mobility.
struct PanelSeries {
  std::vector<std::string> timestamps;
  // Day offsets (ISO dates) or raw integer stamps, strictly increasing and evenly spaced.
  std::vector<std::int64_t> time_index;
  std::vector<std::string> region_ids;
  nd::Matrix values;
  Frequency frequency = Frequency::daily;

  std::size_t length() const { return values.rows(); }
  std::size_t regions() const { return values.cols(); }

  // First `rows` time steps.
  PanelSeries head(std::size_t rows) const;
};

}  // namespace mica
