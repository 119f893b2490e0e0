#include "mica/causal/stationary.hpp"

#include <cmath>

#include "mica/errors.hpp"

namespace mica::causal {

StationaryPanel preprocess_stationary(const PanelSeries& raw, std::size_t train_end) {
  return preprocess_stationary(raw.values, raw.region_ids, train_end);
}

StationaryPanel preprocess_stationary(const nd::Matrix& raw,
                                      const std::vector<std::string>& region_ids,
                                      std::size_t train_end) {
  if (train_end < 3) {
    throw InsufficientDataError("preprocess_stationary: train_end must be at least 3, got " +
                                std::to_string(train_end));
  }
  if (train_end > raw.rows()) {
    throw InsufficientDataError("preprocess_stationary: train_end " + std::to_string(train_end) +
                                " exceeds panel length " + std::to_string(raw.rows()));
  }
  if (region_ids.size() != raw.cols()) {
    throw ConfigError("preprocess_stationary: " + std::to_string(region_ids.size()) +
                      " region ids for " + std::to_string(raw.cols()) + " columns");
  }
  const std::size_t n = train_end - 1;
  StationaryPanel out;
  out.data = nd::Matrix(n, raw.cols());
  out.region_ids = region_ids;
  out.source_begin = 0;
  out.source_end = train_end;
  for (std::size_t c = 0; c < raw.cols(); ++c) {
    double mu = 0.0;
    for (std::size_t u = 1; u < train_end; ++u) {
      const double d = raw(u, c) - raw(u - 1, c);
      out.data(u - 1, c) = d;
      mu += d;
    }
    mu /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t t = 0; t < n; ++t) ss += (out.data(t, c) - mu) * (out.data(t, c) - mu);
    const double sigma = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    if (!(sigma > kDegenerateSigma)) {
      throw DegenerateSeriesError("region '" + region_ids[c] +
                                  "' has a near-constant differenced series (sigma " +
                                  std::to_string(sigma) + ")");
    }
    for (std::size_t t = 0; t < n; ++t) out.data(t, c) = (out.data(t, c) - mu) / sigma;
  }
  return out;
}

}  // namespace mica::causal
